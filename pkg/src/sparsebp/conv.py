"""Convolution forward/backward through the column transform.

A convolution unit (one kernel-sized window of the input) is stretched into
one matrix row; stacking all windows of all batch elements gives ``col_x``
of shape ``(B*Hout*Wout, Cin*K*K)``.  Flattening the filters the same way
gives ``col_w`` of shape ``(Cin*K*K, Cout)``, and the convolution becomes a
single matrix product.  The reverse transform scatters a column matrix back
onto the input grid, summing entries that came from the same position, which
makes it the exact adjoint of the forward transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError
from .tensor import check_tensor4, matmul


def out_dim(size: int, k: int, stride: int, pad: int) -> int:
    """Output size along one spatial axis; rejects non-integer geometry."""
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"invalid conv geometry: size={size}, kernel={k}, "
            f"stride={stride}, pad={pad} gives non-integer output"
        )
    out = span // stride + 1
    if out <= 0:
        raise ShapeError(f"conv output dimension must be positive, got {out}")
    return out


def im2col(x: np.ndarray, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Stretch every convolution window of ``x`` into a matrix row.

    Returns shape ``(B*Hout*Wout, Cin*K*K)``.  Row ``r`` holds the window at
    batch index ``r // (Hout*Wout)`` and output position ``(i, j)`` in row
    scan order; within a row, entries run channel-major, then kernel row,
    then kernel column.
    """
    x = check_tensor4(x, "im2col input")
    n, c, h, w = x.shape
    h_out = out_dim(h, k, stride, pad)
    w_out = out_dim(w, k, stride, pad)

    if pad > 0:
        x = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad)])
    cols = np.empty((n, h_out, w_out, c, k, k), dtype=x.dtype)
    for m in range(k):
        m_max = m + stride * h_out
        for nn in range(k):
            n_max = nn + stride * w_out
            cols[:, :, :, :, m, nn] = x[:, :, m:m_max:stride, nn:n_max:stride].transpose(0, 2, 3, 1)
    return cols.reshape(n * h_out * w_out, c * k * k)


def col2im(
    cols: np.ndarray,
    x_shape: tuple[int, int, int, int],
    k: int,
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter rows back, summing overlaps.

    Contributions that land on padding positions are discarded.
    """
    n, c, h, w = x_shape
    h_out = out_dim(h, k, stride, pad)
    w_out = out_dim(w, k, stride, pad)
    expect = (n * h_out * w_out, c * k * k)
    if cols.shape != expect:
        raise ShapeError(
            f"col2im expects shape {expect} for input shape {x_shape}, "
            f"got {cols.shape}"
        )

    cols = cols.reshape(n, h_out, w_out, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for m in range(k):
        m_max = m + stride * h_out
        for nn in range(k):
            n_max = nn + stride * w_out
            img[:, :, m:m_max:stride, nn:n_max:stride] += cols[:, :, :, :, m, nn]
    if pad > 0:
        img = img[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(img)


@dataclass
class ConvLayerSpec:
    """Weights, bias and hyperparameters of one convolution layer.

    ``weights`` has shape ``(Cout, Cin, K, K)``; ``bias`` has length Cout.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = check_tensor4(self.weights, "weights")
        self.bias = np.asarray(self.bias)
        if self.bias.ndim != 1 or self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"bias must have length {self.weights.shape[0]}, "
                f"got shape {self.bias.shape}"
            )
        if self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError("only square kernels are supported")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(
                f"stride must be >= 1 and padding >= 0, got "
                f"stride={self.stride}, padding={self.padding}"
            )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]

    def col_weights(self) -> np.ndarray:
        """Filters flattened to ``(Cin*K*K, Cout)``, same within-column order
        as the rows of :func:`im2col`."""
        cout = self.out_channels
        return self.weights.reshape(cout, -1).T


@dataclass
class ConvGradients:
    """Backward outputs for one convolution layer."""

    grad_weights: np.ndarray  # (Cout, Cin, K, K)
    grad_bias: np.ndarray  # (Cout,)
    grad_input: np.ndarray  # (B, Cin, Hin, Win)


def _check_forward_geometry(layer: ConvLayerSpec, x: np.ndarray) -> tuple[int, int]:
    if x.shape[1] != layer.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels, layer expects {layer.in_channels}"
        )
    h_out = out_dim(x.shape[2], layer.kernel, layer.stride, layer.padding)
    w_out = out_dim(x.shape[3], layer.kernel, layer.stride, layer.padding)
    return h_out, w_out


def conv_forward(layer: ConvLayerSpec, x: np.ndarray) -> np.ndarray:
    """Convolution via one matrix product: reshape(col_x @ col_w) + bias."""
    x = check_tensor4(x, "conv input")
    h_out, w_out = _check_forward_geometry(layer, x)
    n = x.shape[0]
    cols = im2col(x, layer.kernel, layer.stride, layer.padding)
    y = matmul(cols, layer.col_weights().astype(x.dtype, copy=False))
    y += layer.bias.astype(x.dtype, copy=False)
    return np.ascontiguousarray(
        y.reshape(n, h_out, w_out, layer.out_channels).transpose(0, 3, 1, 2)
    )


def grad_y_to_cols(grad_y: np.ndarray) -> np.ndarray:
    """Columnize an output gradient to ``(B*Hout*Wout, Cout)``."""
    n, cout, h_out, w_out = grad_y.shape
    return grad_y.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, cout)


def conv_backward_dense(
    layer: ConvLayerSpec,
    x: np.ndarray,
    grad_y: np.ndarray,
    col_x: np.ndarray | None = None,
) -> ConvGradients:
    """Dense gradients w.r.t. weights, bias and input.

    ``col_x`` may be passed to reuse the columnized input cached by a
    forward pass; it must equal ``im2col(x, ...)`` for this layer.
    """
    x = check_tensor4(x, "conv input")
    grad_y = check_tensor4(grad_y, "output gradient")
    h_out, w_out = _check_forward_geometry(layer, x)
    if grad_y.shape != (x.shape[0], layer.out_channels, h_out, w_out):
        raise ShapeError(
            f"output gradient shape {grad_y.shape} does not match forward "
            f"output {(x.shape[0], layer.out_channels, h_out, w_out)}"
        )

    if col_x is None:
        col_x = im2col(x, layer.kernel, layer.stride, layer.padding)
    col_gy = grad_y_to_cols(grad_y)

    grad_w_cols = matmul(col_x.T, col_gy)  # (Cin*K*K, Cout)
    grad_weights = np.ascontiguousarray(grad_w_cols.T).reshape(layer.weights.shape)
    grad_bias = grad_y.sum(axis=(0, 2, 3))
    col_gx = matmul(col_gy, layer.col_weights().astype(grad_y.dtype, copy=False).T)
    grad_input = col2im(col_gx, x.shape, layer.kernel, layer.stride, layer.padding)
    return ConvGradients(grad_weights, grad_bias, grad_input)
