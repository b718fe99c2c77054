"""Layers for the desk-scale CNN: conv, batchnorm, activations, pooling,
fully connected, dropout.  Each layer caches what its backward needs during
forward; backward fills per-parameter gradients and returns the gradient
w.r.t. its input.
"""

from __future__ import annotations

import numpy as np

from .conv import ConvLayerSpec, conv_backward_dense, conv_forward, im2col, out_dim
from .exceptions import ShapeError
from .sparsify import SparsifyPolicy, sparse_conv_backward


class Param:
    """A trainable array and its current gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)


def kaiming_init(shape, fan_in: int, seed: int | None = None, dtype=np.float64,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Zero-mean normal draw with std sqrt(2 / fan_in), deterministic under
    ``seed`` (or an explicit generator)."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    if rng is None:
        rng = np.random.default_rng(seed)
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


class Layer:
    """Minimal layer interface; parameter-free layers inherit as-is."""

    name = "layer"

    def params(self) -> dict[str, Param]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that must survive a checkpoint round-trip."""
        return {}

    def set_buffer(self, key: str, value: np.ndarray) -> None:
        raise KeyError(key)

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2d(Layer):
    """Convolution whose backward can run in dense or channel-sparse form.

    The forward pass keeps the columnized input so the backward reuses it
    for both the weight-gradient product and, in sparse form, the shrunk
    products over retained channels only.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0, *, dtype=np.float64,
                 rng: np.random.Generator | None = None):
        fan_in = in_channels * kernel * kernel
        w = kaiming_init((out_channels, in_channels, kernel, kernel),
                         fan_in, dtype=dtype, rng=rng)
        self.weight = Param(w)
        self.bias = Param(np.zeros(out_channels, dtype=dtype))
        self.stride = stride
        self.padding = padding
        self.kernel = kernel
        self.in_channels = in_channels
        self.out_channels = out_channels
        self._x = None
        self._col_x = None
        self.last_mask = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def spec(self) -> ConvLayerSpec:
        return ConvLayerSpec(self.weight.value, self.bias.value,
                             self.stride, self.padding)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(
                f"{self.name}: input has {c} channels, expected {self.in_channels}"
            )
        return (
            self.out_channels,
            out_dim(h, self.kernel, self.stride, self.padding),
            out_dim(w, self.kernel, self.stride, self.padding),
        )

    def forward(self, x, training=True):
        self._x = x
        self._col_x = im2col(x, self.kernel, self.stride, self.padding)
        spec = self.spec()
        n = x.shape[0]
        h_out = out_dim(x.shape[2], self.kernel, self.stride, self.padding)
        w_out = out_dim(x.shape[3], self.kernel, self.stride, self.padding)
        y = self._col_x @ spec.col_weights().astype(x.dtype, copy=False)
        y += self.bias.value.astype(x.dtype, copy=False)
        return np.ascontiguousarray(
            y.reshape(n, h_out, w_out, self.out_channels).transpose(0, 3, 1, 2)
        )

    def backward(self, grad, policy: SparsifyPolicy | None = None):
        spec = self.spec()
        if policy is None:
            grads = conv_backward_dense(spec, self._x, grad, col_x=self._col_x)
            self.last_mask = None
        else:
            grads, mask = sparse_conv_backward(
                spec, self._x, grad, policy, col_x=self._col_x
            )
            self.last_mask = mask
        self.weight.grad = grads.grad_weights
        self.bias.grad = grads.grad_bias
        return grads.grad_input


class BatchNorm2d(Layer):
    """Per-channel batch normalization with running statistics.

    Normalization uses the biased batch variance; the running variance is
    updated with the unbiased estimate, and inference applies the frozen
    running statistics as a per-channel affine map.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 *, dtype=np.float64):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._xhat = None
        self._inv_std = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def set_buffer(self, key, value):
        if key == "running_mean":
            self.running_mean = value
        elif key == "running_var":
            self.running_var = value
        else:
            raise KeyError(key)

    def forward(self, x, training=True):
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"{self.name}: input has {x.shape[1]} channels, "
                f"expected {self.channels}"
            )
        g = self.gamma.value.reshape(1, -1, 1, 1)
        b = self.beta.value.reshape(1, -1, 1, 1)
        if not training:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            return g * (x - self.running_mean.reshape(1, -1, 1, 1)) \
                * inv.reshape(1, -1, 1, 1) + b

        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean.reshape(1, -1, 1, 1)) \
            * self._inv_std.reshape(1, -1, 1, 1)
        if m > 1:
            unbiased = var * (m / (m - 1))
        else:
            unbiased = var
        self.running_mean = (1 - self.momentum) * self.running_mean \
            + self.momentum * mean
        self.running_var = (1 - self.momentum) * self.running_var \
            + self.momentum * unbiased
        return g * self._xhat + b

    def backward(self, grad):
        self.beta.grad = grad.sum(axis=(0, 2, 3))
        self.gamma.grad = (grad * self._xhat).sum(axis=(0, 2, 3))
        g = self.gamma.value.reshape(1, -1, 1, 1)
        inv = self._inv_std.reshape(1, -1, 1, 1)
        grad_mean = grad.mean(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        proj = (grad * self._xhat).mean(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        return g * inv * (grad - grad_mean - self._xhat * proj)


class ReLU(Layer):
    def forward(self, x, training=True):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class _Pool2d(Layer):
    def __init__(self, kernel: int, stride: int | None = None):
        self.kernel = kernel
        self.stride = stride if stride is not None else kernel

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if h < self.kernel or w < self.kernel:
            raise ShapeError(
                f"{self.name}: spatial size {(h, w)} smaller than "
                f"pool kernel {self.kernel}"
            )
        return (
            c,
            (h - self.kernel) // self.stride + 1,
            (w - self.kernel) // self.stride + 1,
        )

    def _windows(self, x):
        n, c, h, w = x.shape
        k, s = self.kernel, self.stride
        h_out = (h - k) // s + 1
        w_out = (w - k) // s + 1
        cols = np.empty((n, c, h_out, w_out, k * k), dtype=x.dtype)
        for m in range(k):
            for j in range(k):
                cols[..., m * k + j] = x[:, :, m : m + s * h_out : s,
                                         j : j + s * w_out : s]
        return cols, (h_out, w_out)

    def _scatter(self, grad_cols, x_shape):
        n, c, h, w = x_shape
        k, s = self.kernel, self.stride
        h_out, w_out = grad_cols.shape[2], grad_cols.shape[3]
        gx = np.zeros(x_shape, dtype=grad_cols.dtype)
        for m in range(k):
            for j in range(k):
                gx[:, :, m : m + s * h_out : s, j : j + s * w_out : s] += \
                    grad_cols[..., m * k + j]
        return gx


class MaxPool2d(_Pool2d):
    """Max pooling; ties route the gradient to the first maximal position."""

    def forward(self, x, training=True):
        cols, _ = self._windows(x)
        self._x_shape = x.shape
        self._argmax = cols.argmax(axis=-1)
        return np.max(cols, axis=-1)

    def backward(self, grad):
        k = self.kernel
        grad_cols = np.zeros(grad.shape + (k * k,), dtype=grad.dtype)
        np.put_along_axis(grad_cols, self._argmax[..., None],
                          grad[..., None], axis=-1)
        return self._scatter(grad_cols, self._x_shape)


class AvgPool2d(_Pool2d):
    def forward(self, x, training=True):
        cols, _ = self._windows(x)
        self._x_shape = x.shape
        return cols.mean(axis=-1)

    def backward(self, grad):
        k = self.kernel
        share = grad / (k * k)
        grad_cols = np.repeat(share[..., None], k * k, axis=-1)
        return self._scatter(grad_cols, self._x_shape)


class Flatten(Layer):
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, *,
                 dtype=np.float64, rng: np.random.Generator | None = None):
        w = kaiming_init((out_features, in_features), in_features,
                         dtype=dtype, rng=rng)
        self.weight = Param(w)
        self.bias = Param(np.zeros(out_features, dtype=dtype))
        self.in_features = in_features
        self.out_features = out_features

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_features:
            raise ShapeError(
                f"{self.name}: expected flat input of {self.in_features} "
                f"features, got shape {in_shape}"
            )
        return (self.out_features,)

    def forward(self, x, training=True):
        self._x = x
        return x @ self.weight.value.T.astype(x.dtype, copy=False) \
            + self.bias.value.astype(x.dtype, copy=False)

    def backward(self, grad):
        self.weight.grad = grad.T @ self._x
        self.bias.grad = grad.sum(axis=0)
        return grad @ self.weight.value.astype(grad.dtype, copy=False)


class Dropout(Layer):
    """Inverted dropout: zero each element with probability ``rate`` during
    training and scale survivors by 1/(1-rate); identity at inference."""

    def __init__(self, rate: float, seed: int = 0):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._mask = None

    def reseed(self, seed: int) -> None:
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def forward(self, x, training=True):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self._rng.random(x.shape) >= self.rate).astype(x.dtype)
        return x * self._mask / x.dtype.type(keep)

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask / grad.dtype.type(1.0 - self.rate)


def dropout_forward(x: np.ndarray, rate: float, seed: int,
                    training: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """One-shot functional dropout returning (output, keep mask)."""
    layer = Dropout(rate, seed)
    y = layer.forward(x, training=training)
    mask = layer._mask if layer._mask is not None else np.ones_like(x)
    return y, mask
