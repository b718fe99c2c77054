"""Top-K gradient selection and the shrunk convolution backward.

The output gradient of a convolution layer is scored per unit (channel by
default): take absolute values, average over the remaining axes.  The top-K
units by that score keep their gradients; the rest are dropped, so the
columnized backward multiplies against a matrix with only K columns (or
rows) instead of all of them.  Dropped units receive exactly zero weight
and bias gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import floor

import numpy as np

from .conv import (
    ConvGradients,
    ConvLayerSpec,
    col2im,
    grad_y_to_cols,
    conv_backward_dense,
    im2col,
    out_dim,
)
from .exceptions import ShapeError
from .tensor import check_tensor4, matmul

MODES = ("channel", "height-width", "all", "random-channel")


@dataclass(frozen=True)
class SparsifyPolicy:
    """How to score and drop gradient units for one backward pass.

    ``drop_rate`` is the fraction of units whose gradients are discarded;
    it must stay below 1 so at least one unit survives.  ``seed`` is used
    only by the ``random-channel`` mode.
    """

    mode: str = "channel"
    drop_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError(f"drop_rate must be in [0, 1), got {self.drop_rate}")


@dataclass(frozen=True)
class ChannelMask:
    """Indices of the retained units along the sparsified axis."""

    retained: tuple[int, ...]
    total: int

    def __post_init__(self):
        if not 1 <= len(self.retained) <= self.total:
            raise ValueError(
                f"mask must retain between 1 and {self.total} units, "
                f"got {len(self.retained)}"
            )
        if list(self.retained) != sorted(set(self.retained)):
            raise ValueError("retained indices must be sorted and distinct")

    @property
    def dropped(self) -> tuple[int, ...]:
        kept = set(self.retained)
        return tuple(i for i in range(self.total) if i not in kept)

    def is_full(self) -> bool:
        return len(self.retained) == self.total


def channel_importance(grad_y: np.ndarray, mode: str = "channel") -> np.ndarray:
    """Per-unit importance: absolute values averaged spatially.

    mode "channel" scores each output channel (averaging over batch, height,
    width); "height-width" scores each spatial position (averaging over
    batch and channel); "all" scores each (channel, position) pair
    (averaging over batch only).
    """
    grad_y = check_tensor4(grad_y, "output gradient")
    if grad_y.size == 0:
        raise ShapeError("cannot score an empty gradient tensor")
    mag = np.abs(grad_y)
    if mode in ("channel", "random-channel"):
        return mag.mean(axis=(0, 2, 3))
    if mode == "height-width":
        return mag.mean(axis=(0, 1)).reshape(-1)
    if mode == "all":
        return mag.mean(axis=0).reshape(-1)
    raise ValueError(f"unknown importance mode {mode!r}")


def retained_count(total: int, drop_rate: float) -> int:
    """Units kept at a given drop rate: total - floor(drop_rate * total),
    never below 1."""
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError(f"drop_rate must be in [0, 1), got {drop_rate}")
    return max(1, total - floor(drop_rate * total))


def select_channels(
    importance: np.ndarray, k: int, policy: SparsifyPolicy | None = None
) -> ChannelMask:
    """Pick the K most important units (ties keep the lower index).

    Under a ``random-channel`` policy the importance values are ignored and
    K units are drawn uniformly without replacement from the policy seed.
    """
    importance = np.asarray(importance).reshape(-1)
    total = importance.shape[0]
    if not 1 <= k <= total:
        raise ValueError(f"k must be in [1, {total}], got {k}")
    if policy is not None and policy.mode == "random-channel":
        rng = np.random.default_rng(policy.seed)
        picked = rng.choice(total, size=k, replace=False)
        return ChannelMask(tuple(sorted(int(i) for i in picked)), total)
    # Stable argsort of descending importance keeps the lower index on ties.
    order = np.argsort(-importance, kind="stable")
    return ChannelMask(tuple(sorted(int(i) for i in order[:k])), total)


def _shrunk_channel_backward(
    layer: ConvLayerSpec,
    x: np.ndarray,
    grad_y: np.ndarray,
    mask: ChannelMask,
    col_x: np.ndarray,
) -> ConvGradients:
    """Backward using only the retained output-channel columns."""
    keep = np.fromiter(mask.retained, dtype=np.intp)
    col_gy = np.ascontiguousarray(grad_y_to_cols(grad_y)[:, keep])
    col_w = layer.col_weights().astype(grad_y.dtype, copy=False)

    grad_weights = np.zeros_like(layer.weights, dtype=grad_y.dtype)
    grad_w_cols = matmul(col_x.T, col_gy)  # (Cin*K*K, K')
    grad_weights[keep] = np.ascontiguousarray(grad_w_cols.T).reshape(
        len(keep), *layer.weights.shape[1:]
    )

    grad_bias = np.zeros(layer.out_channels, dtype=grad_y.dtype)
    grad_bias[keep] = grad_y[:, keep].sum(axis=(0, 2, 3))

    col_gx = matmul(col_gy, np.ascontiguousarray(col_w[:, keep]).T)
    grad_input = col2im(col_gx, x.shape, layer.kernel, layer.stride, layer.padding)
    return ConvGradients(grad_weights, grad_bias, grad_input)


def _shrunk_position_backward(
    layer: ConvLayerSpec,
    x: np.ndarray,
    grad_y: np.ndarray,
    mask: ChannelMask,
    col_x: np.ndarray,
) -> ConvGradients:
    """Backward using only the retained spatial-position rows."""
    n = grad_y.shape[0]
    positions = grad_y.shape[2] * grad_y.shape[3]
    keep_pos = np.fromiter(mask.retained, dtype=np.intp)
    # Row r of the column matrices is batch b = r // positions, position
    # r % positions; keep the selected positions for every batch element.
    rows = (np.arange(n)[:, None] * positions + keep_pos[None, :]).reshape(-1)

    col_gy = grad_y_to_cols(grad_y)
    col_gy_kept = np.ascontiguousarray(col_gy[rows])
    col_x_kept = np.ascontiguousarray(col_x[rows])
    col_w = layer.col_weights().astype(grad_y.dtype, copy=False)

    grad_w_cols = matmul(col_x_kept.T, col_gy_kept)
    grad_weights = np.ascontiguousarray(grad_w_cols.T).reshape(layer.weights.shape)
    grad_bias = col_gy_kept.sum(axis=0)

    col_gx = np.zeros((col_gy.shape[0], col_x.shape[1]), dtype=grad_y.dtype)
    col_gx[rows] = matmul(col_gy_kept, col_w.T)
    grad_input = col2im(col_gx, x.shape, layer.kernel, layer.stride, layer.padding)
    return ConvGradients(grad_weights, grad_bias, grad_input)


def sparse_conv_backward(
    layer: ConvLayerSpec,
    x: np.ndarray,
    grad_y: np.ndarray,
    policy: SparsifyPolicy,
    col_x: np.ndarray | None = None,
) -> tuple[ConvGradients, ChannelMask]:
    """Convolution backward that drops low-importance gradient units.

    Result equals :func:`conv_backward_dense` applied to ``grad_y`` with the
    dropped units zeroed; at drop rate 0 it *is* the dense backward.  Modes
    "channel"/"random-channel" shrink the column dimension of the matrix
    products; "height-width" shrinks the row dimension; "all" has no
    single-axis shrink and masks the gradient elementwise instead (it exists
    for sensitivity analysis, not for compute savings).
    """
    grad_y = check_tensor4(grad_y, "output gradient")
    h_out = out_dim(x.shape[2], layer.kernel, layer.stride, layer.padding)
    w_out = out_dim(x.shape[3], layer.kernel, layer.stride, layer.padding)

    if policy.mode in ("channel", "random-channel"):
        total = layer.out_channels
    elif policy.mode == "height-width":
        total = h_out * w_out
    else:
        total = layer.out_channels * h_out * w_out

    if policy.drop_rate == 0.0:
        grads = conv_backward_dense(layer, x, grad_y, col_x=col_x)
        return grads, ChannelMask(tuple(range(total)), total)

    importance = channel_importance(grad_y, policy.mode)
    k = retained_count(total, policy.drop_rate)
    mask = select_channels(importance, k, policy)
    if mask.is_full():
        grads = conv_backward_dense(layer, x, grad_y, col_x=col_x)
        return grads, mask

    if col_x is None:
        col_x = im2col(x, layer.kernel, layer.stride, layer.padding)

    if policy.mode in ("channel", "random-channel"):
        grads = _shrunk_channel_backward(layer, x, grad_y, mask, col_x)
    elif policy.mode == "height-width":
        grads = _shrunk_position_backward(layer, x, grad_y, mask, col_x)
    else:
        keep = np.zeros(total, dtype=bool)
        keep[list(mask.retained)] = True
        masked = grad_y * keep.reshape(1, layer.out_channels, h_out, w_out).astype(
            grad_y.dtype
        )
        grads = conv_backward_dense(layer, x, masked, col_x=col_x)
    return grads, mask


def zero_dropped_channels(grad_y: np.ndarray, mask: ChannelMask) -> np.ndarray:
    """Reference transform: zero the dropped output channels of ``grad_y``."""
    out = grad_y.copy()
    out[:, list(mask.dropped)] = 0
    return out
