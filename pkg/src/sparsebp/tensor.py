"""Dense numeric containers and the matrix product everything else builds on.

Feature maps are plain ``numpy.ndarray`` values in row-major (C) order:
4-d ``(batch, channels, height, width)`` for images and gradients, 2-d for
columnized matrices.  The helpers here validate those conventions and wrap
the matrix product with explicit shape errors.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


def as_dtype(precision: int) -> np.dtype:
    """Map a precision in bits (32 or 64) to the numpy float dtype."""
    if precision == 32:
        return np.dtype(np.float32)
    if precision == 64:
        return np.dtype(np.float64)
    raise ValueError(f"precision must be 32 or 64, got {precision}")


def check_matrix(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Require a 2-d contiguous float array; returns it unchanged."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got shape {a.shape}")
    if a.dtype not in FLOAT_DTYPES:
        raise ShapeError(f"{name} must be float32/float64, got {a.dtype}")
    return np.ascontiguousarray(a)


def check_tensor4(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Require a 4-d (B, C, H, W) float array; returns it unchanged."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-d (B, C, H, W), got shape {x.shape}")
    if x.dtype not in FLOAT_DTYPES:
        raise ShapeError(f"{name} must be float32/float64, got {x.dtype}")
    return np.ascontiguousarray(x)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit dimension checking.

    Delegates to ``numpy.matmul`` (BLAS).  For fixed shapes, dtypes and
    thread count the result is reproducible run to run, which is what the
    training engine's determinism contract needs.
    """
    a = check_matrix(a, "left operand")
    b = check_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul dimension mismatch: left is {a.shape}, right is {b.shape}"
        )
    return np.matmul(a, b)


def assert_all_finite(x: np.ndarray, name: str = "array") -> None:
    """Raise ShapeError if ``x`` contains NaN or Inf."""
    if not np.isfinite(x).all():
        raise ShapeError(f"{name} contains non-finite values")
