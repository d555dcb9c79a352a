"""Dense float64 tensors: numpy arrays with an enforced dtype and finiteness."""

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Input shapes do not satisfy a primitive's shape rule."""


class NonFiniteError(ValueError):
    """A NaN or Inf reached a place where only finite values are allowed."""


def as_tensor(data, what: str = "tensor") -> Tensor:
    """Copy `data` into a contiguous float64 array, rejecting NaN/Inf."""
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim > 0 and 0 in arr.shape:
        raise ShapeError(f"{what}: every dimension must be positive, got shape {arr.shape}")
    check_finite(arr, what)
    return arr


def check_finite(arr: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(f"{what}: {bad} non-finite value(s) in array of shape {np.shape(arr)}")
