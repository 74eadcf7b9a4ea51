"""Input validation helpers in the spirit of sklearn's ``check_array``."""

from __future__ import annotations

import numpy as np


def check_array(x, name: str, *, ndim: int | None = None, shape=None,
                dtype=np.float64, finite: bool = True) -> np.ndarray:
    """Coerce ``x`` to a contiguous ndarray and validate its layout.

    ``shape`` entries set to ``None`` are unconstrained.  Returns the
    validated (possibly converted) array.
    """
    arr = np.ascontiguousarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name}: expected {ndim}-d array, got {arr.ndim}-d")
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(
                f"{name}: expected {len(shape)}-d array, got {arr.ndim}-d")
        for axis, want in enumerate(shape):
            if want is not None and arr.shape[axis] != want:
                raise ValueError(
                    f"{name}: expected size {want} on axis {axis}, "
                    f"got {arr.shape[axis]}")
    if finite and arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def check_non_negative(value: float, name: str) -> float:
    value = float(value)
    if not value >= 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value
