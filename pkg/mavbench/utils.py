from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike

from .exceptions import ModelValidityError
from .models import Mat, Vec


def as_vector(value: ArrayLike, size: int, name: str) -> Vec:
    """float64 copy of `value`, rejecting wrong sizes and non-finite entries"""
    arr = np.array(value, dtype=np.float64).reshape(-1)
    if arr.size != size:
        raise ModelValidityError(f"{name} must have {size} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ModelValidityError(f"{name} contains non-finite entries: {arr}")
    return arr


def wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def symmetrize(mat: Mat) -> Mat:
    return 0.5 * (mat + mat.T)
