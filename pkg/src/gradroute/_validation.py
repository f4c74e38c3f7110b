from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .errors import InputError, ParameterError


def as_finite_vector(g, *, nonnegative: bool = False, min_len: int = 1, name: str = "g") -> np.ndarray:
    """Return ``g`` as a 1-D float64 array after checking finiteness (and sign)."""
    try:
        arr = np.asarray(g, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name} is not a numeric sequence") from exc
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_len:
        raise InputError(f"{name} needs at least {min_len} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains a non-finite entry")
    if nonnegative and np.any(arr < 0):
        raise InputError(f"{name} contains a negative entry")
    return arr


def check_fraction(q: float, name: str = "rl_fraction") -> float:
    try:
        q = float(q)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"{name} must be a real number") from exc
    if not (0.0 < q < 1.0) or math.isnan(q):
        raise ParameterError(f"{name} must lie in the open interval (0, 1), got {q!r}")
    return q


def check_param_counts(counts: Sequence[int], n: int) -> np.ndarray:
    arr = np.asarray(counts)
    if arr.ndim != 1 or arr.size != n:
        raise InputError(f"expected {n} parameter counts, got {arr.size}")
    if arr.size and (not np.issubdtype(arr.dtype, np.number) or np.any(arr <= 0)):
        raise InputError("parameter counts must be positive")
    return arr.astype(np.float64)
