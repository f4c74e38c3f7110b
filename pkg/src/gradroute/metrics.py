"""Concentration statistics over a gradient-norm vector.

Each operator maps the per-group norms of one trajectory to one scalar. Gini,
kurtosis and CV describe the *shape* of the vector and are scale invariant
up to the ``eps`` guard; ``l2_magnitude`` is the magnitude baseline and is
homogeneous of degree one.

All moments use the population (divide-by-N) convention. The ``eps`` guard
is applied as a floor on each denominator (``max(d, eps)``): it only takes
effect when the denominator would otherwise be below ``eps``, and leaves
well-conditioned inputs exactly scale invariant.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_finite_vector, check_param_counts
from .errors import CorpusConsistencyError, InputError

EPS = 1e-8
METRICS = ("gini", "kurtosis", "cv", "l2_magnitude")
_ALIASES = {"l2": "l2_magnitude"}


def gini(g, eps: float = EPS) -> float:
    """Sorted-rank Gini coefficient.

    ``sum_j (2j - N - 1) g_(j) / max(N * sum(g), eps)`` with ``g_(j)`` in
    non-decreasing order. The result lies in ``[0, (N-1)/N]``.

    >>> gini([0, 0, 0, 1])
    0.75
    """
    x = np.sort(as_finite_vector(g, nonnegative=True, min_len=2))
    if is_degenerate(x):
        return 0.0
    n = x.shape[0]
    weights = 2.0 * np.arange(1, n + 1) - n - 1
    value = float(np.dot(weights, x) / max(n * float(np.sum(x)), eps))
    # the numerator is a sum of non-negative gaps; clip rounding noise below zero
    return max(value, 0.0)


def gini_oracle(g) -> float:
    """Mean absolute difference form, ``sum_ij |g_i - g_j| / (2 N^2 mu)``.

    Deliberately O(N^2) with no sorting; it exists to cross-check
    :func:`gini` and carries no epsilon guard (an all-zero vector gives 0).
    """
    x = as_finite_vector(g, nonnegative=True, min_len=2)
    n = x.shape[0]
    total = float(np.abs(x[:, None] - x[None, :]).sum())
    mean = float(x.mean())
    if mean == 0:
        return 0.0
    return total / (2.0 * n * n * mean)


def _moments(x: np.ndarray):
    mu = float(np.mean(x))
    sigma = math.sqrt(float(np.mean((x - mu) ** 2)))
    return mu, sigma


def is_degenerate(g) -> bool:
    """True when every entry is equal, so shape statistics carry no information."""
    x = np.asarray(g, dtype=np.float64)
    return bool(x.size == 0 or np.all(x == x[0]))


def kurtosis(g, eps: float = EPS) -> float:
    """Excess kurtosis, ``mean(((g - mu) / max(sigma, eps))**4) - 3``.

    A constant vector yields exactly -3: every standardized deviation is 0.
    """
    x = as_finite_vector(g, min_len=2)
    if is_degenerate(x):
        return -3.0
    mu, sigma = _moments(x)
    z = (x - mu) / max(sigma, eps)
    return float(np.mean(z ** 4) - 3.0)


def cv(g, eps: float = EPS) -> float:
    x = as_finite_vector(g, nonnegative=True, min_len=2)
    if is_degenerate(x):
        return 0.0
    mu, sigma = _moments(x)
    return sigma / max(mu, eps)


def l2_magnitude(g) -> float:
    """Euclidean norm of the group-norm vector (overflow-safe)."""
    x = as_finite_vector(g, nonnegative=True)
    return math.hypot(*x.tolist())


def normalize_by_size(g, param_counts: Sequence[int]) -> np.ndarray:
    """Divide each group norm by the square root of its parameter count."""
    x = as_finite_vector(g, nonnegative=True)
    counts = check_param_counts(param_counts, x.shape[0])
    return x / np.sqrt(counts)


def get_metric(name: str):
    name = _ALIASES.get(name, name)
    try:
        return {"gini": gini, "kurtosis": kurtosis, "cv": cv, "l2_magnitude": l2_magnitude}[name]
    except KeyError:
        raise InputError(f"unknown metric {name!r}; choose from {', '.join(METRICS)}") from None


def canonical_metric_name(name: str) -> str:
    get_metric(name)
    return _ALIASES.get(name, name)


@dataclass
class ScoreSet:
    """Scores of one metric keyed by trajectory id.

    ``degenerate`` holds the ids whose vector was constant (only meaningful
    for the shape metrics; kurtosis reports -3 for those).
    """

    metric_name: str
    entries: dict[str, float] = field(default_factory=dict)
    normalized: bool = False
    degenerate: frozenset[str] = frozenset()

    def __post_init__(self):
        self.degenerate = frozenset(self.degenerate)
        for tid, score in self.entries.items():
            if not math.isfinite(score):
                raise InputError(f"score for {tid!r} is not finite")
        unknown = self.degenerate - self.entries.keys()
        if unknown:
            raise InputError(f"degenerate ids not in entries: {sorted(unknown)[:3]}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return sorted(self.entries)


def score_corpus(vectors: Iterable, metric_name: str, normalized: bool = False, eps: float = EPS) -> ScoreSet:
    """Score every GradientVector with one metric.

    All vectors must list their groups in the same order; the optional
    normalization divides by the square root of each group's parameter count
    before scoring.
    """
    name = canonical_metric_name(metric_name)
    op = get_metric(name)
    entries: dict[str, float] = {}
    degenerate = set()
    reference = None
    for vec in vectors:
        if reference is None:
            reference = tuple(vec.group_names)
        elif tuple(vec.group_names) != reference:
            raise CorpusConsistencyError(
                f"trajectory {vec.trajectory_id!r} lists its parameter groups in a different order"
            )
        if vec.trajectory_id in entries:
            raise CorpusConsistencyError(f"duplicate trajectory id {vec.trajectory_id!r}")
        g = normalize_by_size(vec.norms, vec.group_param_counts) if normalized else vec.norms
        entries[vec.trajectory_id] = op(g) if name == "l2_magnitude" else op(g, eps=eps)
        if name != "l2_magnitude" and is_degenerate(g):
            degenerate.add(vec.trajectory_id)
    return ScoreSet(name, entries, normalized, frozenset(degenerate))
