"""Split a scored corpus into an SFT (consolidation) and an RL (adaptation) set."""

from __future__ import annotations

import math
import statistics
import warnings
from dataclasses import dataclass

from ._validation import check_fraction
from .errors import DegeneratePartitionWarning, EmptyCorpusError, InputError
from .metrics import ScoreSet

_INVERSE_PREFIX = "inverse-of("


@dataclass(frozen=True)
class Partition:
    sft_ids: frozenset[str]
    rl_ids: frozenset[str]
    threshold: float
    rule: str
    metric_name: str

    def __post_init__(self):
        object.__setattr__(self, "sft_ids", frozenset(self.sft_ids))
        object.__setattr__(self, "rl_ids", frozenset(self.rl_ids))
        overlap = self.sft_ids & self.rl_ids
        if overlap:
            raise InputError(f"ids routed to both SFT and RL: {sorted(overlap)[:3]}")

    @property
    def corpus(self) -> frozenset[str]:
        return self.sft_ids | self.rl_ids

    def __len__(self) -> int:
        return len(self.sft_ids) + len(self.rl_ids)


def _require_scores(scores: ScoreSet) -> None:
    if not scores.entries:
        raise EmptyCorpusError("cannot route an empty score set")


def median_split(scores: ScoreSet) -> Partition:
    """Scores ``<=`` the median go to SFT, strictly greater to RL.

    For an even corpus the median is the mean of the two central order
    statistics. Ties at the median therefore always land in SFT.
    """
    _require_scores(scores)
    threshold = float(statistics.median(scores.entries.values()))
    sft = {tid for tid, s in scores.entries.items() if s <= threshold}
    rl = set(scores.entries) - sft
    if not rl:
        warnings.warn(
            f"all {len(sft)} scores are <= the median {threshold!r}; the RL set is empty",
            DegeneratePartitionWarning,
            stacklevel=2,
        )
    return Partition(frozenset(sft), frozenset(rl), threshold, "median", scores.metric_name)


def rl_count(n: int, rl_fraction: float) -> int:
    """Number of RL items for a fraction: the ceiling of ``rl_fraction * n``."""
    # round first so that e.g. 0.7 * 100 = 70.00000000000001 does not ceil to 71
    return math.ceil(round(rl_fraction * n, 9))


def quantile_split(scores: ScoreSet, rl_fraction: float) -> Partition:
    """Send the ``ceil(rl_fraction * n)`` highest scores to RL.

    Ties at the cut are resolved by ascending trajectory id, so results are
    reproducible and nested across fractions. ``threshold`` is the lowest
    score that made it into RL.
    """
    q = check_fraction(rl_fraction)
    _require_scores(scores)
    ranked = sorted(scores.entries.items(), key=lambda kv: (-kv[1], kv[0]))
    k = rl_count(len(ranked), q)
    rl = frozenset(tid for tid, _ in ranked[:k])
    sft = frozenset(tid for tid, _ in ranked[k:])
    threshold = float(ranked[k - 1][1])
    return Partition(sft, rl, threshold, f"quantile({q!r})", scores.metric_name)


def inverse_partition(p: Partition) -> Partition:
    """Swap the SFT and RL sets. Applying it twice gives back ``p``."""
    if p.rule.startswith(_INVERSE_PREFIX) and p.rule.endswith(")"):
        rule = p.rule[len(_INVERSE_PREFIX):-1]
    else:
        rule = f"{_INVERSE_PREFIX}{p.rule})"
    return Partition(p.rl_ids, p.sft_ids, p.threshold, rule, p.metric_name)


def route(scores: ScoreSet, rule: str = "median", rl_fraction: float = 0.5, inverse: bool = False) -> Partition:
    if rule == "median":
        p = median_split(scores)
    elif rule == "quantile":
        p = quantile_split(scores, rl_fraction)
    else:
        raise InputError(f"unknown routing rule {rule!r}; choose 'median' or 'quantile'")
    return inverse_partition(p) if inverse else p
