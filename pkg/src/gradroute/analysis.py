"""Batch diagnostics over scores and partitions.

* :func:`consensus` - how much the RL sets chosen by different metrics agree.
* :func:`spearman` - rank agreement between two score sets.
* :func:`ratio_sweep` - partitions over a grid of RL fractions.
* :func:`normalization_robustness` - raw vs. size-normalized ranking agreement.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._validation import check_fraction
from .errors import CorpusConsistencyError, DegenerateInputError, InputError, ParameterError
from .metrics import ScoreSet, score_corpus
from .router import Partition, quantile_split


@dataclass
class ConsensusReport:
    """Overlap of the RL (high-concentration) sets of several partitions.

    ``triple_rl_intersection_fraction`` is the size of the intersection of
    all RL sets divided by the size of the smallest RL set; for median
    splits that is the corpus' RL half. ``corpus_intersection_fraction``
    divides the same count by the corpus size instead. ``random_baseline``
    is the expected value of the first quantity for independent random
    splits with the observed RL sizes.
    """

    names: list[str]
    corpus_size: int
    rl_sizes: dict[str, int]
    pairwise_rl_overlap: dict[tuple[str, str], float]
    pairwise_rl_intersection: dict[tuple[str, str], int]
    rl_intersection_count: int
    triple_rl_intersection_fraction: float
    corpus_intersection_fraction: float
    random_baseline: float
    random_corpus_baseline: float


def _jaccard(a: frozenset, b: frozenset) -> float:
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def consensus(partitions: Mapping[str, Partition]) -> ConsensusReport:
    if len(partitions) < 2:
        raise InputError("consensus needs at least two partitions")
    names = list(partitions)
    corpus = partitions[names[0]].corpus
    for name in names[1:]:
        if partitions[name].corpus != corpus:
            raise CorpusConsistencyError(f"partition {name!r} covers a different corpus than {names[0]!r}")
    n = len(corpus)
    rl = {name: partitions[name].rl_ids for name in names}

    pairwise, pair_counts = {}, {}
    for a, b in itertools.combinations(names, 2):
        pairwise[(a, b)] = _jaccard(rl[a], rl[b])
        pair_counts[(a, b)] = len(rl[a] & rl[b])

    common = frozenset.intersection(*rl.values())
    smallest = min(len(s) for s in rl.values())
    fractions = [len(s) / n if n else 0.0 for s in rl.values()]
    prod = math.prod(fractions)
    return ConsensusReport(
        names=names,
        corpus_size=n,
        rl_sizes={k: len(v) for k, v in rl.items()},
        pairwise_rl_overlap=pairwise,
        pairwise_rl_intersection=pair_counts,
        rl_intersection_count=len(common),
        triple_rl_intersection_fraction=len(common) / smallest if smallest else 0.0,
        corpus_intersection_fraction=len(common) / n if n else 0.0,
        random_baseline=prod / min(fractions) if smallest else 0.0,
        random_corpus_baseline=prod,
    )


def random_split(ids: Sequence[str], rl_fraction: float, rng: np.random.Generator) -> Partition:
    """A uniformly random partition with ``round(rl_fraction * n)`` RL ids."""
    ids = list(ids)
    k = int(round(rl_fraction * len(ids)))
    chosen = rng.permutation(len(ids))[:k]
    rl = frozenset(ids[i] for i in chosen)
    return Partition(frozenset(ids) - rl, rl, float("nan"), "random", "random")


def random_consensus(
    n_ids: int, n_partitions: int = 3, rl_fraction: float = 0.5, trials: int = 20, seed: int = 0
) -> tuple[float, float]:
    """Monte-Carlo mean of (triple_rl_intersection_fraction, corpus_intersection_fraction)
    over independent random splits."""
    rng = np.random.default_rng(seed)
    ids = [f"t{i:06d}" for i in range(n_ids)]
    rl_frac, corpus_frac = [], []
    for _ in range(trials):
        parts = {f"r{j}": random_split(ids, rl_fraction, rng) for j in range(n_partitions)}
        report = consensus(parts)
        rl_frac.append(report.triple_rl_intersection_fraction)
        corpus_frac.append(report.corpus_intersection_fraction)
    return float(np.mean(rl_frac)), float(np.mean(corpus_frac))


def _aligned(a: ScoreSet, b: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    if a.entries.keys() != b.entries.keys():
        raise CorpusConsistencyError("score sets cover different trajectory ids")
    ids = sorted(a.entries)
    if len(ids) < 2:
        raise InputError("spearman needs at least two trajectories")
    return (np.array([a.entries[i] for i in ids], dtype=np.float64),
            np.array([b.entries[i] for i in ids], dtype=np.float64))


def spearman_from_values(x, y) -> float:
    """Pearson correlation of average ranks. Raises on an all-tied input."""
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise DegenerateInputError("spearman is undefined when every value is tied")
    rho = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, rho))


def spearman(a: ScoreSet, b: ScoreSet) -> float:
    x, y = _aligned(a, b)
    return spearman_from_values(x, y)


@dataclass
class SweepRow:
    rl_fraction: float
    n_sft: int
    n_rl: int
    threshold: float
    downstream_score: float | None = None


@dataclass
class SweepReport:
    metric_name: str
    rows: list[SweepRow] = field(default_factory=list)
    nesting_verified: bool = True


def ratio_sweep(scores: ScoreSet, fractions: Iterable[float]) -> SweepReport:
    """One quantile split per fraction, rows sorted by fraction.

    ``downstream_score`` is left empty for an external evaluation to fill.
    """
    fracs = sorted({check_fraction(f) for f in fractions})
    if not fracs:
        raise ParameterError("at least one fraction is required")
    rows, previous, nested = [], frozenset(), True
    for q in fracs:
        p = quantile_split(scores, q)
        nested = nested and previous <= p.rl_ids
        previous = p.rl_ids
        rows.append(SweepRow(q, len(p.sft_ids), len(p.rl_ids), p.threshold))
    return SweepReport(scores.metric_name, rows, nested)


@dataclass
class RobustnessReport:
    metric_name: str
    n: int
    rho: float | None
    degenerate: bool


def normalization_robustness(vectors: Sequence, metric_name: str = "gini") -> RobustnessReport:
    """Spearman correlation between raw and size-normalized scores of one corpus.

    When either ranking is completely tied the report is flagged degenerate and
    carries no rho.
    """
    vectors = list(vectors)
    if not vectors:
        raise InputError("normalization_robustness needs a non-empty corpus")
    for vec in vectors:
        if not vec.group_param_counts or len(vec.group_param_counts) != len(vec.norms):
            raise InputError(f"trajectory {vec.trajectory_id!r} has no parameter counts")
    raw = score_corpus(vectors, metric_name, normalized=False)
    norm = score_corpus(vectors, metric_name, normalized=True)
    try:
        rho = spearman(raw, norm)
    except (DegenerateInputError, InputError):
        return RobustnessReport(raw.metric_name, len(vectors), None, True)
    return RobustnessReport(raw.metric_name, len(vectors), rho, False)
