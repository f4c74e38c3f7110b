import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradroute.analysis import (
    consensus,
    normalization_robustness,
    random_consensus,
    ratio_sweep,
    spearman,
    spearman_from_values,
)
from gradroute.errors import CorpusConsistencyError, DegenerateInputError, InputError, ParameterError
from gradroute.metrics import ScoreSet
from gradroute.probe import GradientVector
from gradroute.router import Partition, quantile_split


def spearman_oracle(x, y):
    """Average ranks by pairwise counting, then Pearson in plain Python."""
    n = len(x)

    def ranks(v):
        return [1 + sum(v[j] < v[i] for j in range(n)) + (sum(v[j] == v[i] for j in range(n)) - 1) / 2
                for i in range(n)]

    rx, ry = ranks(x), ranks(y)
    mx, my = sum(rx) / n, sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


def scores(values, name="gini"):
    return ScoreSet(name, {f"t{i}": float(v) for i, v in enumerate(values)})


def part(rl, universe, name="m"):
    rl = frozenset(rl)
    return Partition(frozenset(universe) - rl, rl, 0.0, "median", name)


# -- spearman -----------------------------------------------------------------------


def test_spearman_known_value():
    # rank differences (0, -1, 1): 1 - 6*2 / (3*8) = 0.5
    assert spearman(scores([1, 2, 3]), scores([10, 30, 20])) == pytest.approx(0.5, abs=1e-15)
    assert spearman_oracle([1, 2, 3], [10, 30, 20]) == pytest.approx(0.5, abs=1e-15)


def test_spearman_identity_and_reverse():
    a = scores([0.3, 0.1, 0.9, 0.5, 0.7])
    assert spearman(a, a) == 1.0
    assert spearman(a, scores([-v for v in a.entries.values()])) == -1.0


def test_spearman_monotone_transform():
    a = scores([0.3, 0.1, 0.9, 0.5, 0.7])
    b = scores([math.exp(3 * v) for v in a.entries.values()])
    assert spearman(a, b) == 1.0


def test_spearman_exhaustive_small_with_ties():
    for n in (2, 3, 4):
        patterns = list(itertools.product(range(3), repeat=n))
        for x in patterns:
            if len(set(x)) == 1:
                continue
            for y in patterns:
                if len(set(y)) == 1:
                    continue
                assert abs(spearman_from_values(x, y) - spearman_oracle(x, y)) <= 1e-12


@given(st.integers(2, 8).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 4) | st.floats(-10, 10), min_size=n, max_size=n),
    st.lists(st.integers(0, 4) | st.floats(-10, 10), min_size=n, max_size=n))))
def test_spearman_matches_oracle(xy):
    x, y = xy
    if len(set(x)) == 1 or len(set(y)) == 1:
        with pytest.raises(DegenerateInputError):
            spearman_from_values(x, y)
        return
    rho = spearman_from_values(x, y)
    assert abs(rho - spearman_oracle(x, y)) <= 1e-12
    assert -1.0 <= rho <= 1.0
    assert rho == pytest.approx(spearman_from_values(y, x), abs=1e-15)


def test_spearman_id_mismatch():
    with pytest.raises(CorpusConsistencyError):
        spearman(scores([1, 2]), ScoreSet("gini", {"t0": 1.0, "x": 2.0}))


def test_spearman_too_small():
    with pytest.raises(InputError):
        spearman(scores([1]), scores([1]))


# -- consensus --------------------------------------------------------------------


def test_consensus_identical():
    u = [f"t{i}" for i in range(10)]
    p = part(u[:5], u)
    rep = consensus({"gini": p, "kurtosis": p, "cv": p})
    assert rep.triple_rl_intersection_fraction == 1.0
    assert rep.corpus_intersection_fraction == 0.5
    assert all(v == 1.0 for v in rep.pairwise_rl_overlap.values())


def test_consensus_disjoint_pair():
    u = list("abcd")
    rep = consensus({"x": part("ab", u), "y": part("cd", u)})
    assert rep.pairwise_rl_overlap[("x", "y")] == 0.0
    assert rep.triple_rl_intersection_fraction == 0.0


def test_consensus_counts_bound():
    u = [f"t{i}" for i in range(12)]
    rep = consensus({"a": part(u[:6], u), "b": part(u[2:8], u), "c": part(u[3:9], u)})
    assert rep.rl_intersection_count == 3
    assert all(rep.rl_intersection_count <= c for c in rep.pairwise_rl_intersection.values())
    assert rep.pairwise_rl_overlap[("a", "b")] == pytest.approx(4 / 8)
    assert rep.triple_rl_intersection_fraction == 0.5
    assert rep.random_baseline == pytest.approx(0.25)
    assert rep.random_corpus_baseline == pytest.approx(0.125)


def test_consensus_mismatched_corpora():
    with pytest.raises(CorpusConsistencyError):
        consensus({"a": part("a", "ab"), "b": part("a", "abc")})


def test_consensus_needs_two():
    with pytest.raises(InputError):
        consensus({"a": part("a", "ab")})


def test_random_consensus_matches_analytic():
    rl_frac, corpus_frac = random_consensus(4000, 3, 0.5, trials=5, seed=1)
    assert rl_frac == pytest.approx(0.25, abs=0.02)
    assert corpus_frac == pytest.approx(0.125, abs=0.01)


# -- sweep --------------------------------------------------------------------------


def test_sweep_sizes():
    s = scores(np.random.default_rng(0).permutation(100))
    rep = ratio_sweep(s, [i / 10 for i in range(1, 10)])
    assert [r.n_rl for r in rep.rows] == list(range(10, 100, 10))
    assert all(r.n_sft + r.n_rl == 100 for r in rep.rows)
    assert rep.nesting_verified
    assert all(r.downstream_score is None for r in rep.rows)


def test_sweep_single_matches_quantile():
    s = scores([0.2, 0.9, 0.4, 0.7])
    rep = ratio_sweep(s, [0.5])
    q = quantile_split(s, 0.5)
    assert len(rep.rows) == 1 and rep.rows[0].n_rl == len(q.rl_ids) and rep.rows[0].threshold == q.threshold


def test_sweep_sorts_fractions():
    rep = ratio_sweep(scores(range(10)), [0.7, 0.2, 0.5])
    assert [r.rl_fraction for r in rep.rows] == [0.2, 0.5, 0.7]


def test_sweep_invalid():
    with pytest.raises(ParameterError):
        ratio_sweep(scores(range(4)), [0.5, 1.0])
    with pytest.raises(ParameterError):
        ratio_sweep(scores(range(4)), [])


# -- normalization robustness --------------------------------------------------------


def _vectors(rows, counts):
    names = tuple(f"g{j}" for j in range(len(counts)))
    return [GradientVector(f"t{i}", r, names, counts, 0.0) for i, r in enumerate(rows)]


def test_robustness_equal_counts():
    rows = np.random.default_rng(3).uniform(0, 1, (30, 14))
    rep = normalization_robustness(_vectors(rows, (4096,) * 14), "gini")
    assert rep.rho == 1.0 and not rep.degenerate


def test_robustness_duplicated_vector_is_degenerate():
    rows = [np.arange(1.0, 8.0)] * 5
    rep = normalization_robustness(_vectors(rows, (1, 2, 3, 4, 5, 6, 7)), "gini")
    assert rep.degenerate and rep.rho is None


def test_robustness_mixed_counts_reports_value():
    rows = np.random.default_rng(4).uniform(0, 1, (40, 14))
    rep = normalization_robustness(_vectors(rows, (4096,) * 4 + (8192,) * 10), "cv")
    assert rep.rho is not None and -1.0 <= rep.rho <= 1.0


def test_robustness_empty():
    with pytest.raises(InputError):
        normalization_robustness([], "gini")
