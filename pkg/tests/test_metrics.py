import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradroute.errors import CorpusConsistencyError, InputError
from gradroute.metrics import (
    EPS,
    ScoreSet,
    cv,
    gini,
    gini_oracle,
    kurtosis,
    l2_magnitude,
    normalize_by_size,
    score_corpus,
)
from gradroute.probe import GradientVector

SIZES = [2, 7, 14, 56, 224]

norm_vectors = st.integers(2, 40).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(0, 1e6, allow_subnormal=False))
)


def _vec(tid, norms, names=None, counts=None):
    n = len(norms)
    return GradientVector(tid, norms, names or tuple(f"g{i}" for i in range(n)), counts or (1,) * n, 0.0)


# -- gini -------------------------------------------------------------------------


def test_gini_fixed_points():
    assert gini([5, 5, 5, 5]) == 0.0
    assert gini([0, 0, 0, 1]) == pytest.approx(0.75, abs=1e-9)
    assert gini([1, 2, 3, 4]) == pytest.approx(0.25, abs=1e-9)


def test_gini_oracle_fixed_points():
    # sum |gi - gj| over ordered pairs of [1,2,3,4] is 20; 2 N^2 mu = 80
    assert gini_oracle([1, 2, 3, 4]) == 0.25
    assert gini_oracle([3, 3, 3]) == 0.0
    assert gini_oracle([0, 0]) == 0.0


def test_gini_all_zero_is_zero():
    assert gini([0.0] * 7) == 0.0


@pytest.mark.parametrize("c", [1e-6, 1.0, 1e6])
def test_gini_scale_invariance_examples(c):
    g = np.array([10.0, 20.0, 30.0, 40.0]) * 1e3
    assert gini(c * g) == pytest.approx(gini(g), abs=1e-9)


@pytest.mark.parametrize("n", SIZES)
def test_gini_matches_oracle(n):
    rng = np.random.default_rng(n)
    for _ in range(200):
        g = rng.uniform(0, 100, n)
        g[rng.random(n) < 0.3] = 0.0
        g[rng.integers(n)] = rng.uniform(10, 100)
        assert abs(gini(g) - gini_oracle(g)) <= 1e-9


@given(norm_vectors)
def test_gini_without_guard_matches_oracle(g):
    # eps=0 removes the only difference between the two formulas
    if g.sum() == 0:
        return
    assert gini(g, eps=0.0) == pytest.approx(gini_oracle(g), rel=1e-9, abs=1e-12)


@given(norm_vectors)
def test_gini_bounds(g):
    n = g.shape[0]
    assert 0.0 <= gini(g) <= (n - 1) / n + 1e-12


@given(norm_vectors, st.randoms(use_true_random=False))
def test_permutation_invariance(g, rnd):
    perm = list(g)
    rnd.shuffle(perm)
    for op in (gini, kurtosis, cv, l2_magnitude):
        assert op(perm) == pytest.approx(op(g), rel=1e-12, abs=1e-12)


@given(norm_vectors, st.data())
def test_regressive_transfer_never_lowers_gini(g, data):
    i, j = data.draw(st.tuples(st.integers(0, len(g) - 1), st.integers(0, len(g) - 1)))
    if g[i] > g[j]:
        i, j = j, i
    amount = data.draw(st.floats(0, 1)) * g[i]
    h = g.copy()
    h[i] -= amount
    h[j] += amount
    assert gini(h) >= gini(g) - 1e-12


def test_gini_rejects_bad_input():
    with pytest.raises(InputError):
        gini([1.0, -0.5])
    with pytest.raises(InputError):
        gini([1.0, math.inf])
    with pytest.raises(InputError):
        gini([1.0])


def test_gini_tie_insensitive():
    assert gini([1, 2, 2, 5]) == gini([2, 1, 5, 2])


# -- kurtosis ---------------------------------------------------------------------


def test_kurtosis_constant_vector():
    assert kurtosis([4.0, 4.0, 4.0, 4.0]) == -3.0
    assert kurtosis([0.1] * 7) == -3.0


def test_kurtosis_two_point():
    assert kurtosis([1, 1, 3, 3]) == pytest.approx(-2.0, abs=1e-9)


def test_kurtosis_population_formula():
    g = np.array([0.3, 1.1, 0.2, 4.0, 0.7])
    z = (g - g.mean()) / g.std()  # numpy std divides by N
    assert kurtosis(g) == pytest.approx(np.mean(z ** 4) - 3, rel=1e-7)
    from scipy.stats import kurtosis as scipy_kurtosis
    assert kurtosis(g) == pytest.approx(scipy_kurtosis(g, fisher=True, bias=True), rel=1e-7)


def test_kurtosis_spiky_beats_flat():
    assert kurtosis([0, 0, 0, 0, 0, 0, 0, 100]) > kurtosis([40, 45, 50, 55])


def test_kurtosis_allows_negative_entries():
    assert math.isfinite(kurtosis([-1.0, 2.0, 0.5]))


def test_kurtosis_rejects_nan():
    with pytest.raises(InputError):
        kurtosis([1.0, math.nan])


# -- cv -----------------------------------------------------------------------------


def test_cv_examples():
    assert cv([2, 2, 2]) == 0.0
    assert cv([0, 4]) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("c", [1e-3, 1e3])
def test_cv_scale_invariance(c):
    g = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0]) * 1e4
    assert cv(c * g) == pytest.approx(cv(g), rel=1e-8)


def test_cv_rejects_inf():
    with pytest.raises(InputError):
        cv([1.0, math.inf])


# -- l2 --------------------------------------------------------------------------------


def test_l2_examples():
    assert l2_magnitude([3, 4]) == 5.0
    assert l2_magnitude([0.0] * 6) == 0.0


@given(norm_vectors, st.sampled_from([1e-6, 1e-3, 2.0, 1e3, 1e6]))
def test_l2_homogeneous(g, c):
    lhs, rhs = l2_magnitude(c * g), c * l2_magnitude(g)
    assert abs(lhs - rhs) <= 4 * math.ulp(rhs)


def test_l2_no_overflow():
    assert math.isfinite(l2_magnitude([1e200, 1e200]))


# -- normalize_by_size -------------------------------------------------------------------


def test_normalize_by_size():
    np.testing.assert_array_equal(normalize_by_size([2, 3], [4, 9]), [1.0, 1.0])


def test_normalize_equal_counts_keeps_gini():
    g = np.random.default_rng(0).uniform(0, 1, 14)
    assert gini(normalize_by_size(g, [4096] * 14)) == pytest.approx(gini(g), abs=1e-12)


@pytest.mark.parametrize("counts", [[1, 2, 3], [1, 0], [1, -4]])
def test_normalize_bad_counts(counts):
    with pytest.raises(InputError):
        normalize_by_size([1.0, 2.0], counts)


# -- degenerate handling -------------------------------------------------------------


@given(st.integers(2, 30), st.floats(0, 1e12))
def test_constant_vectors(n, value):
    g = [value] * n
    assert gini(g) == 0.0
    assert cv(g) == 0.0
    assert kurtosis(g) == -3.0


@given(norm_vectors)
@settings(max_examples=200)
def test_no_nan_escapes(g):
    for op in (gini, kurtosis, cv, l2_magnitude):
        assert math.isfinite(op(g))


# -- score_corpus -----------------------------------------------------------------------


def test_score_corpus_gini_range():
    rng = np.random.default_rng(5)
    vecs = [_vec(f"t{i}", rng.uniform(0, 1, 14)) for i in range(3)]
    s = score_corpus(vecs, "gini")
    assert len(s) == 3 and s.metric_name == "gini" and not s.normalized
    assert all(0 <= v < 1 for v in s.entries.values())


def test_score_corpus_empty():
    s = score_corpus([], "cv")
    assert len(s) == 0


def test_score_corpus_global_scale():
    rng = np.random.default_rng(9)
    vecs = [_vec(f"t{i}", rng.uniform(0.5, 2.0, 14) * 1e3) for i in range(10)]
    scaled = [_vec(v.trajectory_id, v.norms * 1e4) for v in vecs]
    a, b = score_corpus(vecs, "gini"), score_corpus(scaled, "gini")
    for tid in a.entries:
        assert a.entries[tid] == pytest.approx(b.entries[tid], abs=1e-9)


def test_score_corpus_flags_degenerate_kurtosis():
    vecs = [_vec("flat", [2.0] * 7), _vec("spiky", [0, 0, 0, 0, 0, 0, 9.0])]
    s = score_corpus(vecs, "kurtosis")
    assert s.entries["flat"] == -3.0
    assert s.degenerate == {"flat"}


def test_score_corpus_normalized():
    v = _vec("a", [2.0, 3.0, 8.0], counts=(4, 9, 16))
    s = score_corpus([v], "gini", normalized=True)
    assert s.normalized
    assert s.entries["a"] == pytest.approx(gini([1.0, 1.0, 2.0]))


def test_score_corpus_l2_alias():
    s = score_corpus([_vec("a", [3.0, 4.0])], "l2")
    assert s.metric_name == "l2_magnitude" and s.entries["a"] == 5.0


def test_score_corpus_heterogeneous_groups():
    with pytest.raises(CorpusConsistencyError):
        score_corpus([_vec("a", [1.0, 2.0]), _vec("b", [1.0, 2.0], names=("g1", "g0"))], "gini")


def test_score_corpus_unknown_metric():
    with pytest.raises(InputError):
        score_corpus([], "entropy")


def test_scoreset_rejects_nonfinite():
    with pytest.raises(InputError):
        ScoreSet("gini", {"a": math.nan})


def test_eps_default():
    assert EPS == 1e-8


def test_eps_guard_engages_only_below_eps():
    # N * sum = 2e-12 < eps, so the floor replaces the denominator
    assert gini([0.0, 1e-12]) == pytest.approx(1e-12 / 1e-8, rel=1e-12)
    assert gini([0.0, 1e-12], eps=1e-15) == pytest.approx(0.5, rel=1e-12)
    assert gini([0.0, 1e-3]) == 0.5


def test_eps_guard_on_cv_and_kurtosis():
    assert cv([0.0, 2e-9]) == pytest.approx(1e-9 / 1e-8, rel=1e-12)
    assert kurtosis([0.0, 2e-9]) == pytest.approx((0.1 ** 4) - 3, rel=1e-12)
    assert kurtosis([0.0, 2e-9], eps=1e-12) == pytest.approx(-2.0, rel=1e-12)


@given(norm_vectors, st.sampled_from([1e-6, 1e-3, 1e3, 1e6]))
def test_shape_metrics_scale_invariant(g, c):
    # skip inputs where the floor is active at either scale
    mu, sigma = g.mean(), g.std()
    if min(mu, sigma) * min(c, 1.0) < 1e-6:
        return
    for op in (gini, cv, kurtosis):
        a, b = op(g), op(c * g)
        assert abs(a - b) <= 1e-8 * max(abs(a), 1e-300) + 1e-13
