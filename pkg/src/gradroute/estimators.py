"""scikit-learn style wrappers so the three stages compose in a ``Pipeline``.

>>> from sklearn.pipeline import make_pipeline
>>> scorer = make_pipeline(GradientProbe(num_layers=1, max_context=64), ConcentrationScorer("gini"))
>>> scores = scorer.fit_transform(trajectories)            # doctest: +SKIP
>>> labels = ConcentrationRouter().fit_predict(scores)     # 1 = RL, 0 = SFT  # doctest: +SKIP
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import InputError
from .metrics import EPS, ScoreSet, canonical_metric_name, get_metric, is_degenerate, normalize_by_size
from .probe import GradientVector, ProbeModelConfig, Trajectory, init_model, prepare_trajectory, probe_gradients
from .router import median_split, quantile_split, inverse_partition

SFT, RL = 0, 1
WORKERS_ENV = "GRADROUTE_WORKERS"


def resolve_workers(n_jobs: int | None) -> int:
    if n_jobs is None:
        n_jobs = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(n_jobs))


class GradientProbe(TransformerMixin, BaseEstimator):
    """Map trajectories to per-projection gradient norms, shape ``(n, 7 * num_layers)``.

    ``fit`` only builds the (untrained) probe model; no weights are learned.
    ``transform`` accepts :class:`Trajectory` objects, or ``(tokens,
    response_start)`` pairs when ``context_length`` is set.
    """

    def __init__(self, num_layers=2, model_dim=64, num_heads=4, ffn_hidden_dim=128, vocab_size=256,
                 max_context=2048, context_length=None, rng_seed=0, n_jobs=None):
        self.num_layers = num_layers
        self.model_dim = model_dim
        self.num_heads = num_heads
        self.ffn_hidden_dim = ffn_hidden_dim
        self.vocab_size = vocab_size
        self.max_context = max_context
        self.context_length = context_length
        self.rng_seed = rng_seed
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        config = ProbeModelConfig(self.num_layers, self.model_dim, self.num_heads, self.ffn_hidden_dim,
                                  self.vocab_size, self.max_context, self.rng_seed)
        self.model_ = init_model(config)
        self.group_names_ = self.model_.group_names
        self.n_features_out_ = self.model_.num_groups
        return self

    def _as_trajectories(self, X) -> list[Trajectory]:
        out = []
        for i, item in enumerate(X):
            if isinstance(item, Trajectory):
                out.append(item)
                continue
            if self.context_length is None:
                raise InputError("raw (tokens, response_start) pairs need context_length to be set")
            tokens, start = item
            out.append(prepare_trajectory(tokens, start, self.context_length, trajectory_id=str(i)))
        return out

    def probe(self, X) -> list[GradientVector]:
        check_is_fitted(self, "model_")
        trajectories = self._as_trajectories(X)
        workers = resolve_workers(self.n_jobs)
        if workers == 1:
            return [probe_gradients(self.model_, t) for t in trajectories]
        # map() yields in submission order, so output order is the corpus order
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda t: probe_gradients(self.model_, t), trajectories))

    def transform(self, X):
        vectors = self.probe(X)
        if not vectors:
            return np.empty((0, self.n_features_out_))
        return np.vstack([v.norms for v in vectors])

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "model_")
        return np.asarray(self.group_names_, dtype=object)


class ConcentrationScorer(TransformerMixin, BaseEstimator):
    """Score each row of a gradient-norm matrix with one concentration metric.

    Output has shape ``(n, 1)``. With ``normalized=True`` each column is first
    divided by the square root of the matching entry of ``param_counts``.
    """

    def __init__(self, metric="gini", normalized=False, param_counts=None, eps=EPS):
        self.metric = metric
        self.normalized = normalized
        self.param_counts = param_counts
        self.eps = eps

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_features=2)
        if np.any(X < 0):
            raise InputError("gradient norms must be non-negative")
        self.metric_name_ = canonical_metric_name(self.metric)
        self.n_features_in_ = X.shape[1]
        if self.normalized:
            if self.param_counts is None:
                raise InputError("normalized=True requires param_counts")
            normalize_by_size(np.ones(self.n_features_in_), self.param_counts)
        return self

    def _rows(self, X):
        check_is_fitted(self, "metric_name_")
        X = check_array(X, dtype=np.float64, ensure_min_features=2)
        if X.shape[1] != self.n_features_in_:
            raise InputError(f"expected {self.n_features_in_} groups, got {X.shape[1]}")
        if self.normalized:
            X = X / np.sqrt(np.asarray(self.param_counts, dtype=np.float64))
        return X

    def transform(self, X):
        op = get_metric(self.metric_name_)
        kwargs = {} if self.metric_name_ == "l2_magnitude" else {"eps": self.eps}
        return np.array([[op(row, **kwargs)] for row in self._rows(X)], dtype=np.float64).reshape(-1, 1)

    def degenerate_mask(self, X) -> np.ndarray:
        return np.array([is_degenerate(row) for row in self._rows(X)], dtype=bool)


class ConcentrationRouter(BaseEstimator):
    """Median (or quantile) split of concentration scores; ``1`` means RL, ``0`` SFT.

    ``fit`` learns ``threshold_`` from the score distribution. ``fit_predict``
    returns the exact partition of the fitted corpus (quantile ties resolved
    by id); ``predict`` on new scores applies the threshold only: ``s >
    threshold_`` for the median rule and ``s >= threshold_`` for quantiles.
    """

    def __init__(self, rule="median", rl_fraction=0.5, inverse=False):
        self.rule = rule
        self.rl_fraction = rl_fraction
        self.inverse = inverse

    def fit(self, X, y=None, ids=None, metric_name="score"):
        s = check_array(X, dtype=np.float64, ensure_2d=False).reshape(-1)
        if ids is None:
            ids = [f"{i:09d}" for i in range(s.shape[0])]
        if len(ids) != s.shape[0]:
            raise InputError("ids must match the number of scores")
        scores = ScoreSet(metric_name, dict(zip(map(str, ids), map(float, s))))
        if self.rule == "median":
            p = median_split(scores)
        elif self.rule == "quantile":
            p = quantile_split(scores, self.rl_fraction)
        else:
            raise InputError(f"unknown rule {self.rule!r}")
        self.threshold_ = p.threshold
        self.partition_ = inverse_partition(p) if self.inverse else p
        self.ids_ = [str(i) for i in ids]
        return self

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        s = check_array(X, dtype=np.float64, ensure_2d=False).reshape(-1)
        high = s > self.threshold_ if self.rule == "median" else s >= self.threshold_
        if self.inverse:
            high = ~high
        return np.where(high, RL, SFT)

    def fit_predict(self, X, y=None, ids=None, metric_name="score"):
        self.fit(X, ids=ids, metric_name=metric_name)
        rl = self.partition_.rl_ids
        return np.array([RL if i in rl else SFT for i in self.ids_])
