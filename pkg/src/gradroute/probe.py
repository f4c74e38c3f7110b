"""Non-invasive gradient probing on a small decoder-only transformer.

The model is written directly in numpy with an explicit backward pass so that
per-projection gradient norms can be taken one matrix at a time and discarded.
Everything runs in float64.

Architecture (pre-norm, per layer)::

    a = rmsnorm(h) ; h += MHA(a W_q, a W_k, a W_v) W_o
    b = rmsnorm(h) ; h += (silu(b W_gate) * (b W_up)) W_down

Token/position embeddings, the unembedding and all norm gains are auxiliary
and never probed; the probed groups are the seven projections of every layer,
layer-major, in the order q, k, v, o, gate, up, down.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any

import numpy as np

from .errors import ConfigurationError, DegenerateStepWarning, EmptyResponseError, InputError

PROJECTIONS = ("W_q", "W_k", "W_v", "W_o", "W_gate", "W_up", "W_down")
_NORM_EPS = 1e-6
PAD_ID = 0
INTERNAL_SOURCE = "internal-probe"


@dataclass(frozen=True)
class ProbeModelConfig:
    num_layers: int = 2
    model_dim: int = 64
    num_heads: int = 4
    ffn_hidden_dim: int = 128
    vocab_size: int = 256
    max_context: int = 2048
    rng_seed: int = 0

    def validate(self) -> ProbeModelConfig:
        for name in ("num_layers", "model_dim", "num_heads", "ffn_hidden_dim", "vocab_size", "max_context"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(name, f"must be a positive integer, got {value!r}")
        if self.model_dim % self.num_heads:
            raise ConfigurationError(
                "num_heads", f"{self.num_heads} does not divide model_dim={self.model_dim}"
            )
        if self.max_context < 2:
            raise ConfigurationError("max_context", "must be at least 2")
        if isinstance(self.rng_seed, bool) or not isinstance(self.rng_seed, (int, np.integer)):
            raise ConfigurationError("rng_seed", f"must be an integer, got {self.rng_seed!r}")
        return self

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass(frozen=True, eq=False)
class ProbeModel:
    """Immutable parameter container. Arrays are read-only views."""

    config: ProbeModelConfig
    params: Mapping[str, np.ndarray]
    group_names: tuple[str, ...]

    @property
    def num_groups(self) -> int:
        return len(self.group_names)

    def group(self, index: int) -> np.ndarray:
        return self.params[self.group_names[index]]

    @property
    def group_param_counts(self) -> tuple[int, ...]:
        return tuple(int(self.params[n].size) for n in self.group_names)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    def replace(self, **arrays: np.ndarray) -> ProbeModel:
        """Return a new model with some parameters swapped out; ``self`` is untouched."""
        params = dict(self.params)
        for name, arr in arrays.items():
            if name not in params:
                raise KeyError(name)
            if np.shape(arr) != params[name].shape:
                raise InputError(f"shape mismatch for {name}: {np.shape(arr)} vs {params[name].shape}")
            params[name] = _frozen(np.array(arr, dtype=np.float64))
        return ProbeModel(self.config, MappingProxyType(params), self.group_names)


@dataclass(eq=False)
class Trajectory:
    trajectory_id: str
    tokens: np.ndarray
    response_mask: np.ndarray
    attention_mask: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.response_mask = np.asarray(self.response_mask, dtype=bool)
        self.attention_mask = np.asarray(self.attention_mask, dtype=bool)
        n = self.tokens.shape[0]
        if self.response_mask.shape != (n,) or self.attention_mask.shape != (n,):
            raise InputError("tokens, response_mask and attention_mask must have equal length")
        n_valid = int(self.attention_mask.sum())
        if not self.attention_mask[:n_valid].all():
            raise InputError("attention_mask must be a contiguous prefix (padding goes at the tail)")
        if np.any(self.response_mask & ~self.attention_mask):
            raise InputError("padding positions cannot be response tokens")

    @property
    def n_valid(self) -> int:
        return int(self.attention_mask.sum())

    @property
    def n_response(self) -> int:
        return int(self.response_mask.sum())


@dataclass(eq=False)
class GradientVector:
    trajectory_id: str
    norms: np.ndarray
    group_names: tuple[str, ...]
    group_param_counts: tuple[int, ...]
    loss_value: float
    source: str = INTERNAL_SOURCE

    def __post_init__(self):
        self.norms = np.asarray(self.norms, dtype=np.float64)
        self.group_names = tuple(self.group_names)
        self.group_param_counts = tuple(int(c) for c in self.group_param_counts)
        n = self.norms.shape[0] if self.norms.ndim == 1 else -1
        if n != len(self.group_names) or n != len(self.group_param_counts):
            raise InputError("norms, group_names and group_param_counts must have identical length")
        if not np.all(np.isfinite(self.norms)) or np.any(self.norms < 0):
            raise InputError("norms must be finite and non-negative")
        if any(c <= 0 for c in self.group_param_counts):
            raise InputError("group_param_counts must be positive")
        if not (math.isfinite(self.loss_value) and self.loss_value >= 0):
            raise InputError("loss_value must be finite and non-negative")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _uniform(seed: int, index: int, shape: tuple[int, ...], bound: float) -> np.ndarray:
    # Philox keyed per tensor: every tensor's values depend only on (seed, index).
    ss = np.random.SeedSequence([int(seed) % 2**64, index])
    rng = np.random.Generator(np.random.Philox(ss))
    return rng.uniform(-bound, bound, size=shape)


def init_model(config: ProbeModelConfig) -> ProbeModel:
    """Build a deterministically initialised model from ``config.rng_seed``."""
    cfg = config.validate()
    d, f, v = cfg.model_dim, cfg.ffn_hidden_dim, cfg.vocab_size
    shapes = {"W_q": (d, d), "W_k": (d, d), "W_v": (d, d), "W_o": (d, d),
              "W_gate": (d, f), "W_up": (d, f), "W_down": (f, d)}

    params: dict[str, np.ndarray] = {}
    names = []
    for layer in range(cfg.num_layers):
        for kind in PROJECTIONS:
            name = f"layer{layer}.{kind}"
            shape = shapes[kind]
            params[name] = _uniform(cfg.rng_seed, len(names), shape, 1.0 / math.sqrt(shape[0]))
            names.append(name)

    aux_index = len(names)
    params["embed"] = _uniform(cfg.rng_seed, aux_index, (v, d), 1.0)
    params["pos"] = _uniform(cfg.rng_seed, aux_index + 1, (cfg.max_context, d), 0.1)
    params["unembed"] = _uniform(cfg.rng_seed, aux_index + 2, (d, v), 1.0 / math.sqrt(d))
    for layer in range(cfg.num_layers):
        params[f"layer{layer}.norm_attn"] = np.ones(d)
        params[f"layer{layer}.norm_ffn"] = np.ones(d)
    params["final_norm"] = np.ones(d)

    params = {k: _frozen(a) for k, a in params.items()}
    return ProbeModel(cfg, MappingProxyType(params), tuple(names))


def prepare_trajectory(
    raw_tokens: Sequence[int],
    response_start: int,
    context_length: int,
    trajectory_id: str = "",
    metadata: dict[str, Any] | None = None,
) -> Trajectory:
    """Truncate (keeping the head) or pad to ``context_length`` and build masks."""
    raw = np.asarray(raw_tokens, dtype=np.int64).reshape(-1)
    if context_length < 1:
        raise InputError(f"context_length must be positive, got {context_length}")
    if not 0 <= response_start < raw.shape[0]:
        raise InputError(f"response_start={response_start} outside [0, {raw.shape[0]})")
    kept = raw[:context_length]
    n_valid = kept.shape[0]
    positions = np.arange(context_length)
    attention = positions < n_valid
    response = attention & (positions >= response_start)
    if not response.any():
        raise EmptyResponseError(
            f"truncation to {context_length} tokens removes every response token "
            f"(response_start={response_start})"
        )
    tokens = np.full(context_length, PAD_ID, dtype=np.int64)
    tokens[:n_valid] = kept
    return Trajectory(trajectory_id, tokens, response, attention, dict(metadata or {}))


class ByteTokenizer:
    """UTF-8 byte-level tokenizer for self-contained demos (vocabulary of 256)."""

    vocab_size = 256

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: Sequence[int]) -> str:
        return bytes(int(i) for i in ids).decode("utf-8", errors="replace")


# --------------------------------------------------------------------------
# forward / backward


def _rmsnorm(x, gain):
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + _NORM_EPS)
    return x * r * gain, r


def _rmsnorm_backward(x, r, gain, dy):
    gdy = dy * gain
    d = x.shape[-1]
    return r * gdy - x * (r ** 3) * np.sum(gdy * x, axis=-1, keepdims=True) / d


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _valid_inputs(model: ProbeModel, trajectory: Trajectory):
    cfg = model.config
    n = trajectory.n_valid
    tokens = trajectory.tokens[:n]
    if n > cfg.max_context:
        raise InputError(f"trajectory has {n} valid tokens, model max_context is {cfg.max_context}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        bad = int(tokens[(tokens < 0) | (tokens >= cfg.vocab_size)][0])
        raise InputError(f"token id {bad} outside vocabulary of size {cfg.vocab_size}")
    # position t predicts token t+1; it counts only when t+1 is a response token
    target_rows = np.flatnonzero(trajectory.response_mask[1:n])
    if target_rows.size == 0:
        raise EmptyResponseError(f"trajectory {trajectory.trajectory_id!r} has no predictable response token")
    return tokens, target_rows


def _forward(p: Mapping[str, np.ndarray], cfg: ProbeModelConfig, tokens, target_rows, keep_cache: bool):
    # Padding never enters: only the valid prefix is run. With causal attention
    # and tail padding this is identical to masking the padded positions.
    T = tokens.shape[0]
    H, dh = cfg.num_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(dh)
    causal = np.triu(np.ones((T, T), dtype=bool), k=1)

    h = p["embed"][tokens] + p["pos"][:T]
    caches = []
    for layer in range(cfg.num_layers):
        pre = f"layer{layer}."
        a, r1 = _rmsnorm(h, p[pre + "norm_attn"])
        q = (a @ p[pre + "W_q"]).reshape(T, H, dh).transpose(1, 0, 2)
        k = (a @ p[pre + "W_k"]).reshape(T, H, dh).transpose(1, 0, 2)
        v = (a @ p[pre + "W_v"]).reshape(T, H, dh).transpose(1, 0, 2)
        s = (q @ k.transpose(0, 2, 1)) * scale
        s[:, causal] = -np.inf
        s -= s.max(axis=-1, keepdims=True)
        att = np.exp(s)
        att /= att.sum(axis=-1, keepdims=True)
        o = (att @ v).transpose(1, 0, 2).reshape(T, H * dh)
        h_mid = h + o @ p[pre + "W_o"]

        b, r2 = _rmsnorm(h_mid, p[pre + "norm_ffn"])
        gate = b @ p[pre + "W_gate"]
        up = b @ p[pre + "W_up"]
        sig = _sigmoid(gate)
        m = gate * sig * up
        h_out = h_mid + m @ p[pre + "W_down"]
        if keep_cache:
            caches.append((h, a, r1, q, k, v, att, o, h_mid, b, r2, gate, up, sig, m))
        h = h_out

    z, rf = _rmsnorm(h, p["final_norm"])
    logits = z[target_rows] @ p["unembed"]
    logits -= logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(logits).sum(axis=-1))
    targets = tokens[target_rows + 1]
    nll = lse - logits[np.arange(target_rows.size), targets]
    loss = float(np.sum(nll) / target_rows.size)
    if not keep_cache:
        return loss, None
    return loss, (caches, h, z, rf, logits, lse, targets)


def _backward(model: ProbeModel, tokens, target_rows, loss_scale: float = 1.0):
    """Yield ``(group_name, gradient)`` for each probed group, output side first.

    The first item yielded is ``(None, loss)``. Each gradient is created just
    before it is yielded and not referenced afterwards, so a consumer that
    reduces and drops it keeps a single group gradient alive at a time.
    """
    p, cfg = model.params, model.config
    loss, cache = _forward(p, cfg, tokens, target_rows, keep_cache=True)
    yield None, loss * loss_scale
    caches, h_final, z, rf, logits, lse, targets = cache
    T = tokens.shape[0]
    H, dh = cfg.num_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(dh)
    n_t = target_rows.size

    dlogits = np.exp(logits - lse[:, None])
    dlogits[np.arange(n_t), targets] -= 1.0
    dlogits *= loss_scale / n_t
    dz = np.zeros((T, cfg.model_dim))
    dz[target_rows] = dlogits @ p["unembed"].T
    dres = _rmsnorm_backward(h_final, rf, p["final_norm"], dz)

    for layer in reversed(range(cfg.num_layers)):
        pre = f"layer{layer}."
        h, a, r1, q, k, v, att, o, h_mid, b, r2, gate, up, sig, m = caches[layer]

        yield pre + "W_down", m.T @ dres
        dm = dres @ p[pre + "W_down"].T
        dgate = dm * up * (sig * (1.0 + gate * (1.0 - sig)))
        dup = dm * gate * sig
        yield pre + "W_gate", b.T @ dgate
        yield pre + "W_up", b.T @ dup
        db = dgate @ p[pre + "W_gate"].T + dup @ p[pre + "W_up"].T
        dres_mid = dres + _rmsnorm_backward(h_mid, r2, p[pre + "norm_ffn"], db)

        yield pre + "W_o", o.T @ dres_mid
        do = (dres_mid @ p[pre + "W_o"].T).reshape(T, H, dh).transpose(1, 0, 2)
        datt = do @ v.transpose(0, 2, 1)
        dv = att.transpose(0, 2, 1) @ do
        ds = att * (datt - np.sum(datt * att, axis=-1, keepdims=True)) * scale
        dq = (ds @ k).transpose(1, 0, 2).reshape(T, H * dh)
        dk = (ds.transpose(0, 2, 1) @ q).transpose(1, 0, 2).reshape(T, H * dh)
        dv = dv.transpose(1, 0, 2).reshape(T, H * dh)
        yield pre + "W_q", a.T @ dq
        yield pre + "W_k", a.T @ dk
        yield pre + "W_v", a.T @ dv
        if layer == 0:
            return
        da = dq @ p[pre + "W_q"].T + dk @ p[pre + "W_k"].T + dv @ p[pre + "W_v"].T
        dres = dres_mid + _rmsnorm_backward(h, r1, p[pre + "norm_attn"], da)


def _loss_and_norms(model: ProbeModel, trajectory: Trajectory, loss_scale: float = 1.0):
    tokens, target_rows = _valid_inputs(model, trajectory)
    index = {name: i for i, name in enumerate(model.group_names)}
    norms = np.empty(model.num_groups, dtype=np.float64)
    steps = _backward(model, tokens, target_rows, loss_scale)
    _, loss = next(steps)
    for name, grad in steps:
        norms[index[name]] = math.sqrt(float(np.sum(grad * grad)))
        del grad
    return loss, norms


def _analytic_gradient(model: ProbeModel, trajectory: Trajectory, group_index: int) -> np.ndarray:
    tokens, target_rows = _valid_inputs(model, trajectory)
    wanted = model.group_names[group_index]
    steps = _backward(model, tokens, target_rows)
    next(steps)
    for name, grad in steps:
        if name == wanted:
            return grad
    raise KeyError(wanted)


def forward_loss(model: ProbeModel, trajectory: Trajectory) -> float:
    """Mean next-token NLL over positions whose next token is a response token."""
    tokens, target_rows = _valid_inputs(model, trajectory)
    loss, _ = _forward(model.params, model.config, tokens, target_rows, keep_cache=False)
    return loss


def probe_gradients(model: ProbeModel, trajectory: Trajectory) -> GradientVector:
    """Frobenius norm of d(loss)/dW for every probed projection; weights are not touched."""
    loss, norms = _loss_and_norms(model, trajectory)
    return GradientVector(
        trajectory_id=trajectory.trajectory_id,
        norms=norms,
        group_names=model.group_names,
        group_param_counts=model.group_param_counts,
        loss_value=loss,
    )


def finite_difference_check(
    model: ProbeModel,
    trajectory: Trajectory,
    group_index: int,
    entry_sample: Sequence[tuple[int, int]],
    step: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Each sampled entry is perturbed by ``+-step`` on a private copy of the
    matrix, so ``model`` is never modified. If both perturbed losses are
    bitwise equal for some entry a :class:`DegenerateStepWarning` is issued
    and that entry's numeric gradient is taken as 0.
    """
    if not step > 0 or not math.isfinite(step):
        raise InputError(f"step must be a positive finite number, got {step!r}")
    if not 0 <= group_index < model.num_groups:
        raise InputError(f"group_index {group_index} outside [0, {model.num_groups})")
    name = model.group_names[group_index]
    base = model.params[name]
    analytic = _analytic_gradient(model, trajectory, group_index)
    tokens, target_rows = _valid_inputs(model, trajectory)

    def loss_with(w):
        params = dict(model.params)
        params[name] = w
        return _forward(params, model.config, tokens, target_rows, keep_cache=False)[0]

    worst = 0.0
    degenerate = 0
    for i, j in entry_sample:
        if not (0 <= i < base.shape[0] and 0 <= j < base.shape[1]):
            raise InputError(f"entry ({i}, {j}) outside matrix of shape {base.shape}")
        w = base.copy()
        w[i, j] = base[i, j] + step
        plus = loss_with(w)
        w[i, j] = base[i, j] - step
        minus = loss_with(w)
        if plus == minus:
            degenerate += 1
            numeric = 0.0
        else:
            numeric = (plus - minus) / (2.0 * step)
        a = float(analytic[i, j])
        denom = max(abs(a), abs(numeric))
        if denom > 0:
            worst = max(worst, abs(a - numeric) / denom)
    if degenerate:
        warnings.warn(
            f"{degenerate} of {len(entry_sample)} entries gave bitwise-equal losses at step={step}",
            DegenerateStepWarning,
            stacklevel=2,
        )
    return worst


def _probe_with_loss_scale(model: ProbeModel, trajectory: Trajectory, loss_scale: float) -> GradientVector:
    # test hook for the gradient-linearity property; not used by the pipeline
    loss, norms = _loss_and_norms(model, trajectory, loss_scale)
    return GradientVector(trajectory.trajectory_id, norms, model.group_names,
                          model.group_param_counts, loss)
