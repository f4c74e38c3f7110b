"""Synthetic inputs for demos and tests."""

from __future__ import annotations

import numpy as np

from .ingest import corpus_record
from .probe import ByteTokenizer, GradientVector

_PROMPTS = [
    "Find a red cotton shirt under 30 dollars.",
    "Put a clean mug in the coffee machine.",
    "Search for wireless earbuds with noise cancelling.",
    "Heat the apple and place it on the table.",
    "Buy a pack of AA batteries, 24 count.",
    "Examine the book under the desk lamp.",
]
_ACTIONS = [
    "search[{}]", "click[Buy Now]", "go to countertop 1", "take mug 1 from cabinet 2",
    "open fridge 1", "click[< Prev]", "think: the item is not here, check the drawer",
    "put apple 1 in/on microwave 1", "click[size: large]",
]


def demo_corpus_records(n: int = 10, seed: int = 0, n_truncated: int = 0, context_length: int = 2048) -> list[dict]:
    """Byte-tokenized prompt/response records.

    ``n_truncated`` of the ``n`` records get a prompt longer than
    ``context_length`` so their response is removed by truncation.
    """
    rng = np.random.default_rng(seed)
    tok = ByteTokenizer()
    out = []
    for i in range(n):
        prompt = _PROMPTS[int(rng.integers(len(_PROMPTS)))]
        steps = [_ACTIONS[int(j)] for j in rng.integers(len(_ACTIONS), size=int(rng.integers(2, 6)))]
        response = " > ".join(s.format(prompt.split()[1]) for s in steps)
        if i >= n - n_truncated:
            prompt = (prompt + " ") * (context_length // len(prompt) + 2)
        p_ids = tok.encode(prompt)
        out.append(corpus_record(f"traj-{i:04d}", p_ids + tok.encode(response), len(p_ids), {"demo": True}))
    return out


def concentrated_vector(rng: np.random.Generator, n_groups: int, dominant_mass: float = 0.95) -> np.ndarray:
    """One random group carries ``dominant_mass`` of the total norm mass."""
    rest = rng.dirichlet(np.ones(n_groups - 1)) * (1.0 - dominant_mass)
    g = np.insert(rest, int(rng.integers(n_groups)), dominant_mass)
    return g * rng.uniform(0.1, 10.0)


def near_uniform_vector(rng: np.random.Generator, n_groups: int, max_ratio: float = 1.2) -> np.ndarray:
    """Entries within a factor ``max_ratio`` of each other."""
    return rng.uniform(1.0, max_ratio, size=n_groups) * rng.uniform(0.1, 10.0)


def synthetic_gradient_corpus(
    n_concentrated: int, n_uniform: int, n_groups: int = 14, seed: int = 0
) -> tuple[list[GradientVector], set[str]]:
    """Mixed corpus; returns the vectors and the ids of the concentrated half."""
    rng = np.random.default_rng(seed)
    names = tuple(f"group{j}" for j in range(n_groups))
    counts = (1,) * n_groups
    vectors, concentrated = [], set()
    for i in range(n_concentrated + n_uniform):
        tid = f"s{i:05d}"
        if i < n_concentrated:
            g = concentrated_vector(rng, n_groups)
            concentrated.add(tid)
        else:
            g = near_uniform_vector(rng, n_groups)
        vectors.append(GradientVector(tid, g, names, counts, 0.0, source="synthetic"))
    order = rng.permutation(len(vectors))
    return [vectors[i] for i in order], concentrated
