"""Top-1 accuracy, top-1 retrieval recall and the client-server representation gap.

Argmax ties always resolve to the lowest index.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DegenerateFeatureError, DimensionError


def acc_at_1(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise DimensionError(f"scores {scores.shape} do not match labels {labels.shape}")
    if scores.shape[0] == 0:
        raise ContractError("accuracy of zero predictions")
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def recall_at_1(sim, direction: str = "i2t") -> float:
    """Fraction of queries whose best match is their own pair (the diagonal).

    ``sim[i, j]`` scores image i against text j; ``i2t`` ranks each row,
    ``t2i`` ranks each column.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got {sim.shape}")
    n = sim.shape[0]
    if n == 0:
        raise ContractError("recall over an empty matrix")
    if direction == "i2t":
        hits = np.argmax(sim, axis=1) == np.arange(n)
    elif direction == "t2i":
        hits = np.argmax(sim, axis=0) == np.arange(n)
    else:
        raise ContractError(f"direction must be 'i2t' or 't2i', got {direction!r}")
    return float(np.mean(hits))


def _unit(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateFeatureError("zero-norm feature row")
    return x / norms


def cosine_sim_matrix(a, b) -> np.ndarray:
    return _unit(np.asarray(a, dtype=np.float64)) @ _unit(np.asarray(b, dtype=np.float64)).T


def retrieval(img_feats, txt_feats) -> tuple[float, float]:
    """(i2t R@1, t2i R@1) under cosine similarity."""
    sim = cosine_sim_matrix(img_feats, txt_feats)
    return recall_at_1(sim, "i2t"), recall_at_1(sim, "t2i")


def rep_gap(client_feats, global_feats) -> float:
    """Mean cosine distance 1 - cos(client_k, global_k) over aligned samples."""
    a = np.asarray(client_feats, dtype=np.float64)
    b = np.asarray(global_feats, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"rep_gap: {a.shape} vs {b.shape}")
    cos = np.sum(_unit(a) * _unit(b), axis=1)
    return float(np.mean(1.0 - cos))
