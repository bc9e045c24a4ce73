"""Similarity-guided ensemble distillation on the public set."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from . import tensor as T
from .errors import ConfigError, ContractError, DegenerateFeatureError, DimensionError


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateFeatureError("zero-norm feature row; cosine similarity undefined")
    return x / norms


def similarity_scores(client_feats: np.ndarray, global_feats: np.ndarray) -> np.ndarray:
    """Log-softmax over global samples j of cos(client_k, global_j), taken at j = k."""
    client_feats, global_feats = np.asarray(client_feats), np.asarray(global_feats)
    if client_feats.shape != global_feats.shape or client_feats.ndim != 2:
        raise DimensionError(f"scores need matching (|P|, d) matrices, got {client_feats.shape} and {global_feats.shape}")
    return scores_from_cosines(_unit_rows(client_feats) @ _unit_rows(global_feats).T)


def scores_from_cosines(cos) -> np.ndarray:
    """Row-wise log-softmax of a square cosine matrix, read off the diagonal."""
    cos = np.asarray(cos, dtype=np.float64)
    if cos.ndim != 2 or cos.shape[0] != cos.shape[1]:
        raise DimensionError(f"cosine matrix must be square, got {cos.shape}")
    return np.diag(cos) - logsumexp(cos, axis=1)


def aggregation_weights(scores) -> np.ndarray:
    """Softmax over clients (axis 0) of per-sample scores.

    ``scores`` is ``(n_clients,)`` for a single sample or ``(n_clients, |P|)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim not in (1, 2) or scores.shape[0] == 0:
        raise ContractError("aggregation over an empty modality group")
    return softmax(scores, axis=0)


def aggregate_teacher(weights: np.ndarray, client_feats) -> np.ndarray:
    """Per-sample weighted sum of client features; reduction in client order."""
    weights = np.asarray(weights, dtype=np.float64)
    feats = np.asarray(client_feats, dtype=np.float64)
    if weights.ndim == 1:
        weights = weights[:, None]
    if feats.ndim != 3 or weights.shape[0] != feats.shape[0] or weights.shape[1] not in (1, feats.shape[1]):
        raise ContractError(f"weights {weights.shape} misaligned with features {feats.shape}")
    out = np.zeros(feats.shape[1:])
    for c in range(feats.shape[0]):
        out += weights[c][:, None] * feats[c]
    return out


@dataclass
class GroupAggregate:
    features: np.ndarray
    weights: np.ndarray
    scores: np.ndarray | None = None
    members: list = field(default_factory=list)


@dataclass
class TeacherAggregate:
    """Teacher features per modality key (``"a"`` image-like, ``"b"`` text-like)."""

    groups: dict[str, GroupAggregate]

    def features(self, modality: str) -> np.ndarray | None:
        g = self.groups.get(modality)
        return None if g is None else g.features


def sed_group(client_feats: list[np.ndarray], global_feats: np.ndarray, members=None) -> GroupAggregate:
    if not client_feats:
        raise ContractError("aggregation over an empty modality group")
    scores = np.stack([similarity_scores(f, global_feats) for f in client_feats])
    weights = aggregation_weights(scores)
    return GroupAggregate(aggregate_teacher(weights, client_feats), weights, scores, list(members or []))


def kd_loss(student: dict[str, T.Tensor], teacher: dict[str, np.ndarray], squared: bool = False) -> T.Tensor:
    """Mean over samples of the summed per-modality L2 distances to the teacher."""
    total = None
    for mod, s in student.items():
        diff = s - T.Tensor(teacher[mod])
        per = T.sum(diff * diff, axis=1) if squared else T.l2_norm(diff, axis=1)
        total = per if total is None else total + per
    if total is None:
        raise ContractError("distillation with no teacher modality")
    return T.mean(total)


def kd_update(
    server,
    teacher: TeacherAggregate,
    x_public: dict[str, np.ndarray],
    gamma: float,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    squared: bool = False,
) -> float:
    """One distillation pass over the public set: ``w_g <- w_g - lr*gamma*grad``.

    Student features are recomputed from the current server weights on every
    minibatch. Returns the sample-weighted mean distillation loss.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    mods = [m for m in ("a", "b") if teacher.features(m) is not None]
    if not mods:
        return 0.0
    n = len(teacher.features(mods[0]))
    order = rng.permutation(n)
    params = [p for m in mods for p in server.encoders[m].parameters()]
    total = 0.0
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] == 1:
        starts.pop()  # a lone trailing row joins the previous batch (batch norm needs 2)
    for i, start in enumerate(starts):
        idx = order[start : starts[i + 1] if i + 1 < len(starts) else n]
        student = {m: server.encoders[m](x_public[m][idx]) for m in mods}
        loss = kd_loss(student, {m: teacher.features(m)[idx] for m in mods}, squared)
        total += loss.item() * len(idx)
        if lr * gamma > 0 and loss.requires_grad:
            T.zero_grad(params)
            T.backward(loss)
            T.sgd_step(params, lr * gamma)
    return total / n
