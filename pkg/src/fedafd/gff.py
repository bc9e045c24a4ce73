"""Attention-gated fusion of local and frozen-global features, and the task step."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

TEMPERATURE = 0.07


@dataclass
class FusionTriple:
    local: Tensor
    global_: Tensor
    fused: Tensor
    intermediate: Tensor


def _mix(m: Tensor, local: Tensor, global_: Tensor) -> Tensor:
    # m*local + (1-m)*global written as global + m*(local-global)
    return global_ + m * (local - global_)


def fuse(local, global_, gate: Callable[[Tensor], Tensor]) -> FusionTriple:
    """Two-stage gated mix: first on local+global, then refined on the intermediate."""
    local, global_ = T.as_tensor(local), T.as_tensor(global_)
    if local.shape != global_.shape or local.ndim != 2:
        raise DimensionError(f"fuse: local {local.shape} vs global {global_.shape}")
    h = _mix(gate(local + global_), local, global_)
    fused = _mix(gate(h), local, global_)
    return FusionTriple(local, global_, fused, h)


def info_nce(a, b, temperature: float = TEMPERATURE) -> Tensor:
    """Symmetric contrastive loss; row i of ``a`` and ``b`` are the positive pair."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"info_nce: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n == 0:
        raise ContractError("contrastive loss of an empty batch")
    logits = T.cosine_matrix(a, b) * (1.0 / temperature)
    target = np.arange(n)
    return 0.5 * (T.cross_entropy(logits, target) + T.cross_entropy(T.transpose(logits), target))


def client_features(client, x: dict[str, np.ndarray], g: dict[str, np.ndarray] | None, use_gff: bool) -> dict[str, Tensor]:
    """Per-modality features fed to the task head: fused, or raw local when GFF is off."""
    out = {}
    for mod, enc in client.encoders.items():
        local = enc(x[mod])
        if use_gff:
            out[mod] = fuse(local, T.Tensor(g[mod]), client.gates[mod]).fused
        else:
            out[mod] = local
    return out


def task_loss(client, x: dict[str, np.ndarray], y: np.ndarray | None, g: dict[str, np.ndarray] | None, use_gff: bool) -> Tensor:
    feats = client_features(client, x, g, use_gff)
    if client.classifier is not None:
        (f,) = feats.values()
        return T.cross_entropy(client.classifier(f), y)
    return info_nce(feats["a"], feats["b"])


def task_params(client, use_gff: bool) -> list[Tensor]:
    params = [p for enc in client.encoders.values() for p in enc.parameters()]
    if use_gff:
        params += [p for gate in client.gates.values() for p in gate.parameters()]
    if client.classifier is not None:
        params += client.classifier.parameters()
    return params


def task_step(client, x, y, g, lr: float, use_gff: bool = True) -> float:
    """Descend the task loss in the client's encoders, gates and classifier.

    ``g`` holds frozen global-encoder features for the same private rows; it is
    wrapped as a constant so no gradient reaches the global encoder.
    """
    n = len(next(iter(x.values())))
    if n == 0:
        raise ContractError("task step on an empty batch")
    loss = task_loss(client, x, y, g, use_gff)
    params = task_params(client, use_gff)
    T.zero_grad(params)
    T.backward(loss)
    T.sgd_step(params, lr)
    return loss.item()
