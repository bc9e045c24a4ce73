"""Bi-level adversarial alignment of client features to the server's.

A client branch owns an encoder and two discriminators. The intra-modal
discriminator separates local features from global features of the same
modality; the cross-modal one separates them from global features of the
other modality. Discriminators ascend the adversarial objective, the encoder
descends it (scaled by beta).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, InvariantViolation
from .nets import Discriminator, Encoder
from .tensor import Tensor

DiscFn = Callable[[Tensor], Tensor]


@dataclass
class AdvBatch:
    local_feats: Tensor | np.ndarray
    global_same: np.ndarray
    global_cross: np.ndarray
    sample_ids: np.ndarray | None = None

    def __post_init__(self):
        shapes = {np.shape(T.as_tensor(self.local_feats).data), np.shape(self.global_same), np.shape(self.global_cross)}
        if len(shapes) != 1:
            raise ContractError(f"adversarial batch shapes disagree: {sorted(shapes)}")
        shape = shapes.pop()
        if len(shape) != 2 or shape[0] == 0:
            raise ContractError("adversarial batch must be a nonempty (b, d) matrix")
        if self.sample_ids is not None and len(self.sample_ids) != shape[0]:
            raise ContractError("sample_ids length does not match the batch")


@dataclass
class AdvBranch:
    """Encoder plus its intra-/cross-modal discriminators for one modality."""

    modality: str
    encoder: Encoder
    d_in: Discriminator
    d_cr: Discriminator


def _checked_prob(p: Tensor) -> Tensor:
    v = p.data
    if not np.all((v > 0.0) & (v < 1.0)):
        raise InvariantViolation("discriminator output left the open interval (0, 1)")
    return p


def adv_terms(batch: AdvBatch, d_in: DiscFn, d_cr: DiscFn) -> tuple[Tensor, Tensor]:
    """Per-sample intra-modal and cross-modal terms, each of shape (b,)."""
    local = T.as_tensor(batch.local_feats)
    p_loc_in = _checked_prob(d_in(local))
    p_glob_in = _checked_prob(d_in(T.Tensor(batch.global_same)))
    p_loc_cr = _checked_prob(d_cr(local))
    p_glob_cr = _checked_prob(d_cr(T.Tensor(batch.global_cross)))
    l_in = T.log(p_glob_in) + T.log(1.0 - p_loc_in)
    l_cr = T.log(p_glob_cr) + T.log(1.0 - p_loc_cr)
    return l_in, l_cr


def adv_losses(batch: AdvBatch, d_in: DiscFn, d_cr: DiscFn) -> tuple[Tensor, Tensor]:
    """Batch means of the intra-modal and cross-modal objectives."""
    l_in, l_cr = adv_terms(batch, d_in, d_cr)
    return T.mean(l_in), T.mean(l_cr)


def adv_total(l_in, l_cr) -> Tensor:
    """Mean over public samples of the summed per-sample terms."""
    l_in, l_cr = T.as_tensor(l_in), T.as_tensor(l_cr)
    if l_in.shape != l_cr.shape or l_in.ndim != 1:
        raise ContractError(f"per-sample loss streams differ: {l_in.shape} vs {l_cr.shape}")
    if l_in.shape[0] == 0:
        raise ContractError("adversarial loss over an empty public set")
    return T.mean(l_in + l_cr)


def branch_adv_loss(branch: AdvBranch, local: Tensor, global_feats: dict[str, np.ndarray], other: str) -> Tensor:
    batch = AdvBatch(local, global_feats[branch.modality], global_feats[other])
    l_in, l_cr = adv_terms(batch, branch.d_in, branch.d_cr)
    return adv_total(l_in, l_cr)


def _other(modality: str) -> str:
    return "b" if modality == "a" else "a"


def baa_step(
    branches: Sequence[AdvBranch],
    x_public: dict[str, np.ndarray],
    global_public: dict[str, np.ndarray],
    beta: float,
    lr: float,
) -> float:
    """One alternating update on a public minibatch.

    ``x_public`` and ``global_public`` hold raw inputs and broadcast global
    features per modality key (``"a"``/``"b"``), restricted to the minibatch.
    Discriminators take an ascent step of size ``lr * beta`` with encoders
    frozen; then encoders descend ``beta * L_adv`` with discriminators frozen.
    Returns L_adv measured before either update.
    """
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")

    # discriminators: maximise L_adv against fixed local features
    with T.no_grad():
        local = {br.modality: br.encoder(x_public[br.modality]).data for br in branches}
    disc_loss = None
    for br in branches:
        term = branch_adv_loss(br, T.Tensor(local[br.modality]), global_public, _other(br.modality))
        disc_loss = term if disc_loss is None else disc_loss + term
    l_adv = disc_loss.item()
    disc_params = [p for br in branches for p in (*br.d_in.parameters(), *br.d_cr.parameters())]
    if lr * beta > 0:
        T.zero_grad(disc_params)
        T.backward(T.neg(disc_loss))
        T.sgd_step(disc_params, lr * beta)

    # encoders: minimise beta * L_adv against the updated, now fixed discriminators
    enc_params = [p for br in branches for p in br.encoder.parameters()]
    enc_loss = None
    for br in branches:
        term = branch_adv_loss(br, br.encoder(x_public[br.modality]), global_public, _other(br.modality))
        enc_loss = term if enc_loss is None else enc_loss + term
    T.zero_grad(enc_params)
    T.backward(beta * enc_loss)
    T.sgd_step(enc_params, lr)
    return l_adv
