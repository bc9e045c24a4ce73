"""Independent oracles: central finite differences and hand-evaluated formulas.

Nothing here calls into the autodiff backward pass; gradients are recovered
by perturbing inputs and re-running forward passes under ``no_grad``.
"""

from __future__ import annotations

import math

import numpy as np

from fedafd import tensor as T
from fedafd.baa import adv_terms, adv_total, AdvBatch
from fedafd.gff import fuse, info_nce
from fedafd.nets import Classifier, Discriminator, Encoder, Gate
from fedafd.sed import kd_loss

FD_STEP = 1e-5
GRAD_TOL = 1e-4


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(1e-8, float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


def fd_grad(f, arr: np.ndarray, eps: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr``, perturbed in place."""
    g = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + eps
        hi = f()
        arr[i] = old - eps
        lo = f()
        arr[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def check_inputs(build, arrays, eps: float = FD_STEP) -> float:
    """Worst relative error of d build(*inputs) / d inputs, autodiff vs differences."""
    leaves = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    T.backward(build(*leaves))
    work = [a.copy() for a in arrays]

    def f():
        with T.no_grad():
            return build(*[T.Tensor(w) for w in work]).item()

    return _joint_error([leaf.grad for leaf in leaves], [fd_grad(f, w, eps) for w in work])


def check_params(loss_fn, params, eps: float = FD_STEP) -> float:
    """Same check against module parameters, perturbing ``p.data`` in place."""
    T.zero_grad(params)
    T.backward(loss_fn())
    auto = [p.grad.copy() for p in params]

    def f():
        with T.no_grad():
            return loss_fn().item()

    return _joint_error(auto, [fd_grad(f, p.data, eps) for p in params])


def _joint_error(auto, numeric) -> float:
    # relative to the whole gradient vector: parameters whose exact gradient is
    # zero (a bias feeding batch norm) would otherwise divide roundoff by ~0
    return rel_error(np.concatenate([np.ravel(a) for a in auto]), np.concatenate([np.ravel(n) for n in numeric]))


def _away_from(x, points, margin=0.05):
    """Nudge entries so none sits within ``margin`` of a kink."""
    x = x.copy()
    for p in points:
        close = np.abs(x - p) < margin
        x[close] = p + np.where(x[close] >= p, margin, -margin) * 2
    return x


def _weighted(out, w):
    return T.sum(out * w)


def op_cases():
    """name -> factory(rng) returning (input arrays, build fn)."""

    def binary(op, positive_b=False):
        def make(rng):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(4,))
            if positive_b:
                b = np.sign(b) * (0.5 + np.abs(b))
            w = rng.normal(size=(3, 4))
            return [a, b], lambda x, y: _weighted(op(x, y), w)
        return make

    def unary(op, shape=(3, 4), transform=lambda x: x):
        def make(rng):
            a = transform(rng.normal(size=shape))
            out_shape = op(T.Tensor(a)).shape
            w = rng.normal(size=out_shape)
            return [a], lambda x: _weighted(op(x), w)
        return make

    def matmul(rng):
        a, b = rng.normal(size=(3, 5)), rng.normal(size=(5, 2))
        w = rng.normal(size=(3, 2))
        return [a, b], lambda x, y: _weighted(T.matmul(x, y), w)

    def bn_train(rng):
        x, gm, bt = rng.normal(size=(6, 3)), rng.normal(size=3), rng.normal(size=3)
        w = rng.normal(size=(6, 3))
        return [x, gm, bt], lambda a, g, b: _weighted(T.batch_norm(a, g, b, training=True), w)

    def bn_eval(rng):
        x, gm, bt = rng.normal(size=(6, 3)), rng.normal(size=3), rng.normal(size=3)
        rm, rv = rng.normal(size=3), 0.5 + rng.random(3)
        w = rng.normal(size=(6, 3))
        return [x, gm, bt], lambda a, g, b: _weighted(
            T.batch_norm(a, g, b, training=False, running_mean=rm, running_var=rv), w)

    def xent(rng):
        logits = rng.normal(size=(5, 4))
        y = rng.integers(0, 4, size=5)
        return [logits], lambda z: T.cross_entropy(z, y)

    def cos_pair(fn):
        def make(rng):
            a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
            w = rng.normal(size=fn(T.Tensor(a), T.Tensor(b)).shape)
            return [a, b], lambda x, y: _weighted(fn(x, y), w)
        return make

    positive = lambda x: 0.5 + np.abs(x)  # noqa: E731
    return {
        "add": binary(T.add),
        "sub": binary(T.sub),
        "mul": binary(T.mul),
        "div": binary(T.div, positive_b=True),
        "neg": unary(T.neg),
        "matmul": matmul,
        "transpose": unary(T.transpose),
        "sum_axis": unary(lambda x: T.sum(x, axis=0)),
        "sum_all": unary(lambda x: T.sum(x) * 1.0),
        "mean_keepdims": unary(lambda x: T.mean(x, axis=1, keepdims=True)),
        "leaky_relu": unary(T.leaky_relu, transform=lambda x: _away_from(x, [0.0])),
        "sigmoid": unary(T.sigmoid, transform=lambda x: 3 * x),
        "clip": unary(lambda x: T.clip(x, -0.5, 0.5), transform=lambda x: _away_from(x, [-0.5, 0.5])),
        "log": unary(T.log, transform=positive),
        "exp": unary(T.exp),
        "sqrt": unary(T.sqrt, transform=positive),
        "softmax": unary(T.softmax),
        "log_softmax": unary(lambda x: T.log_softmax(x, axis=0)),
        "l2_norm": unary(T.l2_norm),
        "normalize_rows": unary(T.normalize_rows),
        "cosine_similarity": cos_pair(T.cosine_similarity),
        "cosine_matrix": cos_pair(T.cosine_matrix),
        "batch_norm_train": bn_train,
        "batch_norm_eval": bn_eval,
        "cross_entropy": xent,
    }


def composed_cases():
    """name -> factory(seed) returning (loss_fn, params) over small real modules."""

    def encoder_infonce(seed):
        rng = np.random.default_rng(seed)
        ea, eb = Encoder(5, 6, 4, seed, ("a",)), Encoder(3, 6, 4, seed, ("b",))
        xa, xb = rng.normal(size=(6, 5)), rng.normal(size=(6, 3))
        return (lambda: info_nce(ea(xa), eb(xb))), ea.parameters() + eb.parameters()

    def discriminator_adv(seed):
        rng = np.random.default_rng(seed)
        enc = Encoder(5, 6, 8, seed, ("e",))
        d_in, d_cr = Discriminator(8, seed, ("in",)), Discriminator(8, seed, ("cr",))
        x = rng.normal(size=(5, 5))
        gs, gc = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))

        def loss():
            l_in, l_cr = adv_terms(AdvBatch(enc(x), gs, gc), d_in, d_cr)
            return adv_total(l_in, l_cr)

        return loss, enc.parameters() + d_in.parameters() + d_cr.parameters()

    def gate_fusion(seed):
        rng = np.random.default_rng(seed)
        enc, gate = Encoder(5, 6, 8, seed, ("e",)), Gate(8, seed, ("g",))
        clf = Classifier(8, 3, seed, ("c",))
        x, g = rng.normal(size=(6, 5)), rng.normal(size=(6, 8))
        y = rng.integers(0, 3, size=6)
        return (lambda: T.cross_entropy(clf(fuse(enc(x), T.Tensor(g), gate).fused), y)), (
            enc.parameters() + gate.parameters() + clf.parameters())

    def kd(seed):
        rng = np.random.default_rng(seed)
        ea, eb = Encoder(5, 6, 4, seed, ("a",)), Encoder(3, 6, 4, seed, ("b",))
        xa, xb = rng.normal(size=(5, 5)), rng.normal(size=(5, 3))
        teacher = {"a": rng.normal(size=(5, 4)), "b": rng.normal(size=(5, 4))}
        return (lambda: kd_loss({"a": ea(xa), "b": eb(xb)}, teacher)), ea.parameters() + eb.parameters()

    return {"encoder+info_nce": encoder_infonce, "discriminator+adv_loss": discriminator_adv,
            "gate+fusion+cross_entropy": gate_fusion, "encoder+kd_loss": kd}


# -- hand-evaluated formulas --------------------------------------------------

def score_oracle(cos_row, k):
    """log(exp(cos_k) / sum_j exp(cos_j)) evaluated with math, one sample."""
    return cos_row[k] - math.log(sum(math.exp(c) for c in cos_row))


def softmax_oracle(values):
    e = [math.exp(v) for v in values]
    return [x / sum(e) for x in e]


def assert_exact_cover(parts, n: int) -> None:
    """Every index in range(n) appears in exactly one part; no part is empty."""
    assert all(len(p) > 0 for p in parts), "empty client"
    flat = np.concatenate(parts)
    assert len(flat) == n, "sizes do not add up"
    assert np.array_equal(np.sort(flat), np.arange(n)), "overlap or gap"
