import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedafd import tensor as T
from fedafd.errors import DimensionError
from fedafd.gff import fuse, info_nce, task_step
from fedafd.nets import Gate


def constant_gate(value):
    return lambda x: T.Tensor(np.full(T.as_tensor(x).shape, value))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_identity_and_betweenness(seed):
    rng = np.random.default_rng(seed)
    gate = Gate(8, seed % 97, ("g",))
    v = rng.normal(size=(4, 8)) * rng.uniform(0.1, 10)
    np.testing.assert_allclose(fuse(v, v, gate).fused.data, v, atol=1e-12, rtol=0)
    l, g = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    f = fuse(l, g, gate).fused.data
    lo, hi = np.minimum(l, g), np.maximum(l, g)
    assert np.all(f >= lo - 1e-12) and np.all(f <= hi + 1e-12)


def test_constant_gate_is_a_convex_mix():
    l, g = np.array([[2.0, 0.0]]), np.array([[0.0, 4.0]])
    out = fuse(l, g, constant_gate(0.25))
    np.testing.assert_allclose(out.intermediate.data, [[0.5, 3.0]])
    np.testing.assert_allclose(out.fused.data, [[0.5, 3.0]])


def test_fuse_shape_mismatch():
    with pytest.raises(DimensionError):
        fuse(np.ones((2, 3)), np.ones((2, 4)), constant_gate(0.5))


def test_info_nce_prefers_aligned_pairs(rng):
    a = rng.normal(size=(8, 6))
    aligned = info_nce(a, a).item()
    shuffled = info_nce(a, a[::-1].copy()).item()
    assert aligned < shuffled
    assert aligned < np.log(8)


class _Client:
    def __init__(self, enc, gate, clf):
        self.encoders, self.gates, self.classifier = {"a": enc}, {"a": gate}, clf


def test_task_step_never_touches_the_frozen_global_encoder(rng):
    from fedafd.nets import Classifier, Encoder

    global_enc = Encoder(5, 8, 8, 1, ("global",))
    client = _Client(Encoder(5, 8, 8, 0, ("e",)), Gate(8, 0, ("g",)), Classifier(8, 3, 0, ("c",)))
    x = rng.normal(size=(6, 5))
    y = rng.integers(0, 3, size=6)
    before = [p.data.copy() for p in global_enc.parameters()]
    with T.no_grad():
        g = global_enc(x).data
    local_before = [p.data.copy() for p in client.encoders["a"].parameters()]
    task_step(client, {"a": x}, y, {"a": g}, lr=0.1, use_gff=True)
    assert all(p.grad is None for p in global_enc.parameters())
    assert all(np.array_equal(a, p.data) for a, p in zip(before, global_enc.parameters()))
    assert not all(np.array_equal(a, p.data) for a, p in zip(local_before, client.encoders["a"].parameters()))
