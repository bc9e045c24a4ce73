"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
The lines are also repeated in the pytest terminal summary.
"""

import functools
import math
import operator
import sys

import numpy as np

from fedafd import RunConfig, run
from fedafd import tensor as T
from fedafd.baa import AdvBatch, adv_losses, adv_terms, adv_total
from fedafd.cli import main as cli_main
from fedafd.config import with_updates
from fedafd.gff import fuse
from fedafd.nets import Discriminator, Gate
from fedafd.protocol import build, client_update, comm_cost, global_public_features, PublicExchange
from fedafd.sed import aggregate_teacher, aggregation_weights, scores_from_cosines, sed_group, similarity_scores
from fedafd.synthdata import label_skew, partition_dirichlet, partition_iid, partition_shards

from acceptance_log import criterion
from oracles import GRAD_TOL, assert_exact_cover, check_inputs, check_params, composed_cases, op_cases

SEEDS = range(5)


def test_criterion_1_gradients():
    with criterion(1, "autodiff matches central differences (rel err <= 1e-4)", budget_s=30) as info:
        worst, count = 0.0, 0
        for name, make in op_cases().items():
            for seed in range(4):
                arrays, build_fn = make(np.random.default_rng(1000 + seed))
                err = check_inputs(build_fn, arrays)
                assert err <= GRAD_TOL, f"{name} seed {seed}: {err:.2e}"
                worst, count = max(worst, err), count + 1
        for name, make in composed_cases().items():
            for seed in range(5):
                loss_fn, params = make(seed)
                err = check_params(loss_fn, params)
                assert err <= GRAD_TOL, f"{name} seed {seed}: {err:.2e}"
                worst, count = max(worst, err), count + 1
        assert count >= 100
        info["note"] = f"{count} instances, worst {worst:.1e}"


def test_criterion_2_sed_formulas():
    with criterion(2, "similarity scores, weights and teacher (examples + 1000 fuzz cases)", budget_s=10) as info:
        s = scores_from_cosines(np.array([[0.9, 0.1], [0.2, 0.7]]))[0]
        assert round(s, 4) == round(0.9 - math.log(math.exp(0.9) + math.exp(0.1)), 4) == -0.3711
        s = similarity_scores(np.eye(2), np.eye(2))
        assert all(round(v, 4) == -0.3133 for v in s)
        w = aggregation_weights([-0.1, -0.9])
        assert (round(w[0], 4), round(w[1], 4)) == (0.69, 0.31)
        t = aggregate_teacher(np.array([0.69, 0.31]), np.array([[[1.0, 0.0]], [[0.0, 1.0]]]))
        assert np.allclose(t, [[0.69, 0.31]], atol=1e-15)
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n_clients, n, d = rng.integers(1, 6), rng.integers(1, 8), rng.integers(2, 6)
            g = rng.normal(size=(n, d))
            feats = [rng.normal(size=(n, d)) for _ in range(n_clients)]
            agg = sed_group(feats, g)
            assert np.all(agg.weights > 0) and np.allclose(agg.weights.sum(axis=0), 1.0, atol=1e-10, rtol=0)
            shift = rng.uniform(-3, 3)
            cos = rng.uniform(-1, 1, size=(n, n))
            assert np.allclose(scores_from_cosines(cos + shift), scores_from_cosines(cos), atol=1e-10, rtol=0)
            assert np.allclose(aggregation_weights(agg.scores + shift), agg.weights, atol=1e-10, rtol=0)
            scaled = sed_group([f * rng.uniform(0.01, 100) for f in feats], g)
            assert np.allclose(scaled.scores, agg.scores, atol=1e-10, rtol=0)
            assert np.allclose(scaled.weights, agg.weights, atol=1e-10, rtol=0)
        info["note"] = "examples -0.3711 -0.3133 (0.6900, 0.3100) (0.69, 0.31)"


def test_criterion_3_communication_cost(capsys):
    with criterion(3, "communication cost table (19.54 / 49.26 / 68.80 MB, K=10 -> M/10)", budget_s=1) as info:
        enc = round(29.72 * 1024 ** 2)
        cost = comm_cost(with_updates(RunConfig(), public_size=10_000, dim=256, cache_interval=10), enc)
        assert abs(cost.upload_mb - 19.54) <= 0.01
        assert abs(cost.download_mb - 49.26) <= 0.01
        assert abs(cost.sum_mb - 68.80) <= 0.01
        assert cost.amortized_encoder_bytes == enc / 10
        assert 1 - cost.amortized_encoder_bytes / cost.encoder_bytes == 0.9
        assert cli_main(["cost", "--public-size", "10000", "--dim", "256", "--encoder-mb", "29.72"]) == 0
        out = capsys.readouterr().out
        assert "19.54" in out and "49.26" in out and "68.80" in out
        info["note"] = f"{cost.upload_mb:.2f} / {cost.download_mb:.2f} / {cost.sum_mb:.2f}"


def test_criterion_4_gff_invariants():
    with criterion(4, "fusion identity, betweenness, frozen global encoder", budget_s=10) as info:
        rng = np.random.default_rng(4)
        gates = [Gate(8, s, ("g",)) for s in range(10)]
        for i in range(1000):
            gate = gates[i % 10]
            n = int(rng.integers(2, 6))
            scale = rng.uniform(0.01, 50)
            v = scale * rng.normal(size=(n, 8))
            assert np.max(np.abs(fuse(v, v, gate).fused.data - v)) <= 1e-12
            l, g = scale * rng.normal(size=(n, 8)), scale * rng.normal(size=(n, 8))
            f = fuse(l, g, gate).fused.data
            tol = 1e-12 * scale
            assert np.all(f >= np.minimum(l, g) - tol) and np.all(f <= np.maximum(l, g) + tol)
        config = with_updates(RunConfig(), public_size=64, **{"data.samples_per_class": 40})
        data, server, clients = build(config)
        exchange = PublicExchange(0, global_public_features(server, data.public),
                                  {m: e for m, e in server.encoders.items()})
        for c in (clients[0], clients[-1]):
            client_update(c, exchange, data.public, config)
            for m, enc in c.cached_encoders.items():
                for p, q in zip(enc.parameters(), server.encoders[m].parameters()):
                    assert p.grad is None and np.array_equal(p.data, q.data)
        info["note"] = "1000 triples; cached global encoder untouched by client training"


def test_criterion_5_baa_invariants():
    with criterion(5, "L_adv <= 0, stub value -2.7726, beta=0 == no alignment", budget_s=30) as info:
        def half(x):
            return T.Tensor(np.full(T.as_tensor(x).shape[0], 0.5))

        l_in, l_cr = adv_terms(AdvBatch(np.ones((3, 4)), np.zeros((3, 4)), np.zeros((3, 4))), half, half)
        stub = adv_total(l_in, l_cr).item()
        assert abs(stub - (-2.7726)) <= 1e-4
        rng = np.random.default_rng(5)
        for i in range(200):
            d_in, d_cr = Discriminator(8, i, ("i",)), Discriminator(8, i, ("c",))
            b = AdvBatch(rng.uniform(0.1, 30) * rng.normal(size=(4, 8)), rng.normal(size=(4, 8)),
                         rng.normal(size=(4, 8)))
            a, c = adv_losses(b, d_in, d_cr)
            assert a.item() <= 0 and c.item() <= 0
        zero = run(with_updates(RunConfig(), beta=0.0))
        off = run(with_updates(RunConfig(), **{"ablations.baa": False}))
        logged = [l_adv for rec in zero.records for _, l_adv in rec.client_losses.values()]
        assert all(v <= 0 for v in logged)
        for ca, cb in zip(zero.clients, off.clients):
            for name, mod in ca.modules().items():
                if name.startswith(("din_", "dcr_")):
                    continue
                other = cb.modules()[name]
                for k, v in mod.state().items():
                    assert np.array_equal(v, other.state()[k]), f"client {ca.cid} {name} {k}"
        for m in "ab":
            for p, q in zip(zero.server.encoders[m].parameters(), off.server.encoders[m].parameters()):
                assert np.array_equal(p.data, q.data)
        info["note"] = f"stub {stub:.4f}; {len(logged)} logged L_adv all <= 0"


VARIANTS = {
    "fedafd": {},
    "local": {"strategy": "local"},
    "uniform_kd": {"strategy": "avg_uniform", "ablations.baa": False, "ablations.gff": False},
    "wo_gff": {"ablations.gff": False},
    "wo_sed": {"ablations.sed": False},
    "beta0": {"beta": 0.0},
}


@functools.lru_cache(maxsize=None)
def direction_runs():
    """(variant -> list over seeds of (server rsum, mean client metric, rep-gap reduction))."""
    out = {k: [] for k in VARIANTS}
    for seed in SEEDS:
        for name, changes in VARIANTS.items():
            res = run(with_updates(RunConfig(), seed=seed, **changes))
            first, last = res.records[0].report, res.records[-1].report
            out[name].append((last.server_rsum, last.mean_client_score, first.mean_rep_gap - last.mean_rep_gap))
    return {k: np.array(v) for k, v in out.items()}


def _wins(a, b, col, op=operator.ge):
    return int(sum(op(x, y) for x, y in zip(a[:, col], b[:, col])))


def test_criterion_6_direction_of_effect():
    with criterion(6, "direction of effect over 5 seeds (a-d each >= 4/5)", budget_s=600) as info:
        r = direction_runs()
        a = _wins(r["fedafd"], r["local"], 0)
        b = _wins(r["fedafd"], r["uniform_kd"], 1)
        c = _wins(r["wo_gff"], r["fedafd"], 1, operator.lt)
        d = _wins(r["fedafd"], r["wo_sed"], 0)
        info["note"] = f"a {a}/5  b {b}/5  c {c}/5  d {d}/5"
        print(f"  server rsum  fedafd {np.round(r['fedafd'][:, 0], 1)}  local {np.round(r['local'][:, 0], 1)}  "
              f"wo_sed {np.round(r['wo_sed'][:, 0], 1)}")
        print(f"  client mean  fedafd {np.round(r['fedafd'][:, 1], 3)}  uniform_kd {np.round(r['uniform_kd'][:, 1], 3)}  "
              f"wo_gff {np.round(r['wo_gff'][:, 1], 3)}")
        assert min(a, b, c, d) >= 4, info["note"]


def test_criterion_7_alignment_diagnostic():
    with criterion(7, "rep_gap shrinks with alignment, less without (beta=0)") as info:
        r = direction_runs()
        shrinks = int(np.sum(r["fedafd"][:, 2] > 0))
        with_baa, without = float(np.mean(r["fedafd"][:, 2])), float(np.mean(r["beta0"][:, 2]))
        info["note"] = f"{shrinks}/5 seeds shrink; mean reduction {with_baa:.4f} vs beta=0 {without:.4f}"
        assert shrinks >= 4 and without < with_baa, info["note"]


def test_criterion_8_deterministic_replay(tmp_path):
    with criterion(8, "identical config and seed give byte-identical round_log.csv", budget_s=120) as info:
        for name in ("one", "two"):
            assert cli_main(["train", "--seed", "3", "--out", str(tmp_path / name), "-q"]) == 0
        one = (tmp_path / "one" / "round_log.csv").read_bytes()
        two = (tmp_path / "two" / "round_log.csv").read_bytes()
        assert one == two and len(one) > 0
        rows = len(one.splitlines()) - 1
        info["note"] = f"{len(one)} bytes, {rows} rows"


def test_criterion_9_partitioners():
    with criterion(9, "partition cover/disjointness (100 configs), Dirichlet skew (200 seeds)", budget_s=30) as info:
        rng = np.random.default_rng(9)
        for i in range(100):
            k = int(rng.integers(1, 10))
            kind = ("iid", "dirichlet", "shards")[i % 3]
            if kind == "shards":
                spc = int(rng.integers(1, 4))
                n = k * spc * int(rng.integers(1, 20))
                labels = rng.integers(0, 5, size=n)
                parts = partition_shards(labels, k, spc, i)
            else:
                n = int(rng.integers(k, 400))
                labels = rng.integers(0, 5, size=n)
                parts = (partition_iid(n, k, i) if kind == "iid"
                         else partition_dirichlet(labels, k, float(rng.uniform(0.05, 10)), i))
            assert_exact_cover(parts, n)
        labels = np.repeat(np.arange(4), 50)
        skew = {a: [label_skew(partition_dirichlet(labels, 5, a, s), labels, 4) for s in range(200)]
                for a in (0.1, 100.0)}
        wins = sum(lo > hi for lo, hi in zip(skew[0.1], skew[100.0]))
        info["note"] = (f"skew alpha=0.1 {np.mean(skew[0.1]):.3f} vs alpha=100 {np.mean(skew[100.0]):.3f}, "
                        f"per-seed {wins}/200")
        assert wins == 200, info["note"]


if __name__ == "__main__":
    import pytest

    sys.exit(pytest.main([__file__, "-q", "-s"]))
