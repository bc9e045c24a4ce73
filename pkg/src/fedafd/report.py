"""Per-round metric reports, CSV emission and state snapshots."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig
from .gff import client_features
from .metrics import acc_at_1, rep_gap, retrieval
from .protocol import ClientState, GlobalState, SimData, extract_public

ROUND_LOG_COLUMNS = ["round", "client_id", "l_task", "l_adv", "l_kd", "acc1", "i2t_r1", "t2i_r1", "rsum",
                     "rep_gap", "up_bytes", "down_bytes"]


@dataclass
class ClientMetrics:
    cid: int
    role: str
    acc1: float | None = None
    i2t: float | None = None
    t2i: float | None = None
    rep_gap: float = 0.0

    @property
    def score(self) -> float:
        """acc@1 for classifiers, mean of the two recalls for retrieval clients."""
        return self.acc1 if self.acc1 is not None else 0.5 * (self.i2t + self.t2i)


@dataclass
class MetricReport:
    round: int
    clients: list[ClientMetrics]
    server_i2t: float
    server_t2i: float

    @property
    def server_rsum(self) -> float:
        """Sum of the two server recalls, in percent."""
        return 100.0 * (self.server_i2t + self.server_t2i)

    @property
    def mean_client_score(self) -> float:
        return float(np.mean([c.score for c in self.clients]))

    @property
    def mean_rep_gap(self) -> float:
        return float(np.mean([c.rep_gap for c in self.clients]))


def evaluate(clients: list[ClientState], server: GlobalState, data: SimData, global_public: dict[str, np.ndarray],
             config: RunConfig, round_: int) -> MetricReport:
    use_gff = config.aggregation != "local" and config.ablations.gff
    out = []
    for c in clients:
        c.set_training(False)
        with T.no_grad():
            x = {m: c.test.modality(m) for m in c.modalities}
            feats = client_features(c, x, c.global_test, use_gff)
            m = ClientMetrics(c.cid, c.role)
            if c.classifier is not None:
                (f,) = feats.values()
                m.acc1 = acc_at_1(c.classifier(f).data, c.test.y)
            else:
                m.i2t, m.t2i = retrieval(feats["a"].data, feats["b"].data)
        up = extract_public(c, data.public, round_)
        m.rep_gap = float(np.mean([rep_gap(up.feats[k], global_public[k]) for k in c.modalities]))
        out.append(m)
    with T.no_grad():
        ia = server.encoders["a"](data.server_test.xa).data
        tb = server.encoders["b"](data.server_test.xb).data
    s_i2t, s_t2i = retrieval(ia, tb)
    return MetricReport(round_, out, s_i2t, s_t2i)


@dataclass
class RoundRecord:
    round: int
    strategy: str
    seed: int
    report: MetricReport
    client_losses: dict[int, tuple[float, float]]
    server_task_loss: float
    l_kd: float
    up_bytes: dict[int, int] = field(default_factory=dict)
    down_bytes: dict[int, int] = field(default_factory=dict)

    @classmethod
    def from_round(cls, t, config, losses, srv_loss, l_kd, report, exchange) -> "RoundRecord":
        up = dict(exchange.up_bytes) if exchange is not None else {}
        down = dict(exchange.down_bytes) if exchange is not None else {}
        return cls(t, config.aggregation, config.seed, report, losses, srv_loss, l_kd, up, down)

    def rows(self) -> list[list[str]]:
        rows = []
        for m in self.report.clients:
            l_task, l_adv = self.client_losses[m.cid]
            rows.append(format_row(self.round, m.cid, l_task, l_adv, None, m.acc1, m.i2t, m.t2i, m.rep_gap,
                             self.up_bytes.get(m.cid, 0), self.down_bytes.get(m.cid, 0)))
        r = self.report
        rows.append(format_row(self.round, "server", self.server_task_loss, None, self.l_kd, None, r.server_i2t,
                         r.server_t2i, None, sum(self.up_bytes.values()), sum(self.down_bytes.values())))
        return rows


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def format_row(t, cid, l_task, l_adv, l_kd, acc1, i2t, t2i, gap, up, down) -> list[str]:
    i2t_s, t2i_s = _fmt(i2t), _fmt(t2i)
    # rsum is built from the printed recalls so the column sums exactly
    rsum = "" if i2t is None else f"{float(i2t_s) + float(t2i_s):.6f}"
    return [str(t), str(cid), _fmt(l_task), _fmt(l_adv), _fmt(l_kd), _fmt(acc1), i2t_s, t2i_s, rsum, _fmt(gap),
            str(int(up)), str(int(down))]


def write_round_log(records: list[RoundRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUND_LOG_COLUMNS)
        for rec in records:
            w.writerows(rec.rows())


SUMMARY_COLUMNS = ["strategy", "seed", "rounds", "server_i2t_r1", "server_t2i_r1", "server_rsum",
                   "server_i2t_pct", "server_t2i_pct", "server_rsum_pct", "mean_client_metric",
                   "mean_client_metric_pct", "rep_gap_first", "rep_gap_last", "total_up_bytes", "total_down_bytes"]


def summary_row(records: list[RoundRecord], config: RunConfig) -> dict[str, str]:
    row = {"strategy": config.aggregation, "seed": str(config.seed), "rounds": str(len(records))}
    if not records:
        return {k: row.get(k, "") for k in SUMMARY_COLUMNS}
    last, first = records[-1].report, records[0].report
    row.update({
        "server_i2t_r1": _fmt(last.server_i2t),
        "server_t2i_r1": _fmt(last.server_t2i),
        "server_rsum": _fmt(last.server_i2t + last.server_t2i),
        "server_i2t_pct": f"{100 * last.server_i2t:.2f}",
        "server_t2i_pct": f"{100 * last.server_t2i:.2f}",
        "server_rsum_pct": f"{last.server_rsum:.2f}",
        "mean_client_metric": _fmt(last.mean_client_score),
        "mean_client_metric_pct": f"{100 * last.mean_client_score:.2f}",
        "rep_gap_first": _fmt(first.mean_rep_gap),
        "rep_gap_last": _fmt(last.mean_rep_gap),
        "total_up_bytes": str(sum(sum(r.up_bytes.values()) for r in records)),
        "total_down_bytes": str(sum(sum(r.down_bytes.values()) for r in records)),
    })
    return row


def write_summary(rows: list[dict[str, str]], path: str | Path, extra_columns: list[str] | None = None) -> None:
    columns = (extra_columns or []) + SUMMARY_COLUMNS
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in columns})


def summary_text(records: list[RoundRecord], config: RunConfig) -> str:
    lines = [f"strategy {config.aggregation}  seed {config.seed}  rounds {len(records)}",
             f"ablations baa={config.ablations.baa} gff={config.ablations.gff} sed={config.ablations.sed}  "
             f"beta={config.beta} gamma={config.gamma} K={config.cache_interval}"]
    if records:
        last = records[-1].report
        lines.append(f"server  i2t R@1 {100 * last.server_i2t:.2f}  t2i R@1 {100 * last.server_t2i:.2f}  "
                     f"rsum {last.server_rsum:.2f}")
        for m in last.clients:
            metric = (f"acc@1 {100 * m.acc1:.2f}" if m.acc1 is not None
                      else f"i2t {100 * m.i2t:.2f} t2i {100 * m.t2i:.2f}")
            lines.append(f"client {m.cid:>2} {m.role:<10} {metric}  rep_gap {m.rep_gap:.4f}")
        lines.append(f"mean client metric {100 * last.mean_client_score:.2f}  "
                     f"rep_gap {records[0].report.mean_rep_gap:.4f} -> {last.mean_rep_gap:.4f}")
    return "\n".join(lines) + "\n"


# -- state snapshots --------------------------------------------------------------------------

def save_states(path: str | Path, server: GlobalState, clients: list[ClientState],
                global_public: dict[str, np.ndarray] | None, round_: int) -> None:
    arrays = {"meta/round": np.array(round_)}
    for name, mod in server.modules().items():
        arrays.update({f"server/{name}/{k}": v for k, v in mod.state().items()})
    for c in clients:
        for name, mod in c.modules().items():
            arrays.update({f"client{c.cid}/{name}/{k}": v for k, v in mod.state().items()})
        arrays[f"client{c.cid}/cache_round"] = np.array(c.cache_round)
    if global_public is not None:
        arrays.update({f"exchange/global_{m}": v for m, v in global_public.items()})
    np.savez(path, **arrays)


def load_states(path: str | Path, server: GlobalState, clients: list[ClientState]):
    """Restore parameters in place; returns (round, global public features or None)."""
    import copy

    from .protocol import refresh_cache

    with np.load(path) as z:
        stored = {k: z[k] for k in z.files}

    def grab(prefix):
        return {k[len(prefix):]: v for k, v in stored.items() if k.startswith(prefix)}

    for name, mod in server.modules().items():
        mod.load_state(grab(f"server/{name}/"))
    for c in clients:
        if f"client{c.cid}/cached_a/p0" in stored or f"client{c.cid}/cached_b/p0" in stored:
            refresh_cache(c, {m: copy.deepcopy(server.encoders[m]) for m in c.modalities}, -1)
        for name, mod in c.modules().items():
            mod.load_state(grab(f"client{c.cid}/{name}/"))
        c.cache_round = int(stored[f"client{c.cid}/cache_round"])
        if c.cached_encoders is not None:
            # recompute cached global features from the restored encoder copies
            refresh_cache(c, c.cached_encoders, c.cache_round)
    gp = None
    if "exchange/global_a" in stored:
        gp = {m: stored[f"exchange/global_{m}"] for m in "ab"}
    return int(stored["meta/round"]), gp
