"""Command-line driver.

Exit codes: 0 on success, 1 on a usage or configuration error, 2 when a run
aborts on a violated invariant or round-protocol check.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import experiments
from .config import RunConfig, with_updates
from .errors import ConfigError, ContractError, InvariantViolation, PartitionError, ProtocolError
from .protocol import MIB, build, build_data, comm_cost
from .report import (
    ROUND_LOG_COLUMNS,
    evaluate,
    format_row,
    load_states,
    save_states,
    summary_row,
    summary_text,
    write_round_log,
    write_summary,
)
from .synthdata import label_skew

log = logging.getLogger("fedafd")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", help="YAML file with RunConfig fields")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--rounds", type=int)
    p.add_argument("--strategy")
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. --set data.alpha=0.5 (repeatable)")
    p.add_argument("-q", "--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedafd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _common(sub.add_parser("train", help="run one configuration"), "runs/train")
    _common(sub.add_parser("ablate", help="full model and the three single-module ablations"), "runs/ablate")
    p = sub.add_parser("sweep-beta", help="adversarial weight sweep")
    _common(p, "runs/sweep_beta")
    p.add_argument("--betas", type=float, nargs="+", default=list(experiments.BETAS))
    p = sub.add_parser("sweep-public", help="public set size sweep")
    _common(p, "runs/sweep_public")
    p.add_argument("--scales", type=int, nargs="+", default=list(experiments.PUBLIC_SCALES))
    _common(sub.add_parser("sweep-roster", help="client composition sweep"), "runs/sweep_roster")

    p = sub.add_parser("cost", help="per-client communication cost table")
    p.add_argument("--config")
    p.add_argument("--public-size", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--encoder-mb", type=float, help="encoder payload in MiB (default: server encoder size)")
    p.add_argument("--interval", type=int, help="encoder broadcast interval K")
    p.add_argument("--rounds", type=int)

    p = sub.add_parser("partition-report", help="client data sizes and label skew")
    _common(p, "runs/partition")

    p = sub.add_parser("eval", help="recompute metrics from a saved states file")
    _common(p, "runs/eval")
    p.add_argument("--states", required=True, help="states.npz written by train")
    return parser


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig().validate()
    changes = {}
    for name in ("seed", "rounds", "strategy", "beta", "gamma"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    for item in getattr(args, "set", []):
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        changes[key] = yaml.safe_load(raw)
    return with_updates(config, **changes) if changes else config


def _say(args, text: str) -> None:
    if not getattr(args, "quiet", False):
        sys.stdout.write(text)


def _train_one(config: RunConfig, out: Path, args) -> dict[str, str]:
    from .protocol import run

    out.mkdir(parents=True, exist_ok=True)
    config.dump(out / "config.yaml")
    result = run(config)
    write_round_log(result.records, out / "round_log.csv")
    row = summary_row(result.records, config)
    write_summary([row], out / "summary.csv")
    text = summary_text(result.records, config)
    (out / "summary.txt").write_text(text)
    if result.records:
        save_states(out / "states.npz", result.server, result.clients, result.last_global_feats,
                    result.records[-1].round)
    _say(args, text)
    return row


def cmd_train(args) -> int:
    _train_one(_load_config(args), Path(args.out), args)
    return 0


def _grid(args, grid, column: str) -> int:
    base = _load_config(args)
    out = Path(args.out)
    rows = []
    for label, changes in grid:
        config = with_updates(base, **changes)
        _say(args, f"== {label}\n")
        row = _train_one(config, out / label.replace("=", "_"), args)
        rows.append({column: label, **row})
    write_summary(rows, out / "summary.csv", extra_columns=[column])
    return 0


def cmd_ablate(args) -> int:
    return _grid(args, experiments.ablation_grid(), "variant")


def cmd_sweep_beta(args) -> int:
    return _grid(args, experiments.beta_grid(args.betas), "variant")


def cmd_sweep_public(args) -> int:
    return _grid(args, experiments.public_grid(_load_config(args), args.scales), "variant")


def cmd_sweep_roster(args) -> int:
    return _grid(args, experiments.roster_grid(), "variant")


def cmd_cost(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {k: v for k, v in (("public_size", args.public_size), ("dim", args.dim),
                                 ("cache_interval", args.interval), ("rounds", args.rounds)) if v is not None}
    config = with_updates(config, **changes)
    if args.encoder_mb is not None:
        if args.encoder_mb < 0:
            raise ConfigError("--encoder-mb must be >= 0")
        enc = int(round(args.encoder_mb * MIB))
    else:
        enc = None
    cost = comm_cost(config, enc)
    lines = [
        f"public set {cost.public_size}  dim {cost.dim}  4-byte values  K={cost.interval}  T={cost.rounds}",
        f"{'':<24}{'MB':>10}{'bytes':>16}",
        f"{'upload / round':<24}{cost.upload_mb:>10.2f}{cost.upload_bytes:>16d}",
        f"{'download / round':<24}{cost.download_mb:>10.2f}{cost.download_bytes(0):>16d}",
        f"{'sum / round':<24}{cost.sum_mb:>10.2f}{cost.upload_bytes + cost.download_bytes(0):>16d}",
        f"{'encoder payload':<24}{cost.encoder_bytes / MIB:>10.2f}{cost.encoder_bytes:>16d}",
        f"{'amortized encoder':<24}{cost.amortized_encoder_bytes / MIB:>10.2f}{cost.amortized_encoder_bytes:>16.1f}",
        f"{'amortized download':<24}{cost.amortized_download_mb:>10.2f}{cost.amortized_download_bytes:>16.1f}",
        f"{'total upload (T)':<24}{cost.total_upload_bytes / MIB:>10.2f}{cost.total_upload_bytes:>16d}",
        f"{'total download (T)':<24}{cost.total_download_bytes / MIB:>10.2f}{cost.total_download_bytes:>16d}",
    ]
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_partition_report(args) -> int:
    config = _load_config(args)
    data = build_data(config)
    k = config.data.num_classes
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["client_id", "role", "train_size", "test_size"] + [f"class_{c}" for c in range(k)]
    rows = []
    for cid, (role, train, test) in enumerate(data.clients):
        counts = np.bincount(train.y, minlength=k)
        rows.append([cid, role, len(train), len(test), *counts.tolist()])
    with open(out / "partition.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    labels = np.concatenate([tr.y for _, tr, _ in data.clients])
    offsets = np.cumsum([0] + [len(tr) for _, tr, _ in data.clients])
    parts = [np.arange(offsets[i], offsets[i + 1]) for i in range(len(data.clients))]
    _say(args, f"partition {config.data.partition}  alpha {config.data.alpha}  public {len(data.public)}  "
               f"server test {len(data.server_test)}\n")
    for r in rows:
        _say(args, f"client {r[0]:>2} {r[1]:<10} n={r[2]:<5} classes {r[4:]}\n")
    _say(args, f"mean max-class share {label_skew(parts, labels, k):.4f}\n")
    return 0


def cmd_eval(args) -> int:
    saved = Path(args.states).parent / "config.yaml"
    if args.config is None and saved.exists():
        args.config = str(saved)
    config = _load_config(args)
    data, server, clients = build(config)
    round_, gp = load_states(args.states, server, clients)
    if gp is None:
        raise ConfigError(f"{args.states} holds no exchange features to evaluate against")
    report = evaluate(clients, server, data, gp, config, round_)
    rows = [format_row(round_, m.cid, None, None, None, m.acc1, m.i2t, m.t2i, m.rep_gap, 0, 0) for m in report.clients]
    rows.append(format_row(round_, "server", None, None, None, None, report.server_i2t, report.server_t2i, None, 0, 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keep = [ROUND_LOG_COLUMNS.index(c) for c in ("round", "client_id", "acc1", "i2t_r1", "t2i_r1", "rsum", "rep_gap")]
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([ROUND_LOG_COLUMNS[i] for i in keep])
        w.writerows([[r[i] for i in keep] for r in rows])
    _say(args, f"round {round_}  server i2t {100 * report.server_i2t:.2f}  t2i {100 * report.server_t2i:.2f}  "
               f"rsum {report.server_rsum:.2f}  mean client {100 * report.mean_client_score:.2f}\n")
    return 0


COMMANDS = {
    "train": cmd_train,
    "ablate": cmd_ablate,
    "sweep-beta": cmd_sweep_beta,
    "sweep-public": cmd_sweep_public,
    "sweep-roster": cmd_sweep_roster,
    "cost": cmd_cost,
    "partition-report": cmd_partition_report,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (InvariantViolation, ProtocolError) as exc:
        sys.stderr.write(f"fedafd: invariant violated: {exc}\n")
        return 2
    except (ConfigError, PartitionError, ContractError, OSError) as exc:
        sys.stderr.write(f"fedafd: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
