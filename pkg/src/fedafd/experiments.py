"""Named experiment presets: ablations and the beta, public-size and roster sweeps.

Each preset is a list of ``(label, overrides)`` pairs applied on top of a base
config with :func:`fedafd.config.with_updates`.
"""

from __future__ import annotations

from .config import RunConfig, with_updates
from .protocol import RunResult, run

ABLATIONS = [
    ("full", {}),
    ("wo_baa", {"ablations.baa": False}),
    ("wo_gff", {"ablations.gff": False}),
    ("wo_sed", {"ablations.sed": False}),
]

BETAS = (0.0, 0.3, 0.5, 0.7, 1.0)

PUBLIC_SCALES = (1, 2, 3)

ROSTERS = [
    ("default", (3, 3, 4)),
    ("fewer_image", (1, 3, 4)),
    ("fewer_text", (3, 1, 4)),
    ("fewer_multimodal", (3, 3, 2)),
]


def ablation_grid() -> list[tuple[str, dict]]:
    return list(ABLATIONS)


def beta_grid(betas=BETAS) -> list[tuple[str, dict]]:
    return [(f"beta={b:g}", {"beta": float(b)}) for b in betas]


def public_grid(base: RunConfig, scales=PUBLIC_SCALES) -> list[tuple[str, dict]]:
    return [(f"public={base.public_size * s}", {"public_size": base.public_size * s}) for s in scales]


def roster_grid(rosters=ROSTERS) -> list[tuple[str, dict]]:
    return [(name, {"roster.image": i, "roster.text": t, "roster.multimodal": m}) for name, (i, t, m) in rosters]


def run_grid(base: RunConfig, grid: list[tuple[str, dict]], progress=None) -> list[tuple[str, RunResult]]:
    out = []
    for label, changes in grid:
        config = with_updates(base, **changes)
        out.append((label, run(config, progress)))
    return out
