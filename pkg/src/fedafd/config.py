"""Run configuration, loadable from a YAML file whose keys mirror the fields."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .errors import ConfigError

STRATEGIES = ("fedafd", "local", "avg_uniform", "avg_samples", "avg_entropy", "avg_variance", "aggr_mm")


@dataclass
class Roster:
    image: int = 3
    text: int = 3
    multimodal: int = 4

    @property
    def total(self) -> int:
        return self.image + self.text + self.multimodal


@dataclass
class Ablations:
    baa: bool = True
    gff: bool = True
    sed: bool = True


@dataclass
class DataConfig:
    num_classes: int = 4
    latent_dim: int = 8
    dim_a: int = 16
    dim_b: int = 12
    samples_per_class: int = 512
    noise_std: float = 0.5
    jitter_std: float = 1.0
    partition: str = "noniid"
    alpha: float = 0.1
    shards_per_client: int = 2
    server_test_pairs: int = 128
    client_test_size: int = 64


@dataclass
class RunConfig:
    rounds: int = 20
    local_epochs: int = 2
    cache_interval: int = 1
    beta: float = 0.5
    gamma: float = 0.4
    server_lr: float = 0.05
    client_lr: float = 0.05
    dim: int = 16
    client_hidden: int = 32
    server_hidden: int = 64
    gate_ratio: int = 4
    batch_size: int = 64
    baa_public_per_epoch: int = 128
    public_size: int = 256
    strategy: str = "fedafd"
    kd_squared: bool = False
    encoder_bytes: int | None = None
    seed: int = 0
    roster: Roster = field(default_factory=Roster)
    ablations: Ablations = field(default_factory=Ablations)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "RunConfig":
        if self.rounds < 0 or self.local_epochs < 0:
            raise ConfigError("rounds and local_epochs must be >= 0")
        if self.cache_interval < 1:
            raise ConfigError("cache_interval must be >= 1")
        if self.beta < 0 or self.gamma < 0:
            raise ConfigError("beta and gamma must be >= 0")
        if not (self.server_lr > 0 and self.client_lr > 0):
            raise ConfigError("learning rates must be positive")
        if self.dim < 4:
            raise ConfigError("dim must be >= 4 (discriminator hidden width is dim/4)")
        if self.batch_size < 2 or self.public_size < 2 or self.baa_public_per_epoch < 1:
            raise ConfigError("batch_size and public_size must be >= 2")
        if min(self.roster.image, self.roster.text, self.roster.multimodal) < 0 or self.roster.total == 0:
            raise ConfigError("roster must be nonempty with nonnegative counts")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.data.partition not in ("noniid", "iid"):
            raise ConfigError("data.partition must be 'noniid' or 'iid'")
        if self.encoder_bytes is not None and self.encoder_bytes < 0:
            raise ConfigError("encoder_bytes must be >= 0")
        return self

    @property
    def aggregation(self) -> str:
        """Effective teacher aggregation: the SED ablation falls back to plain averaging."""
        if self.strategy == "fedafd" and not self.ablations.sed:
            return "avg_uniform"
        return self.strategy

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return _build(cls, raw or {}, "").validate()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(raw)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _build(cls, raw: dict, prefix: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(prefix + k for k in unknown))}")
    kwargs = {}
    for name, value in raw.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default):
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix}{name} must be a mapping")
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def with_updates(config: RunConfig, **changes) -> RunConfig:
    """Copy of ``config`` with dotted-path overrides, e.g. ``{"ablations.gff": False}``."""
    raw = config.to_dict()
    for path, value in changes.items():
        node = raw
        *parents, leaf = path.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"unknown config key {path}")
        node[leaf] = value
    return RunConfig.from_dict(raw)
