"""Synthetic paired two-modality data and client partitioners.

Each class owns a latent prototype. A sample draws a latent vector around its
class prototype and renders it into two modalities through fixed random
projections plus Gaussian noise, so the two views of one sample stay
semantically aligned.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, PartitionError
from .rng import stream


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 4
    latent_dim: int = 8
    dim_a: int = 16
    dim_b: int = 12
    samples_per_class: int = 128
    noise_std: float = 0.5
    jitter_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("num_classes", "latent_dim", "dim_a", "dim_b", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.noise_std > 0:
            raise ConfigError("noise_std must be > 0")
        if self.jitter_std < 0:
            raise ConfigError("jitter_std must be >= 0")


@dataclass
class MultimodalDataset:
    xa: np.ndarray
    xb: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "MultimodalDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return MultimodalDataset(self.xa[idx], self.xb[idx], self.y[idx], self.z[idx])

    def modality(self, key: str) -> np.ndarray:
        return {"a": self.xa, "b": self.xb}[key]

    def to_csv(self, path: str | Path) -> None:
        """Write one row per (sample, modality): sample_id, label, modality, f0..fm."""
        width = max(self.xa.shape[1], self.xb.shape[1])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "label", "modality", *(f"f{j}" for j in range(width))])
            for k in range(len(self)):
                for mod, x in (("a", self.xa[k]), ("b", self.xb[k])):
                    vals = [f"{v:.6f}" for v in x] + [""] * (width - len(x))
                    w.writerow([k, int(self.y[k]), mod, *vals])


@dataclass
class SynthWorld:
    """Fixed class prototypes and modality projections shared by every draw."""

    spec: SynthSpec
    prototypes: np.ndarray
    proj_a: np.ndarray
    proj_b: np.ndarray

    def sample(self, per_class: int, rng: np.random.Generator, noise_std: float | None = None,
               jitter_std: float | None = None) -> MultimodalDataset:
        s = self.spec
        noise = s.noise_std if noise_std is None else noise_std
        jitter = s.jitter_std if jitter_std is None else jitter_std
        y = np.repeat(np.arange(s.num_classes), per_class)
        y = y[rng.permutation(len(y))]
        z = self.prototypes[y] + jitter * rng.standard_normal((len(y), s.latent_dim))
        xa = z @ self.proj_a.T + noise * rng.standard_normal((len(y), s.dim_a))
        xb = z @ self.proj_b.T + noise * rng.standard_normal((len(y), s.dim_b))
        return MultimodalDataset(xa, xb, y, z)


def make_world(spec: SynthSpec) -> SynthWorld:
    rng = stream(spec.seed, "world")
    prototypes = 2.0 * rng.standard_normal((spec.num_classes, spec.latent_dim))
    proj_a = rng.standard_normal((spec.dim_a, spec.latent_dim)) / np.sqrt(spec.latent_dim)
    proj_b = rng.standard_normal((spec.dim_b, spec.latent_dim)) / np.sqrt(spec.latent_dim)
    return SynthWorld(spec, prototypes, proj_a, proj_b)


def generate(spec: SynthSpec) -> MultimodalDataset:
    return make_world(spec).sample(spec.samples_per_class, stream(spec.seed, "samples"))


def _check_clients(n: int, num_clients: int) -> None:
    if num_clients < 1:
        raise PartitionError("need at least one client")
    if n < num_clients:
        raise PartitionError(f"{n} samples cannot cover {num_clients} clients")


def partition_iid(n: int, num_clients: int, seed: int) -> list[np.ndarray]:
    """Uniform shuffle split; client sizes differ by at most one."""
    _check_clients(n, num_clients)
    perm = stream(seed, "iid").permutation(n)
    return [np.sort(part) for part in np.array_split(perm, num_clients)]


def partition_dirichlet(labels, num_clients: int, alpha: float, seed: int, max_retries: int = 100) -> list[np.ndarray]:
    """Label-skewed split: each class is spread over clients by a Dirichlet(alpha) draw.

    Allocations that leave some client empty are redrawn, at most ``max_retries`` times.
    """
    labels = np.asarray(labels)
    if not alpha > 0:
        raise PartitionError(f"alpha must be > 0, got {alpha}")
    _check_clients(len(labels), num_clients)
    rng = stream(seed, "dirichlet")
    classes = np.unique(labels)
    for _ in range(max_retries):
        parts: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for c in classes:
            idx = np.flatnonzero(labels == c)
            idx = idx[rng.permutation(len(idx))]
            props = rng.dirichlet(np.full(num_clients, alpha))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
            for client, chunk in enumerate(np.split(idx, cuts)):
                parts[client].append(chunk)
        out = [np.sort(np.concatenate(p)) for p in parts]
        if all(len(p) for p in out):
            return out
    raise PartitionError(f"could not avoid empty clients after {max_retries} Dirichlet draws")


def partition_shards(labels, num_clients: int, shards_per_client: int, seed: int) -> list[np.ndarray]:
    """Sort by group label, cut into equal contiguous shards, deal shards to clients."""
    labels = np.asarray(labels)
    if shards_per_client < 1:
        raise PartitionError("shards_per_client must be >= 1")
    _check_clients(len(labels), num_clients)
    n_shards = num_clients * shards_per_client
    if len(labels) % n_shards:
        raise PartitionError(f"{len(labels)} samples do not split into {n_shards} equal shards")
    order = np.argsort(labels, kind="stable")
    shards = order.reshape(n_shards, -1)
    deal = stream(seed, "shards").permutation(n_shards)
    return [np.sort(shards[deal[i * shards_per_client:(i + 1) * shards_per_client]].ravel()) for i in range(num_clients)]


def label_skew(parts: list[np.ndarray], labels, num_classes: int) -> float:
    """Mean over clients of the largest class proportion held by that client."""
    labels = np.asarray(labels)
    tops = []
    for p in parts:
        if len(p) == 0:
            continue
        counts = np.bincount(labels[p], minlength=num_classes)
        tops.append(counts.max() / counts.sum())
    return float(np.mean(tops))
