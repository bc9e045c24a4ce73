"""Encoders, classifiers, adversarial discriminators and the fusion gate.

All networks operate on feature vectors (rows of a 2-D matrix). Weights are
drawn uniformly from +-1/sqrt(fan_in), each parameter tensor from its own
seeded stream.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .rng import stream
from .tensor import Tensor

LEAKY_SLOPE = 0.2
GATE_FLOOR = 1e-12


class Module:
    training = True

    def parameters(self) -> list[Tensor]:
        raise NotImplementedError

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def children(self) -> list["Module"]:
        return []

    def state(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of parameters and buffers (arrays are copied)."""
        out = {f"p{i}": p.data.copy() for i, p in enumerate(self.parameters())}
        out.update({k: v.copy() for k, v in self.buffers().items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for i, p in enumerate(self.parameters()):
            p.data = np.array(state[f"p{i}"], dtype=np.float64)
        for k, buf in self.buffers().items():
            buf[...] = state[k]

    def num_values(self) -> int:
        return int(np.sum([p.data.size for p in self.parameters()]))

    def __call__(self, x):
        return self.forward(x)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, seed: int, key: tuple):
        if n_in < 1 or n_out < 1:
            raise ConfigError(f"linear layer dims must be positive, got {n_in}->{n_out}")
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Tensor(stream(seed, *key, "w").uniform(-bound, bound, (n_in, n_out)), requires_grad=True)
        self.bias = Tensor(stream(seed, *key, "b").uniform(-bound, bound, n_out), requires_grad=True)

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        x = T.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"expected (n, {self.n_in}) input, got {x.shape}")
        return x @ self.weight + self.bias


class BatchNorm(Module):
    def __init__(self, n: int, momentum: float = 0.1, eps: float = 1e-7):
        self.gamma = Tensor(np.ones(n), requires_grad=True)
        self.beta = Tensor(np.zeros(n), requires_grad=True)
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.momentum = momentum
        self.eps = eps

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x):
        return T.batch_norm(
            x,
            self.gamma,
            self.beta,
            training=self.training,
            running_mean=self.running_mean,
            running_var=self.running_var,
            momentum=self.momentum,
            eps=self.eps,
        )


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def children(self):
        return [m for m in self.layers if isinstance(m, Module)]

    def parameters(self):
        return [p for m in self.children() for p in m.parameters()]

    def buffers(self):
        out = {}
        for i, m in enumerate(self.layers):
            if isinstance(m, Module):
                out.update({f"{i}.{k}": v for k, v in m.buffers().items()})
        return out

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def _leaky(x):
    return T.leaky_relu(x, LEAKY_SLOPE)


class Encoder(Sequential):
    """Two-hidden-layer perceptron mapping raw modality input (dim m) to d."""

    def __init__(self, m: int, hidden: int, d: int, seed: int, key: tuple):
        super().__init__(
            Linear(m, hidden, seed, (*key, 0)),
            _leaky,
            Linear(hidden, hidden, seed, (*key, 1)),
            _leaky,
            Linear(hidden, d, seed, (*key, 2)),
        )
        self.in_dim, self.out_dim = m, d


class Discriminator(Sequential):
    """d -> d/2 -> d/4 -> 1 MLP with a sigmoid head; outputs P(feature is global)."""

    def __init__(self, d: int, seed: int, key: tuple):
        if d < 4:
            raise ConfigError(f"discriminator needs d >= 4, got {d}")
        super().__init__(
            Linear(d, d // 2, seed, (*key, 0)),
            _leaky,
            Linear(d // 2, d // 4, seed, (*key, 1)),
            _leaky,
            Linear(d // 4, 1, seed, (*key, 2)),
            T.sigmoid,
        )
        self.dim = d

    def forward(self, x):
        return _flatten(super().forward(x))


def _flatten(x: Tensor) -> Tensor:
    # (n, 1) -> (n,) via a sum over the singleton axis
    return T.sum(x, axis=1)


class Branch(Sequential):
    """linear d->d/r, batch norm, sigmoid, linear d/r->d, batch norm."""

    def __init__(self, d: int, ratio: int, seed: int, key: tuple):
        inner = max(1, d // ratio)
        super().__init__(
            Linear(d, inner, seed, (*key, 0)),
            BatchNorm(inner),
            T.sigmoid,
            Linear(inner, d, seed, (*key, 1)),
            BatchNorm(d),
        )


class Gate(Module):
    """Attention weights M(x) = sigmoid(T1(x) + T2(x)) with independent branches."""

    def __init__(self, d: int, seed: int, key: tuple, ratio: int = 4):
        if ratio < 1:
            raise ConfigError(f"bottleneck ratio must be >= 1, got {ratio}")
        self.t1 = Branch(d, ratio, seed, (*key, "t1"))
        self.t2 = Branch(d, ratio, seed, (*key, "t2"))
        self.dim = d

    def children(self):
        return [self.t1, self.t2]

    def parameters(self):
        return self.t1.parameters() + self.t2.parameters()

    def buffers(self):
        out = {f"t1.{k}": v for k, v in self.t1.buffers().items()}
        out.update({f"t2.{k}": v for k, v in self.t2.buffers().items()})
        return out

    def forward(self, x):
        x = T.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionError(f"gate expects (n, {self.dim}), got {x.shape}")
        # keep M strictly inside (0, 1) even where float64 sigmoid rounds to 0 or 1
        return T.clip(T.sigmoid(self.t1(x) + self.t2(x)), GATE_FLOOR, 1.0 - GATE_FLOOR)


class Classifier(Linear):
    def __init__(self, d: int, num_classes: int, seed: int, key: tuple):
        super().__init__(d, num_classes, seed, key)
        self.num_classes = num_classes


def encoder_forward(enc: Encoder, x) -> Tensor:
    return enc(x)


def discriminator_forward(disc: Discriminator, f) -> Tensor:
    return disc(f)


def gate_forward(gate: Gate, x) -> Tensor:
    return gate(x)
