"""Round loop: server public step, broadcast, client updates, aggregation, distillation.

Modality keys are ``"a"`` (image-like) and ``"b"`` (text-like) throughout.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from . import tensor as T
from .baa import AdvBranch, baa_step
from .config import RunConfig
from .errors import ContractError, ProtocolError
from .gff import client_features, info_nce, task_step
from .nets import Classifier, Discriminator, Encoder, Gate
from .rng import stream
from .sed import GroupAggregate, TeacherAggregate, aggregate_teacher, kd_update, sed_group
from .synthdata import (
    MultimodalDataset,
    SynthSpec,
    make_world,
    partition_dirichlet,
    partition_iid,
    partition_shards,
)

log = logging.getLogger(__name__)

MODALITIES = {"image": ("a",), "text": ("b",), "multimodal": ("a", "b")}
BYTES_PER_VALUE = 4


# -- state ------------------------------------------------------------------------

@dataclass
class ClientState:
    cid: int
    role: str
    encoders: dict[str, Encoder]
    branches: list[AdvBranch]
    gates: dict[str, Gate]
    classifier: Classifier | None
    train: MultimodalDataset
    test: MultimodalDataset
    cached_encoders: dict[str, Encoder] | None = None
    cache_round: int = -1
    global_train: dict[str, np.ndarray] = field(default_factory=dict)
    global_test: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def modalities(self) -> tuple[str, ...]:
        return MODALITIES[self.role]

    def modules(self) -> dict[str, object]:
        out = {f"enc_{m}": e for m, e in self.encoders.items()}
        for br in self.branches:
            out[f"din_{br.modality}"] = br.d_in
            out[f"dcr_{br.modality}"] = br.d_cr
        out.update({f"gate_{m}": g for m, g in self.gates.items()})
        if self.classifier is not None:
            out["cls"] = self.classifier
        if self.cached_encoders is not None:
            out.update({f"cached_{m}": e for m, e in self.cached_encoders.items()})
        return out

    def set_training(self, mode: bool) -> None:
        for g in self.gates.values():
            g.train(mode)


@dataclass
class GlobalState:
    encoders: dict[str, Encoder]
    round: int = 0

    def modules(self) -> dict[str, object]:
        return {f"enc_{m}": e for m, e in self.encoders.items()}

    def encoder_values(self) -> int:
        return sum(e.num_values() for e in self.encoders.values())


@dataclass
class Upload:
    round: int
    cid: int
    feats: dict[str, np.ndarray]


@dataclass
class PublicExchange:
    round: int
    global_feats: dict[str, np.ndarray]
    encoders: dict[str, Encoder] | None
    uploads: dict[int, Upload] = field(default_factory=dict)
    down_bytes: dict[int, int] = field(default_factory=dict)
    up_bytes: dict[int, int] = field(default_factory=dict)

    @property
    def broadcast(self) -> bool:
        return self.encoders is not None


@dataclass
class SimData:
    public: MultimodalDataset
    server_test: MultimodalDataset
    clients: list[tuple[str, MultimodalDataset, MultimodalDataset]]


# -- data and model construction ------------------------------------------------------

def _take(world, n: int, seed: int, name: str, **kw) -> MultimodalDataset:
    per_class = -(-n // world.spec.num_classes)
    ds = world.sample(per_class, stream(seed, "data", name), **kw)
    return ds.subset(np.arange(n))


def _client_test(pool: MultimodalDataset, train_labels: np.ndarray, size: int, rng, num_classes: int) -> MultimodalDataset:
    # test draw follows the client's own label proportions
    props = np.bincount(train_labels, minlength=num_classes) / len(train_labels)
    counts = np.floor(props * size).astype(int)
    counts[np.argmax(props)] += size - counts.sum()
    idx = []
    for c, k in enumerate(counts):
        if k:
            cand = np.flatnonzero(pool.y == c)
            idx.append(rng.choice(cand, size=min(k, len(cand)), replace=False))
    return pool.subset(np.sort(np.concatenate(idx)))


def build_data(config: RunConfig) -> SimData:
    dc, seed = config.data, config.seed
    spec = SynthSpec(dc.num_classes, dc.latent_dim, dc.dim_a, dc.dim_b, dc.samples_per_class,
                     dc.noise_std, dc.jitter_std, seed)
    world = make_world(spec)
    private = world.sample(dc.samples_per_class, stream(seed, "data", "private"))
    public = _take(world, config.public_size, seed, "public")
    server_test = _take(world, dc.server_test_pairs, seed, "server_test")
    test_pool = _take(world, max(dc.client_test_size, 16) * dc.num_classes * 2, seed, "client_test")

    roster = config.roster
    roles = ["image"] * roster.image + ["text"] * roster.text + ["multimodal"] * roster.multimodal
    counts = np.array([roster.image, roster.text, roster.multimodal], dtype=float)
    perm = stream(seed, "data", "roles").permutation(len(private))
    cuts = np.round(np.cumsum(counts)[:-1] / counts.sum() * len(private)).astype(int)
    pools = dict(zip(("image", "text", "multimodal"), np.split(perm, cuts)))

    parts: dict[str, list[np.ndarray]] = {}
    for role, n_clients in zip(("image", "text", "multimodal"), (roster.image, roster.text, roster.multimodal)):
        if n_clients == 0:
            continue
        pool = pools[role]
        labels = private.y[pool]
        if dc.partition == "iid":
            local = partition_iid(len(pool), n_clients, seed + 1000 * len(parts))
        elif role == "multimodal":
            n_shards = n_clients * dc.shards_per_client
            keep = len(pool) - len(pool) % n_shards
            pool, labels = pool[:keep], labels[:keep]
            local = partition_shards(labels, n_clients, dc.shards_per_client, seed)
        else:
            local = partition_dirichlet(labels, n_clients, dc.alpha, seed + 1000 * len(parts))
        parts[role] = [pool[p] for p in local]

    clients = []
    taken = {r: 0 for r in parts}
    for cid, role in enumerate(roles):
        idx = parts[role][taken[role]]
        taken[role] += 1
        train = private.subset(idx)
        test = _client_test(test_pool, train.y, dc.client_test_size, stream(seed, "data", "ctest", cid), dc.num_classes)
        clients.append((role, train, test))
    return SimData(public, server_test, clients)


def build_server(config: RunConfig) -> GlobalState:
    dims = {"a": config.data.dim_a, "b": config.data.dim_b}
    return GlobalState({m: Encoder(dims[m], config.server_hidden, config.dim, config.seed, ("server", m)) for m in "ab"})


def build_client(cid: int, role: str, train, test, config: RunConfig) -> ClientState:
    seed, d = config.seed, config.dim
    dims = {"a": config.data.dim_a, "b": config.data.dim_b}
    mods = MODALITIES[role]
    encoders = {m: Encoder(dims[m], config.client_hidden, d, seed, ("client", cid, "enc", m)) for m in mods}
    branches = [
        AdvBranch(m, encoders[m], Discriminator(d, seed, ("client", cid, "din", m)),
                  Discriminator(d, seed, ("client", cid, "dcr", m)))
        for m in mods
    ]
    gates = {m: Gate(d, seed, ("client", cid, "gate", m), config.gate_ratio) for m in mods}
    classifier = None if role == "multimodal" else Classifier(d, config.data.num_classes, seed, ("client", cid, "cls"))
    return ClientState(cid, role, encoders, branches, gates, classifier, train, test)


# -- helpers --------------------------------------------------------------------------

def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    out = [order[i:i + size] for i in range(0, len(order), size)]
    if len(out) > 1 and len(out[-1]) == 1:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def _features(encoders: dict[str, Encoder], ds: MultimodalDataset, mods) -> dict[str, np.ndarray]:
    with T.no_grad():
        return {m: encoders[m](ds.modality(m)).data for m in mods}


def global_public_features(server: GlobalState, public: MultimodalDataset) -> dict[str, np.ndarray]:
    return _features(server.encoders, public, "ab")


def server_task_epoch(server: GlobalState, public: MultimodalDataset, config: RunConfig, rng) -> float:
    """One epoch of contrastive training on the public pairs."""
    params = [p for e in server.encoders.values() for p in e.parameters()]
    total = 0.0
    order = rng.permutation(len(public))
    for idx in _batches(order, config.batch_size):
        loss = info_nce(server.encoders["a"](public.xa[idx]), server.encoders["b"](public.xb[idx]))
        T.zero_grad(params)
        T.backward(loss)
        T.sgd_step(params, config.server_lr)
        total += loss.item() * len(idx)
    return total / len(public)


def refresh_cache(client: ClientState, encoders: dict[str, Encoder], round_: int) -> None:
    """Store a private copy of the broadcast encoders and precompute their features."""
    client.cached_encoders = {m: copy.deepcopy(encoders[m]) for m in client.modalities}
    client.cache_round = round_
    client.global_train = _features(client.cached_encoders, client.train, client.modalities)
    client.global_test = _features(client.cached_encoders, client.test, client.modalities)


def last_broadcast_round(round_: int, interval: int) -> int:
    return round_ - round_ % interval


# -- client side ------------------------------------------------------------------------

def client_update(client: ClientState, exchange: PublicExchange | None, public: MultimodalDataset,
                  config: RunConfig) -> tuple[float, float]:
    """Run E local epochs; returns (mean task loss, mean adversarial loss).

    ``exchange`` is None for isolated (LOCAL) training, which disables fusion
    and alignment since no global model is available.
    """
    seed, cid = config.seed, client.cid
    t = exchange.round if exchange is not None else -1
    use_gff = exchange is not None and config.ablations.gff
    use_baa = exchange is not None and config.ablations.baa
    if exchange is not None:
        if exchange.broadcast:
            refresh_cache(client, exchange.encoders, t)
        elif client.cache_round < last_broadcast_round(t, config.cache_interval):
            raise ProtocolError(f"client {cid} holds encoders from round {client.cache_round}, "
                                f"last broadcast was round {last_broadcast_round(t, config.cache_interval)}")

    mods = client.modalities
    task_losses, adv_losses = [], []
    for epoch in range(config.local_epochs):
        task_rng = stream(seed, "client", cid, "round", t + 1, "epoch", epoch, "task")
        priv = _batches(task_rng.permutation(len(client.train)), config.batch_size)
        pub: list[np.ndarray] = []
        if use_baa:
            baa_rng = stream(seed, "client", cid, "round", t + 1, "epoch", epoch, "baa")
            n_pub = min(config.baa_public_per_epoch, len(public))
            sub = baa_rng.choice(len(public), size=n_pub, replace=False)
            pub = _batches(sub, config.batch_size)
        for i in range(max(len(priv), len(pub))):
            if i < len(pub):
                idx = pub[i]
                adv_losses.append(baa_step(
                    client.branches,
                    {m: public.modality(m)[idx] for m in mods},
                    {m: exchange.global_feats[m][idx] for m in "ab"},
                    config.beta,
                    config.client_lr,
                ))
            if i < len(priv):
                idx = priv[i]
                if use_gff and len(idx) < 2:
                    continue  # batch norm in the gate needs two rows
                client.set_training(True)
                x = {m: client.train.modality(m)[idx] for m in mods}
                g = {m: client.global_train[m][idx] for m in mods} if use_gff else None
                y = client.train.y[idx] if client.classifier is not None else None
                task_losses.append(task_step(client, x, y, g, config.client_lr, use_gff))
    client.set_training(False)
    mean = lambda v: float(np.mean(v)) if v else 0.0  # noqa: E731
    return mean(task_losses), mean(adv_losses)


def extract_public(client: ClientState, public: MultimodalDataset, round_: int) -> Upload:
    """Raw (pre-fusion) local-encoder features of the public set."""
    return Upload(round_, client.cid, _features(client.encoders, public, client.modalities))


def public_entropy(client: ClientState, public: MultimodalDataset, global_feats: dict[str, np.ndarray],
                   use_gff: bool) -> float | None:
    """Mean prediction entropy on the public set; None for clients without a classifier."""
    if client.classifier is None:
        return None
    client.set_training(False)
    with T.no_grad():
        x = {m: public.modality(m) for m in client.modalities}
        (f,) = client_features(client, x, global_feats, use_gff).values()
        p = softmax(client.classifier(f).data, axis=1)
    return float(np.mean(-np.sum(p * np.log(np.clip(p, 1e-300, None)), axis=1)))


# -- server side --------------------------------------------------------------------------

def _static_weights(values: np.ndarray, n_samples: int) -> np.ndarray:
    return np.repeat(values[:, None], n_samples, axis=1)


def aggregate(strategy: str, uploads: dict[int, Upload], global_feats: dict[str, np.ndarray],
              round_: int, clients: list[ClientState] | None = None,
              entropies: dict[int, float | None] | None = None) -> TeacherAggregate:
    """Build per-modality teacher features from client uploads.

    Every upload must carry the current round stamp. Members of a modality
    group are reduced in ascending client id.
    """
    for up in uploads.values():
        if up.round != round_:
            raise ProtocolError(f"upload from client {up.cid} is stamped round {up.round}, expected {round_}")
    roles = {c.cid: c.role for c in clients} if clients else {}
    sizes = {c.cid: len(c.train) for c in clients} if clients else {}
    groups = {}
    for mod in ("a", "b"):
        members = sorted(cid for cid, up in uploads.items() if mod in up.feats)
        if strategy == "aggr_mm":
            members = [cid for cid in members if roles.get(cid) == "multimodal"]
        if not members:
            continue
        feats = [uploads[cid].feats[mod] for cid in members]
        n = len(global_feats[mod])
        if strategy == "fedafd":
            groups[mod] = sed_group(feats, global_feats[mod], members)
            continue
        if strategy in ("avg_uniform", "aggr_mm"):
            w = np.full(len(members), 1.0 / len(members))
        elif strategy == "avg_samples":
            counts = np.array([sizes[cid] for cid in members], dtype=float)
            w = counts / counts.sum()
        elif strategy == "avg_entropy":
            ent = [None if entropies is None else entropies.get(cid) for cid in members]
            known = [e for e in ent if e is not None]
            if len(known) < len(ent):
                log.info("entropy weighting: %d of %d members have no classifier, given the mean logit",
                         len(ent) - len(known), len(ent))
            if not known:
                w = np.full(len(members), 1.0 / len(members))
            else:
                fill = float(np.mean(known))
                w = softmax(-np.array([fill if e is None else e for e in ent]))
        elif strategy == "avg_variance":
            var = np.array([np.mean(np.var(f, axis=0)) for f in feats])
            w = softmax(-var)
        else:
            raise ContractError(f"strategy {strategy!r} has no aggregation rule")
        weights = _static_weights(w, n)
        groups[mod] = GroupAggregate(aggregate_teacher(weights, feats), weights, None, members)
    return TeacherAggregate(groups)


# -- communication -------------------------------------------------------------------------

def feature_bytes(public_size: int, dim: int) -> int:
    return public_size * dim * BYTES_PER_VALUE


def encoder_payload_bytes(config: RunConfig, server: GlobalState | None = None) -> int:
    if config.encoder_bytes is not None:
        return int(config.encoder_bytes)
    server = server or build_server(config)
    return server.encoder_values() * BYTES_PER_VALUE


def exchange_bytes(client: ClientState, config: RunConfig, broadcast: bool, encoder_bytes: int) -> tuple[int, int]:
    """(upload, download) bytes for one client in one round."""
    per = feature_bytes(config.public_size, config.dim)
    up = per * len(client.modalities)
    down = 2 * per + (encoder_bytes if broadcast else 0)
    return up, down


MIB = 1024 ** 2


def mib(nbytes: float) -> float:
    """Bytes to MiB, rounded to 2 decimals as in the reported tables."""
    return round(nbytes / MIB, 2)


@dataclass(frozen=True)
class CommCost:
    """Per-client traffic of a paired client: two feature sets up, two down, plus the encoder.

    Byte fields are exact. The ``*_mb`` properties round each modality's share to
    2 decimals before adding, which is how the published figures were tallied.
    """

    public_size: int
    dim: int
    encoder_bytes: int
    interval: int
    rounds: int

    @property
    def feature_bytes(self) -> int:
        return feature_bytes(self.public_size, self.dim)

    @property
    def upload_bytes(self) -> int:
        return 2 * self.feature_bytes

    def download_bytes(self, round_: int) -> int:
        return 2 * self.feature_bytes + (self.encoder_bytes if round_ % self.interval == 0 else 0)

    @property
    def amortized_encoder_bytes(self) -> float:
        return self.encoder_bytes / self.interval

    @property
    def amortized_download_bytes(self) -> float:
        return 2 * self.feature_bytes + self.amortized_encoder_bytes

    @property
    def total_upload_bytes(self) -> int:
        return self.rounds * self.upload_bytes

    @property
    def total_download_bytes(self) -> int:
        return sum(self.download_bytes(t) for t in range(self.rounds))

    @property
    def upload_mb(self) -> float:
        return round(2 * mib(self.feature_bytes), 2)

    @property
    def download_mb(self) -> float:
        """Broadcast-round download."""
        return round(2 * mib(self.feature_bytes) + mib(self.encoder_bytes), 2)

    @property
    def sum_mb(self) -> float:
        return round(self.upload_mb + self.download_mb, 2)

    @property
    def amortized_download_mb(self) -> float:
        return round(2 * mib(self.feature_bytes) + mib(self.amortized_encoder_bytes), 2)


def comm_cost(config: RunConfig, encoder_bytes: int | None = None) -> CommCost:
    if encoder_bytes is None:
        encoder_bytes = encoder_payload_bytes(config)
    if encoder_bytes < 0:
        raise ContractError("encoder payload must be >= 0 bytes")
    return CommCost(config.public_size, config.dim, int(encoder_bytes), config.cache_interval, config.rounds)


# -- main loop -------------------------------------------------------------------------------

@dataclass
class RunResult:
    config: RunConfig
    records: list
    server: GlobalState
    clients: list[ClientState]
    data: SimData
    last_global_feats: dict[str, np.ndarray] | None = None


def build(config: RunConfig) -> tuple[SimData, GlobalState, list[ClientState]]:
    config.validate()
    data = build_data(config)
    server = build_server(config)
    clients = [build_client(cid, role, tr, te, config) for cid, (role, tr, te) in enumerate(data.clients)]
    for c in clients:
        c.set_training(False)
    return data, server, clients


def run(config: RunConfig, progress=None) -> RunResult:
    """Execute ``config.rounds`` communication rounds and log one record per round."""
    from .report import RoundRecord, evaluate  # report depends on this module

    data, server, clients = build(config)
    public = data.public
    strategy = config.aggregation
    federated = strategy != "local"
    enc_bytes = encoder_payload_bytes(config, server)
    records = []
    gp = None
    for t in range(config.rounds):
        server.round = t
        srv_loss = server_task_epoch(server, public, config, stream(config.seed, "server", t, "task"))
        gp = global_public_features(server, public)

        exchange = None
        if federated:
            broadcast = t % config.cache_interval == 0
            snapshot = {m: copy.deepcopy(e) for m, e in server.encoders.items()} if broadcast else None
            exchange = PublicExchange(t, gp, snapshot)
        losses = {}
        for c in clients:
            losses[c.cid] = client_update(c, exchange, public, config)

        l_kd = 0.0
        if federated:
            for c in clients:
                exchange.uploads[c.cid] = extract_public(c, public, t)
                exchange.up_bytes[c.cid], exchange.down_bytes[c.cid] = exchange_bytes(
                    c, config, exchange.broadcast, enc_bytes)
            entropies = None
            if strategy == "avg_entropy":
                entropies = {c.cid: public_entropy(c, public, gp, config.ablations.gff) for c in clients}
            teacher = aggregate(strategy, exchange.uploads, gp, t, clients, entropies)
            l_kd = kd_update(server, teacher, {"a": public.xa, "b": public.xb}, config.gamma,
                             config.server_lr, config.batch_size, stream(config.seed, "server", t, "kd"),
                             config.kd_squared)

        report = evaluate(clients, server, data, gp, config, t)
        records.append(RoundRecord.from_round(t, config, losses, srv_loss, l_kd, report, exchange))
        if progress is not None:
            progress(records[-1])
    return RunResult(config, records, server, clients, data, gp)
