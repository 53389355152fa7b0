"""Federated training simulator: non-IID partitioning, local SGD, FedAvg.

Everything is deterministic given the seeds.  Each client's shuffling
stream is derived from (train seed, round, client_id), so removing one
client leaves every other client's data order bit-identical — which is what
makes retraining-based comparisons meaningful.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import models
from .errors import DivergenceError, PartitionError

CHECKPOINT_MAGIC = b"FDCK"
CHECKPOINT_VERSION = 1


@dataclass
class ClientDataset:
    client_id: int
    data: models.Dataset
    weight: float = 0.0


@dataclass(frozen=True)
class PartitionConfig:
    num_clients: int = 10
    dirichlet_alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be > 0")

    def to_dict(self):
        return {"num_clients": self.num_clients,
                "dirichlet_alpha": self.dirichlet_alpha, "seed": self.seed}

    @staticmethod
    def from_dict(d):
        return PartitionConfig(num_clients=d.get("num_clients", 10),
                               dirichlet_alpha=d.get("dirichlet_alpha", 0.5),
                               seed=d.get("seed", 0))


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 20
    local_epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ValueError("local_epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    def to_dict(self):
        return {"rounds": self.rounds, "local_epochs": self.local_epochs,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "seed": self.seed}

    @staticmethod
    def from_dict(d):
        return TrainConfig(rounds=d.get("rounds", 20),
                           local_epochs=d.get("local_epochs", 5),
                           batch_size=d.get("batch_size", 64),
                           learning_rate=d.get("learning_rate", 0.01),
                           seed=d.get("seed", 0))


@dataclass
class FederationState:
    global_params: np.ndarray
    round: int = 0
    history: list = field(default_factory=list)  # (loss, accuracy) per round


def assign_weights(clients):
    """Recompute size-proportional weights in place; returns the clients."""
    total = sum(len(c.data) for c in clients)
    if total == 0:
        raise ValueError("federation holds no data")
    for c in clients:
        c.weight = len(c.data) / total
    return clients


def partition_dirichlet(data, config):
    """Per-class Dirichlet split of ``data`` across clients.

    For each class the class indices are shuffled and divided by
    proportions drawn from Dirichlet(alpha, ..., alpha).  Resamples (up to
    100 times) until every client holds at least one example.
    """
    n = len(data)
    N = config.num_clients
    if n == 0:
        raise ValueError("cannot partition an empty dataset")
    if N > n:
        raise ValueError(f"more clients ({N}) than examples ({n})")
    rng = np.random.default_rng(config.seed)
    classes = np.unique(data.labels)
    for _attempt in range(100):
        buckets = [[] for _ in range(N)]
        for c in classes:
            idx = np.flatnonzero(data.labels == c)
            rng.shuffle(idx)
            props = rng.dirichlet(np.full(N, config.dirichlet_alpha))
            bounds = (np.cumsum(props) * len(idx)).astype(np.int64)[:-1]
            for j, chunk in enumerate(np.split(idx, bounds)):
                buckets[j].append(chunk)
        sizes = [sum(len(ch) for ch in b) for b in buckets]
        if min(sizes) >= 1:
            clients = []
            for j, b in enumerate(buckets):
                idx = np.sort(np.concatenate(b))
                clients.append(ClientDataset(client_id=j, data=data.subset(idx)))
            return assign_weights(clients)
    raise PartitionError(
        f"no partition with >= 1 example per client after 100 draws "
        f"(n={n}, clients={N}, alpha={config.dirichlet_alpha})")


def local_train(spec, params, client, config, round_idx=0):
    """Minibatch SGD on one client's data.

    The shuffle stream is seeded by (config.seed, round_idx, client_id).
    The final partial batch is kept.  Raises DivergenceError when a batch
    loss goes non-finite.
    """
    theta = np.array(params, dtype=np.float64)
    n = len(client.data)
    lr = config.learning_rate
    if lr == 0.0:
        return theta
    rng = np.random.default_rng([config.seed, round_idx, client.client_id])
    feats, labs = client.data.features, client.data.labels
    bs = min(config.batch_size, n)
    for epoch in range(config.local_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            sel = perm[start:start + bs]
            batch = models.Dataset(feats[sel], labs[sel])
            val, g = models.loss_and_gradient(spec, theta, batch)
            if not np.isfinite(val):
                raise DivergenceError(
                    f"non-finite loss {val} on client {client.client_id}",
                    round_idx=round_idx, epoch=epoch, step=start // bs,
                    client_id=client.client_id)
            theta -= lr * g
    return theta


def _pooled(clients):
    feats = np.concatenate([c.data.features for c in
                            sorted(clients, key=lambda c: c.client_id)])
    labs = np.concatenate([c.data.labels for c in
                           sorted(clients, key=lambda c: c.client_id)])
    return models.Dataset(feats, labs)


def fedavg_round(spec, state, clients, config):
    """One FedAvg round: local SGD everywhere, then weighted averaging.

    The reduction runs in ascending client_id order so results are
    bit-reproducible regardless of how the local steps were scheduled.
    """
    ordered = sorted(clients, key=lambda c: c.client_id)
    wsum = sum(c.weight for c in ordered)
    if abs(wsum - 1.0) > 1e-12:
        raise ValueError(f"client weights sum to {wsum!r}, expected 1")
    theta = np.zeros_like(state.global_params)
    for c in ordered:
        try:
            local = local_train(spec, state.global_params, c, config,
                                round_idx=state.round)
        except DivergenceError as exc:
            exc.client_id = c.client_id
            raise
        theta += c.weight * local
    pooled = _pooled(ordered)
    val = models.loss(spec, theta, pooled)
    logits = models.predict_logits(spec, theta, pooled)
    acc = float(np.mean(np.argmax(logits, axis=1) == pooled.labels))
    history = list(state.history)
    history.append((val, acc))
    return FederationState(global_params=theta, round=state.round + 1,
                           history=history)


def train_from_clients(spec, clients, config, init_seed=None):
    """Run ``config.rounds`` FedAvg rounds from a seeded initialization."""
    seed = config.seed if init_seed is None else init_seed
    assign_weights(clients)
    state = FederationState(global_params=models.init_params(spec, seed))
    for _ in range(config.rounds):
        state = fedavg_round(spec, state, clients, config)
    return state


def train_federation(spec, data, partition, config, init_seed=None):
    """Partition ``data`` and train; returns (final state, clients)."""
    clients = partition_dirichlet(data, partition)
    state = train_from_clients(spec, clients, config, init_seed=init_seed)
    return state, clients


def save_checkpoint(path, params, round_idx=0, sidecar=None):
    """Binary header (magic, version, d, round) + little-endian float64s.

    A JSON sidecar at ``<path>.json`` records whatever config/seed data the
    caller passes, so the checkpoint can be reproduced from it.
    """
    theta = np.asarray(params, dtype=np.float64).ravel()
    header = struct.pack("<4sIQQ", CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                         theta.size, round_idx)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(theta.astype("<f8").tobytes())
    if sidecar is not None:
        with open(f"{path}.json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_checkpoint(path):
    """Returns (params, round, sidecar-or-None)."""
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIQQ"))
        magic, version, d, round_idx = struct.unpack("<4sIQQ", header)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        payload = fh.read(8 * d)
    if len(payload) != 8 * d:
        raise ValueError("checkpoint truncated")
    theta = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    sidecar = None
    try:
        with open(f"{path}.json", "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        pass
    return theta, int(round_idx), sidecar


def save_history_csv(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("round,loss,accuracy\n")
        for i, (val, acc) in enumerate(history):
            fh.write(f"{i + 1},{val!r},{acc!r}\n")
