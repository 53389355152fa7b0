"""Influence-function client unlearning via damped conjugate gradient.

The main entry point ``unlearn`` removes a forget set's influence from the
global model: each affected client solves (H_i + lambda I) v = g with CG,
where H_i is the Hessian of its FULL local loss and g is the data-term
gradient over its share of the forget set; the raw update +v (the
first-order effect of deleting that data term) is clamped to at most
beta * ||theta|| in norm, weighted by a gradient-norm causal coefficient,
and the server aggregates with the usual size-proportional weights.

Sign convention: deleting a data term whose gradient at the optimum is g
moves the optimum by +H^{-1} g (dropping the term leaves the remaining
objective with gradient -g to descend).  The raw update therefore adds
+v, and the dense oracle below uses the same orientation.

Clients that hold none of the forget data contribute an exactly-zero
update — not a small one — which is the causal-isolation contract the
tests pin down bit-for-bit.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import models
from .errors import DegenerateWeightsError, IndefiniteOperatorError, ResourceLimitError
from .federation import assign_weights, partition_dirichlet, train_from_clients
from .krylov import CGConfig, cg_solve


@dataclass(frozen=True)
class ForgetSpec:
    """Which client's data to forget; ``subset`` indexes into that client's
    dataset, absent meaning the entire client."""

    forget_client: int
    subset: tuple = None

    def __post_init__(self):
        if self.subset is not None:
            idx = tuple(int(i) for i in self.subset)
            if len(idx) == 0:
                raise ValueError("forget subset must be nonempty when given")
            if len(set(idx)) != len(idx):
                raise ValueError("forget subset indices must be unique")
            object.__setattr__(self, "subset", idx)

    def to_dict(self):
        return {"forget_client": self.forget_client,
                "subset": list(self.subset) if self.subset is not None else None}

    @staticmethod
    def from_dict(d):
        sub = d.get("subset")
        return ForgetSpec(forget_client=d["forget_client"],
                          subset=tuple(sub) if sub is not None else None)


@dataclass(frozen=True)
class UnlearnConfig:
    cg: CGConfig = field(default_factory=CGConfig)
    scale_beta: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.scale_beta <= 1.0):
            raise ValueError("scale_beta must lie in (0, 1]")

    def to_dict(self):
        return {"cg": self.cg.to_dict(), "scale_beta": self.scale_beta}

    @staticmethod
    def from_dict(d):
        return UnlearnConfig(cg=CGConfig.from_dict(d.get("cg", {})),
                             scale_beta=d.get("scale_beta", 0.01))


@dataclass
class CausalWeights:
    alpha: dict  # client_id -> weight in [0, 1]; exactly 0 for unaffected


@dataclass
class ClientUpdate:
    raw_update: np.ndarray
    scale: float
    weighted_update: np.ndarray
    cg_result: object = None


@dataclass
class UnlearnResult:
    theta_u: np.ndarray
    per_client: dict  # client_id -> ClientUpdate
    weights: CausalWeights
    wall_time_s: float
    cpu_time_s: float
    noop: bool = False

    def to_report(self, config=None):
        out = {
            "noop": self.noop,
            "wall_time_s": self.wall_time_s,
            "cpu_time_s": self.cpu_time_s,
            "clients": {},
        }
        if config is not None:
            out["config"] = config.to_dict()
        for cid in sorted(self.per_client):
            upd = self.per_client[cid]
            out["clients"][str(cid)] = {
                "alpha": self.weights.alpha.get(cid, 0.0),
                "scale": upd.scale,
                "raw_update_norm": float(np.linalg.norm(upd.raw_update)),
                "weighted_update_norm": float(np.linalg.norm(upd.weighted_update)),
                "cg_iterations": (upd.cg_result.iterations_used
                                  if upd.cg_result is not None else 0),
                "cg_converged": (upd.cg_result.converged
                                 if upd.cg_result is not None else None),
                "cg_relative_residuals": (upd.cg_result.relative_residuals
                                          if upd.cg_result is not None else []),
            }
        return out


def resolve_forget(clients, forget):
    """Map each client to its slice of the forget set ({} entries only for
    clients actually holding forget data)."""
    by_id = {c.client_id: c for c in clients}
    if forget.forget_client not in by_id:
        raise ValueError(f"no client with id {forget.forget_client}")
    client = by_id[forget.forget_client]
    if forget.subset is None:
        return {client.client_id: client.data}
    idx = np.asarray(forget.subset, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= len(client.data):
        raise ValueError("forget subset index out of range")
    return {client.client_id: client.data.subset(idx)}


def causal_weights(spec, params, clients, forget):
    """Gradient-norm-proportional weights over affected clients, zero
    elsewhere.

    ``forget`` may be a ForgetSpec or a precomputed {client_id: Dataset}
    map.  Raises DegenerateWeightsError when every affected gradient is
    exactly zero.
    """
    forget_map = forget if isinstance(forget, dict) else resolve_forget(clients, forget)
    if not forget_map:
        raise ValueError("forget set intersects no client")
    norms = {}
    for cid in sorted(forget_map):
        g = models.data_gradient(spec, params, forget_map[cid])
        norms[cid] = float(np.linalg.norm(g))
    total = sum(norms.values())
    if total == 0.0:
        raise DegenerateWeightsError(
            "all affected forget gradients are exactly zero")
    alpha = {c.client_id: 0.0 for c in clients}
    for cid, nrm in norms.items():
        alpha[cid] = nrm / total
    return CausalWeights(alpha=alpha)


def client_unlearn_update(spec, params, client, forget_data, config):
    """One client's raw influence update and its adaptive scale.

    g is the data-term gradient over the forget data; the CG operator is
    the Hessian of the client's FULL local loss (plus the config damping,
    applied by the solver).  Returns (raw_update, scale, cg_result) with
    raw_update = +v_k (deletion direction, see module docstring) and
    scale = min(1, beta ||theta|| / ||raw_update||).
    """
    theta = np.asarray(params, dtype=np.float64).ravel()
    if len(forget_data) == 0:
        raise ValueError("forget data for the client is empty")
    g = models.data_gradient(spec, theta, forget_data)

    def operator(v):
        return models.hvp(spec, theta, client.data, v, damping=0.0)

    try:
        cg_res = cg_solve(operator, g, config.cg)
    except IndefiniteOperatorError as exc:
        exc.client_id = client.client_id
        raise
    raw = cg_res.solution.copy()
    raw_norm = float(np.linalg.norm(raw))
    if raw_norm == 0.0:
        scale = 1.0
    else:
        scale = min(1.0, config.scale_beta * float(np.linalg.norm(theta)) / raw_norm)
    return raw, scale, cg_res


def unlearn(spec, params, clients, forget, config, use_causal=True,
            use_scaling=True):
    """Full unlearning pass; see the module docstring for the update rule.

    ``use_causal=False`` is the ablation toggle: every client gets uniform
    weight 1/N and computes its update against the whole forget set, which
    deliberately breaks causal isolation.  ``use_scaling=False`` forces
    scale = 1.
    """
    t_wall = time.perf_counter()
    t_cpu = time.process_time()
    theta = np.asarray(params, dtype=np.float64).ravel()
    ordered = sorted(clients, key=lambda c: c.client_id)
    forget_map = resolve_forget(clients, forget)
    d = spec.num_params
    per_client = {}

    if use_causal:
        try:
            weights = causal_weights(spec, theta, clients, forget_map)
        except DegenerateWeightsError:
            for c in ordered:
                zero = np.zeros(d)
                per_client[c.client_id] = ClientUpdate(zero, 1.0, zero, None)
            return UnlearnResult(
                theta_u=theta.copy(), per_client=per_client,
                weights=CausalWeights({c.client_id: 0.0 for c in ordered}),
                wall_time_s=time.perf_counter() - t_wall,
                cpu_time_s=time.process_time() - t_cpu, noop=True)
    else:
        weights = CausalWeights({c.client_id: 1.0 / len(ordered)
                                 for c in ordered})

    full_forget = None
    if not use_causal:
        parts = [forget_map[cid] for cid in sorted(forget_map)]
        full_forget = parts[0]
        for extra in parts[1:]:
            full_forget = full_forget.concat(extra)

    theta_u = theta.copy()
    for c in ordered:
        alpha = weights.alpha[c.client_id]
        if alpha == 0.0:
            zero = np.zeros(d)
            per_client[c.client_id] = ClientUpdate(zero, 1.0, zero, None)
            continue
        fdata = full_forget if not use_causal else forget_map[c.client_id]
        raw, scale, cg_res = client_unlearn_update(spec, theta, c, fdata, config)
        if not use_scaling:
            scale = 1.0
        weighted = alpha * scale * raw
        per_client[c.client_id] = ClientUpdate(raw, scale, weighted, cg_res)
        theta_u += c.weight * weighted
    return UnlearnResult(
        theta_u=theta_u, per_client=per_client, weights=weights,
        wall_time_s=time.perf_counter() - t_wall,
        cpu_time_s=time.process_time() - t_cpu)


def exact_influence(spec, params, clients, forget):
    """Dense influence oracle: theta + H^{-1} g with the full federated
    Hessian H = sum_i w_i H_i and g the data-term gradient over the forget
    set (the deletion orientation; see the module docstring)."""
    d = spec.num_params
    if d > models.DENSE_HESSIAN_MAX_D:
        raise ResourceLimitError(
            f"exact influence needs a dense {d} x {d} Hessian; limit is "
            f"{models.DENSE_HESSIAN_MAX_D}")
    theta = np.asarray(params, dtype=np.float64).ravel()
    assign_weights(clients)
    H = np.zeros((d, d))
    for c in sorted(clients, key=lambda c: c.client_id):
        H += c.weight * models.dense_hessian(spec, theta, c.data)
    forget_map = resolve_forget(clients, forget)
    parts = [forget_map[cid] for cid in sorted(forget_map)]
    forget_data = parts[0]
    for extra in parts[1:]:
        forget_data = forget_data.concat(extra)
    g = models.data_gradient(spec, theta, forget_data)
    try:
        delta = np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        warnings.warn("singular federated Hessian; adding 1e-10 ridge")
        delta = np.linalg.solve(H + 1e-10 * np.eye(d), g)
    return theta + delta


@dataclass
class RetrainResult:
    params: np.ndarray
    wall_time_s: float
    cpu_time_s: float
    history: list
    clients: list


def retrain_oracle(spec, data, partition, train_config, forget):
    """Gold standard: retrain from the same initialization with the forget
    set removed (the client is dropped entirely if emptied)."""
    t_wall = time.perf_counter()
    t_cpu = time.process_time()
    clients = partition_dirichlet(data, partition)
    kept = []
    for c in clients:
        if c.client_id != forget.forget_client:
            kept.append(c)
            continue
        if forget.subset is None:
            continue  # whole client dropped
        keep_idx = np.setdiff1d(np.arange(len(c.data)),
                                np.asarray(forget.subset, dtype=np.int64))
        if keep_idx.size == 0:
            continue
        kept.append(type(c)(client_id=c.client_id, data=c.data.subset(keep_idx)))
    if not kept:
        raise ValueError("forget spec removes the entire federation")
    state = train_from_clients(spec, kept, train_config,
                               init_seed=train_config.seed)
    return RetrainResult(params=state.global_params,
                         wall_time_s=time.perf_counter() - t_wall,
                         cpu_time_s=time.process_time() - t_cpu,
                         history=state.history, clients=kept)


def naive_ga(spec, params, forget_data, epochs=10, lr=0.01):
    """Gradient-ascent baseline: theta += lr * grad(theta; forget set),
    full batch, for ``epochs`` steps.  Returns (params, diverged)."""
    theta = np.asarray(params, dtype=np.float64).ravel().copy()
    for _ in range(epochs):
        g = models.gradient(spec, theta, forget_data)
        theta += lr * g
        if not np.all(np.isfinite(theta)):
            return theta, True
    return theta, False
