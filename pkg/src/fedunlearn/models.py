"""Differentiable small models: linear-softmax and MLP classifiers.

All operations work on a flat float64 parameter vector.  Loss is the MEAN
cross-entropy over the dataset plus 0.5 * l2 * ||theta||^2, so gradients are
comparable across datasets of different sizes and the Hessian is bounded
below by l2 * I for the convex (logistic) model.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ResourceLimitError

DENSE_HESSIAN_MAX_D = 5000

_ACT_CODES = {"tanh": _kernels.ACT_TANH, "relu": _kernels.ACT_RELU}


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, p) with integer class labels in [0, C)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labs = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValueError("labels must be 1-D and match the feature rows")
        if labs.size and labs.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx])

    def concat(self, other):
        return Dataset(
            np.concatenate([self.features, other.features], axis=0),
            np.concatenate([self.labels, other.labels], axis=0),
        )


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: kind, layer widths, activation, ridge."""

    kind: str  # "logistic" | "mlp"
    layer_sizes: tuple
    activation: str = "tanh"
    l2: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError("layer_sizes needs >= 2 positive entries")
        if self.kind == "logistic" and len(sizes) != 2:
            raise ValueError("logistic model takes exactly [n_in, n_classes]")
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.l2 < 0:
            raise ValueError("l2 coefficient must be >= 0")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "l2", float(self.l2))

    @property
    def num_params(self):
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))

    @property
    def num_classes(self):
        return self.layer_sizes[-1]

    @property
    def _sizes(self):
        return np.asarray(self.layer_sizes, dtype=np.int64)

    @property
    def _act(self):
        return _ACT_CODES[self.activation]

    def to_dict(self):
        return {
            "kind": self.kind,
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "l2": self.l2,
        }

    @staticmethod
    def from_dict(d):
        return ModelSpec(
            kind=d["kind"],
            layer_sizes=tuple(d["layer_sizes"]),
            activation=d.get("activation", "tanh"),
            l2=d.get("l2", 1e-3),
        )


def _check_params(spec, params):
    theta = np.ascontiguousarray(np.asarray(params, dtype=np.float64)).ravel()
    if theta.size != spec.num_params:
        raise ValueError(
            f"parameter vector has length {theta.size}, model needs {spec.num_params}"
        )
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter vector contains non-finite entries")
    return theta


def _check_data(spec, data):
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if data.n_features != spec.layer_sizes[0]:
        raise ValueError(
            f"dataset has {data.n_features} features, model expects {spec.layer_sizes[0]}"
        )
    if data.labels.max() >= spec.num_classes:
        raise ValueError("label out of range for the model's class count")
    return data


def init_params(spec, seed):
    """Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer, seeded."""
    rng = np.random.default_rng(seed)
    chunks = []
    s = spec.layer_sizes
    for i in range(len(s) - 1):
        bound = 1.0 / np.sqrt(s[i])
        chunks.append(rng.uniform(-bound, bound, size=s[i] * s[i + 1]))
        chunks.append(rng.uniform(-bound, bound, size=s[i + 1]))
    return np.concatenate(chunks)


def loss(spec, params, data):
    theta = _check_params(spec, params)
    _check_data(spec, data)
    return float(_kernels.loss_value(
        theta, spec._sizes, spec._act, data.features, data.labels, spec.l2))


def gradient(spec, params, data):
    theta = _check_params(spec, params)
    _check_data(spec, data)
    _, g = _kernels.loss_and_grad(
        theta, spec._sizes, spec._act, data.features, data.labels, spec.l2)
    return g


def loss_and_gradient(spec, params, data):
    theta = _check_params(spec, params)
    _check_data(spec, data)
    val, g = _kernels.loss_and_grad(
        theta, spec._sizes, spec._act, data.features, data.labels, spec.l2)
    return float(val), g


def data_gradient(spec, params, data):
    """Gradient of the data term only (mean cross-entropy, no ridge).

    This is the gradient of what a deletion actually removes from the
    objective; the ridge penalty stays behind, so it does not belong in
    forget-set gradients.
    """
    theta = _check_params(spec, params)
    _check_data(spec, data)
    _, g = _kernels.loss_and_grad(
        theta, spec._sizes, spec._act, data.features, data.labels, 0.0)
    return g


def hvp(spec, params, data, v, damping=0.0):
    """(Hessian of loss) @ v + damping * v, without forming the Hessian."""
    theta = _check_params(spec, params)
    _check_data(spec, data)
    vec = np.ascontiguousarray(np.asarray(v, dtype=np.float64)).ravel()
    if vec.size != theta.size:
        raise ValueError("direction vector length does not match parameters")
    if damping < 0:
        raise ValueError("damping must be >= 0")
    hv = _kernels.hvp_dampless(
        theta, spec._sizes, spec._act, data.features, data.labels, spec.l2, vec)
    if damping:
        hv = hv + damping * vec
    return hv


def dense_hessian(spec, params, data):
    """Column-by-column Hessian from the HVP kernel; small d only."""
    d = spec.num_params
    if d > DENSE_HESSIAN_MAX_D:
        raise ResourceLimitError(
            f"dense Hessian for d={d} exceeds the {DENSE_HESSIAN_MAX_D} limit")
    theta = _check_params(spec, params)
    _check_data(spec, data)
    H = np.empty((d, d))
    e = np.zeros(d)
    for j in range(d):
        e[j] = 1.0
        H[:, j] = _kernels.hvp_dampless(
            theta, spec._sizes, spec._act, data.features, data.labels,
            spec.l2, e)
        e[j] = 0.0
    return H


def predict_logits(spec, params, data):
    theta = _check_params(spec, params)
    _check_data(spec, data)
    return _kernels.forward_logits(theta, spec._sizes, spec._act, data.features)


def predict_proba(spec, params, data):
    logits = predict_logits(spec, params, data)
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p


def per_example_loss(spec, params, data):
    """Per-row cross-entropy (no ridge term)."""
    theta = _check_params(spec, params)
    _check_data(spec, data)
    return _kernels.per_example_ce(
        theta, spec._sizes, spec._act, data.features, data.labels)


@dataclass(frozen=True)
class SyntheticSpec:
    """Seeded Gaussian-mixture classification generator parameters.

    ``means_seed`` fixes the class means independently of the sampling
    seed, so train and test splits can share one mixture while drawing
    disjoint points.  When None the means come off the front of the main
    stream.
    """

    n: int
    p: int
    num_classes: int
    separation: float = 2.0
    seed: int = 0
    label_noise: float = 0.0
    means_seed: int = None

    def to_dict(self):
        return {
            "n": self.n, "p": self.p, "num_classes": self.num_classes,
            "separation": self.separation, "seed": self.seed,
            "label_noise": self.label_noise, "means_seed": self.means_seed,
        }

    @staticmethod
    def from_dict(d):
        return SyntheticSpec(
            n=d["n"], p=d["p"], num_classes=d["num_classes"],
            separation=d.get("separation", 2.0), seed=d.get("seed", 0),
            label_noise=d.get("label_noise", 0.0),
            means_seed=d.get("means_seed"),
        )


def make_synthetic(spec_or_n, p=None, num_classes=None, separation=2.0,
                   seed=0, label_noise=0.0, means_seed=None):
    """Gaussian mixture with one unit-variance blob per class.

    Class means are random directions scaled to ``separation``; labels are
    balanced then shuffled.  ``label_noise`` flips that fraction of labels
    to a different class, uniformly.
    """
    if isinstance(spec_or_n, SyntheticSpec):
        s = spec_or_n
        n, p, C = s.n, s.p, s.num_classes
        separation, seed, label_noise = s.separation, s.seed, s.label_noise
        means_seed = s.means_seed
    else:
        n, p, C = int(spec_or_n), int(p), int(num_classes)
    if n < 1 or p < 1 or C < 2:
        raise ValueError("need n >= 1, p >= 1, num_classes >= 2")
    rng = np.random.default_rng(seed)
    means_rng = rng if means_seed is None else np.random.default_rng(means_seed)
    means = means_rng.normal(size=(C, p))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.arange(n, dtype=np.int64) % C
    rng.shuffle(labels)
    X = means[labels] + rng.normal(size=(n, p))
    if label_noise > 0:
        flip = rng.random(n) < label_noise
        shift = rng.integers(1, C, size=n)
        labels = np.where(flip, (labels + shift) % C, labels)
    return Dataset(X, labels)


def save_dataset_csv(path, data):
    """Header line 'n,p,C' then one row per example: features, then label."""
    n, p = data.features.shape
    C = int(data.labels.max()) + 1 if n else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n},{p},{C}\n")
        for i in range(n):
            row = ",".join(repr(v) for v in data.features[i])
            fh.write(f"{row},{data.labels[i]}\n")


def load_dataset_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            n, p, C = (int(v) for v in header.split(","))
        except Exception as exc:
            raise ValueError(f"bad dataset header {header!r}") from exc
        feats = np.empty((n, p))
        labels = np.empty(n, dtype=np.int64)
        for i in range(n):
            parts = fh.readline().strip().split(",")
            if len(parts) != p + 1:
                raise ValueError(f"row {i} has {len(parts)} fields, expected {p + 1}")
            feats[i] = [float(v) for v in parts[:p]]
            labels[i] = int(parts[p])
    if labels.size and labels.max() >= C:
        raise ValueError("label exceeds declared class count")
    return Dataset(feats, labels)


def warmup_kernels():
    """Trigger JIT compilation of every kernel on a tiny problem.

    Call once before wall-clock measurements so compile time never lands
    inside a timed region.  No-op cost on the numpy backend.
    """
    spec = ModelSpec("mlp", (2, 3, 2), activation="tanh", l2=1e-3)
    data = Dataset(np.array([[0.1, -0.2], [0.3, 0.4]]), np.array([0, 1]))
    theta = init_params(spec, 0)
    loss(spec, theta, data)
    gradient(spec, theta, data)
    hvp(spec, theta, data, np.ones(spec.num_params))
    per_example_loss(spec, theta, data)
    predict_logits(spec, theta, data)
    lg = ModelSpec("logistic", (2, 2), l2=1e-3)
    t2 = init_params(lg, 0)
    gradient(lg, t2, data)
    hvp(lg, t2, data, np.ones(lg.num_params))
