"""Experiment configuration: one JSON file, fully defaulted.

Every field falls back to the default federated protocol (10 clients,
Dirichlet 0.5, 20 rounds x 5 local epochs, batch 64, lr 0.01, SGD) and the
default unlearning hyperparameters (10 CG iterations, damping 0.01,
scale clamp 0.01).  The experiment seed list drives per-seed derived seeds
for partitioning and training while the dataset draw stays fixed.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .federation import PartitionConfig, TrainConfig
from .models import ModelSpec, SyntheticSpec, load_dataset_csv, make_synthetic
from .unlearning import ForgetSpec, UnlearnConfig


def derive_seed(*parts):
    """Deterministic well-mixed 31-bit seed from integer parts."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0] >> 1)


@dataclass(frozen=True)
class DataConfig:
    synthetic: SyntheticSpec = None
    test_synthetic: SyntheticSpec = None
    path: str = None
    test_path: str = None

    def __post_init__(self):
        if (self.synthetic is None) == (self.path is None):
            raise ValueError("data config needs exactly one of synthetic | path")

    def load_train(self):
        if self.path is not None:
            return load_dataset_csv(self.path)
        return make_synthetic(self.synthetic)

    def load_test(self):
        if self.path is not None:
            if self.test_path is None:
                raise ValueError("file-based data config needs test_path")
            return load_dataset_csv(self.test_path)
        spec = self.test_synthetic
        if spec is None:
            base = self.synthetic
            means = base.means_seed if base.means_seed is not None else base.seed
            spec = SyntheticSpec(
                n=base.n, p=base.p, num_classes=base.num_classes,
                separation=base.separation,
                seed=derive_seed(base.seed, 0x7E57),
                label_noise=0.0, means_seed=means)
        return make_synthetic(spec)

    def to_dict(self):
        return {
            "synthetic": self.synthetic.to_dict() if self.synthetic else None,
            "test_synthetic": (self.test_synthetic.to_dict()
                               if self.test_synthetic else None),
            "path": self.path,
            "test_path": self.test_path,
        }

    @staticmethod
    def from_dict(d):
        return DataConfig(
            synthetic=(SyntheticSpec.from_dict(d["synthetic"])
                       if d.get("synthetic") else None),
            test_synthetic=(SyntheticSpec.from_dict(d["test_synthetic"])
                            if d.get("test_synthetic") else None),
            path=d.get("path"),
            test_path=d.get("test_path"),
        )


def _default_model():
    # 64*144 + 144 + 144*10 + 10 = 10810 parameters
    return ModelSpec("mlp", (64, 144, 10), activation="tanh", l2=1e-3)


def _default_data():
    return DataConfig(
        synthetic=SyntheticSpec(n=2000, p=64, num_classes=10,
                                separation=2.0, seed=0, means_seed=7),
        test_synthetic=SyntheticSpec(n=1000, p=64, num_classes=10,
                                     separation=2.0, seed=905411,
                                     means_seed=7),
    )


@dataclass(frozen=True)
class NaiveGAConfig:
    epochs: int = 10
    learning_rate: float = 0.01

    def to_dict(self):
        return {"epochs": self.epochs, "learning_rate": self.learning_rate}

    @staticmethod
    def from_dict(d):
        return NaiveGAConfig(epochs=d.get("epochs", 10),
                             learning_rate=d.get("learning_rate", 0.01))


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=_default_model)
    data: DataConfig = field(default_factory=_default_data)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    unlearn: UnlearnConfig = field(default_factory=UnlearnConfig)
    forget: ForgetSpec = field(default_factory=lambda: ForgetSpec(0))
    naive_ga: NaiveGAConfig = field(default_factory=NaiveGAConfig)
    seeds: tuple = (1, 2, 3, 4, 5)
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValueError("seeds list must be nonempty")
        object.__setattr__(self, "seeds", seeds)

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "data": self.data.to_dict(),
            "partition": self.partition.to_dict(),
            "train": self.train.to_dict(),
            "unlearn": self.unlearn.to_dict(),
            "forget": self.forget.to_dict(),
            "naive_ga": self.naive_ga.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    @staticmethod
    def from_dict(d):
        kwargs = {}
        if "model" in d:
            kwargs["model"] = ModelSpec.from_dict(d["model"])
        if "data" in d:
            kwargs["data"] = DataConfig.from_dict(d["data"])
        if "partition" in d:
            kwargs["partition"] = PartitionConfig.from_dict(d["partition"])
        if "train" in d:
            kwargs["train"] = TrainConfig.from_dict(d["train"])
        if "unlearn" in d:
            kwargs["unlearn"] = UnlearnConfig.from_dict(d["unlearn"])
        if "forget" in d:
            kwargs["forget"] = ForgetSpec.from_dict(d["forget"])
        if "naive_ga" in d:
            kwargs["naive_ga"] = NaiveGAConfig.from_dict(d["naive_ga"])
        if "seeds" in d:
            kwargs["seeds"] = tuple(d["seeds"])
        if "output_dir" in d:
            kwargs["output_dir"] = d["output_dir"]
        return ExperimentConfig(**kwargs)

    @staticmethod
    def load(path):
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentConfig.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
