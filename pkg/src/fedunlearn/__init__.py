"""Federated training simulator with influence-function client unlearning.

The unlearning update solves each affected client's damped local-Hessian
system with matrix-free conjugate gradient, weights it by a gradient-norm
causal coefficient (exactly zero for clients without forget data), clamps
it adaptively, and aggregates server-side — then verifies itself against
retraining oracles, dense influence solves, and the theoretical
convergence/stability bounds.
"""

from .backend import BACKEND_NAME, USE_NUMBA
from .config import DataConfig, ExperimentConfig
from .errors import (
    DegenerateWeightsError,
    DivergenceError,
    FedUnlearnError,
    IndefiniteOperatorError,
    NoDataError,
    PartitionError,
    ResourceLimitError,
)
from .evaluation import MetricsReport
from .federation import ClientDataset, FederationState, PartitionConfig, TrainConfig
from .krylov import CGConfig, CGResult, SpectrumEstimate
from .models import Dataset, ModelSpec, SyntheticSpec
from .unlearning import CausalWeights, ForgetSpec, UnlearnConfig, UnlearnResult

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "USE_NUMBA",
    "CGConfig",
    "CGResult",
    "CausalWeights",
    "ClientDataset",
    "DataConfig",
    "Dataset",
    "DegenerateWeightsError",
    "DivergenceError",
    "ExperimentConfig",
    "FedUnlearnError",
    "FederationState",
    "ForgetSpec",
    "IndefiniteOperatorError",
    "MetricsReport",
    "ModelSpec",
    "NoDataError",
    "PartitionConfig",
    "PartitionError",
    "ResourceLimitError",
    "SpectrumEstimate",
    "SyntheticSpec",
    "TrainConfig",
    "UnlearnConfig",
    "UnlearnResult",
    "__version__",
]
