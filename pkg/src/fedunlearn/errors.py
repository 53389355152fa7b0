"""Exception types shared across the package.

Plain invalid arguments raise ValueError; these classes cover the
domain-specific failure modes that callers may want to catch individually.
"""


class FedUnlearnError(Exception):
    """Base class for package-specific errors."""


class ResourceLimitError(FedUnlearnError):
    """An operation would exceed its guarded size limit (e.g. dense d x d)."""


class IndefiniteOperatorError(FedUnlearnError):
    """CG met a direction of non-positive curvature: p'Ap <= 0.

    Signals that the operator is not positive definite at the current
    damping level.
    """

    def __init__(self, message, client_id=None):
        super().__init__(message)
        self.client_id = client_id


class PartitionError(FedUnlearnError):
    """Could not produce a partition meeting the per-client minimum."""


class DivergenceError(FedUnlearnError):
    """Training produced a non-finite loss."""

    def __init__(self, message, round_idx=None, epoch=None, step=None,
                 client_id=None):
        super().__init__(message)
        self.round_idx = round_idx
        self.epoch = epoch
        self.step = step
        self.client_id = client_id


class DegenerateWeightsError(FedUnlearnError):
    """Every affected client has an exactly-zero forget gradient."""


class NoDataError(FedUnlearnError):
    """A reader found no usable input files."""
