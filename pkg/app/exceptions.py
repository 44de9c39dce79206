"""
Exception hierarchy shared by the services, the CLI and the HTTP layer.

Every error carries a ``category`` so callers can map it to an exit code or an
HTTP status without inspecting the concrete type.
"""
from typing import Optional


class MecpError(Exception):
    """Base class for every error raised by the toolkit."""

    category = "numerical"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class DomainViolationError(MecpError):
    """A state left the admissible state domain of its problem."""

    category = "input"


class SingularControlError(MecpError):
    """The maximizing control is undefined (Legendre condition fails)."""


class ContractViolationError(MecpError):
    """An operation was called outside its documented preconditions."""

    category = "input"


class AssumptionViolationError(MecpError):
    """A structural assumption of the problem (full-rank constraint gradient) fails."""


class PropagationError(MecpError):
    """Integration stopped before reaching the end of its span."""

    def __init__(self, message: str, last_sigma: float):
        super().__init__(f"{message} (last good sigma={last_sigma:.12g})")
        self.last_sigma = last_sigma


class DegenerateFamilyError(MecpError):
    """The variational determinant stays at zero past the exclusion window."""


class SamplingError(MecpError):
    """A terminal sample violates the state domain."""

    category = "input"

    def __init__(self, message: str, index: Optional[int] = None):
        if index is not None:
            message = f"sample {index}: {message}"
        super().__init__(message)
        self.index = index


class EmptyDatasetError(MecpError):
    """No usable extremal was produced."""


class DatasetParseError(MecpError):
    """A dataset file could not be parsed."""

    category = "input"

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TrainingError(MecpError):
    """Training diverged."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class ConfigError(MecpError):
    """A run config is missing or invalid."""

    category = "input"


class ArtifactNotFoundError(MecpError):
    """A model, dataset or config file does not exist."""

    category = "missing"
