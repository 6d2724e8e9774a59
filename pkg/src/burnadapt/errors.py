"""Exception taxonomy shared across the package."""


class BurnAdaptError(Exception):
    """Base class for all package errors."""


class DimensionError(BurnAdaptError, ValueError):
    """Tensor shapes or axes violate an operation's contract."""


class ConfigurationError(BurnAdaptError, ValueError):
    """A config object or config file is invalid."""


class DataError(BurnAdaptError, ValueError):
    """Input data violates a documented precondition."""


class FormatError(BurnAdaptError, ValueError):
    """A serialized artifact is malformed. Carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ContractError(BurnAdaptError, RuntimeError):
    """An internal invariant was violated; indicates a bug, not bad input."""


class TrainingDiverged(BurnAdaptError, RuntimeError):
    """Loss became non-finite. Carries the fire ids of the offending batch."""

    def __init__(self, message: str, fire_ids=()):
        super().__init__(message)
        self.fire_ids = list(fire_ids)
