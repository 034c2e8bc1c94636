"""Exception hierarchy shared by all gbrs modules."""


class GbrsError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(GbrsError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(GbrsError, ValueError):
    """A documented precondition of an operation was violated."""


class InputError(GbrsError, ValueError):
    """User-provided data (clicks, labels, pixel values) is out of range."""


class ModeError(GbrsError, ValueError):
    """Operation not available for the session's task or parameterization."""


class LoadError(GbrsError, ValueError):
    """Checkpoint or snapshot bytes could not be decoded."""


class TrainingError(GbrsError, RuntimeError):
    """Training diverged or could not proceed."""


class NumericError(GbrsError, RuntimeError):
    """Refinement produced non-finite values and was rolled back."""
