class SpiError(Exception):
    """Base class for every error raised by the toolkit."""

    kind = "spi-error"


class InvalidArgumentError(SpiError, ValueError):
    """Inputs violate a documented precondition."""

    kind = "invalid-argument"


class SolverFailureError(SpiError):
    """A linear solve could not be completed reliably."""

    kind = "solver-failure"

    def __init__(self, message: str, condition_estimate: float | None = None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class NumericalFailureError(SpiError):
    """A network activation or loss became non-finite."""

    kind = "numerical-failure"

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class DegenerateBasisError(SpiError):
    """The scanning patterns carry no usable intensity information."""

    kind = "degenerate-basis"


class CheckpointError(SpiError):
    """A checkpoint or weight file is missing, truncated or malformed."""

    kind = "checkpoint"
