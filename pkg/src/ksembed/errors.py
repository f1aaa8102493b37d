"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(ValueError):
    """The input carries no usable mass (e.g. an all-zero dataset)."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite or zero-mass intermediate.

    ``stage`` names the step that failed so the caller can tell a sketch
    underflow from a solver breakdown.
    """

    def __init__(self, message: str, stage: str = ""):
        super().__init__(f"[{stage}] {message}" if stage else message)
        self.stage = stage


class ResourceLimitError(MemoryError):
    """An oracle-scale routine was asked to materialize something too large."""
