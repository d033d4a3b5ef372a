"""Exception types shared across the package.

The CLI maps these onto exit codes: config/usage problems -> 1,
numeric failures -> 2, I/O failures -> 3.
"""


class CampError(Exception):
    """Base class for all package errors."""


class ConfigError(CampError, ValueError):
    """Invalid experiment configuration or CLI usage."""


class ShapeError(CampError, ValueError):
    """Tensor shapes inconsistent with the network or operation."""


class DataFormatError(CampError, ValueError):
    """Malformed dataset file (bad magic, dim mismatch, non-numeric CSV)."""


class NumericError(CampError, FloatingPointError):
    """Non-finite values or other numeric breakdown."""


class DegenerateCurvatureError(NumericError):
    """Power iteration hit a (near-)zero Hessian-vector product."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"near-zero curvature at power iteration {iteration}")


class GradientStateError(CampError, ValueError):
    """backward() called without a preceding forward() on the same network."""


class PipelineStageError(CampError):
    """A pipeline stage failed; carries the stage name, chains the cause."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
        self.__cause__ = cause
