"""Exception types shared across the package."""


class LatentInferError(Exception):
    """Base class for errors raised by latentinfer."""


class ValidationError(LatentInferError, ValueError):
    """Invalid parameters or inputs (bad ranges, malformed files, ...)."""


class NumericalError(LatentInferError, RuntimeError):
    """A numerical stage failed (non-convergence, degenerate spectrum, ...)."""
