"""Recovering latent positions of small-world random graphs."""
from .errors import LatentInferError, NumericalError, ValidationError

__version__ = "0.1.0"

__all__ = ["LatentInferError", "NumericalError", "ValidationError", "__version__"]
