"""Spectral discretization of the fractional Laplacian on uniform grids."""
from .specfun import DomainError

__version__ = "0.1.0"

__all__ = ["DomainError", "__version__"]
