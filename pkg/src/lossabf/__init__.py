"""Loss-based approximate Bayesian forecasting for state space models."""

__version__ = "0.1.0"

from .distributions import RngStream

__all__ = ["RngStream", "__version__"]
