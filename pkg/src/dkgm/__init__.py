"""Kernel-density generation with iterative stochastic-approximation debiasing."""

from .errors import ConfigError, DomainError, NumericError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DomainError", "NumericError", "__version__"]
