"""Numerical laboratory for non-local symmetric forms on weighted sequence spaces."""

from .errors import ConfigError, NlsqError, NumericalError, ResourceError

__version__ = "0.1.0"

__all__ = ["ConfigError", "NlsqError", "NumericalError", "ResourceError", "__version__"]
