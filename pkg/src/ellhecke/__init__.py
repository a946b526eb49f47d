"""Hecke operators for rank-two bundles on an elliptic curve: special functions,
modification geometry, the integral kernel and its Nystrom discretization."""

from .elliptic import Curve
from .operator import CODE_VERSION

__version__ = "0.1.0"

__all__ = ["Curve", "CODE_VERSION", "__version__"]
