"""Latent universal differential equations: autodiff, SDE solvers and variational training."""
from .errors import UdekitError

__version__ = "0.1.0"
__all__ = ["UdekitError", "__version__"]
