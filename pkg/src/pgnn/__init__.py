"""Physics-guided neural networks for learning nonlinear ODE right-hand sides."""

from ._backend import NAME as BACKEND
from .systems import SYSTEM_IDS, TERMS, get_system

__all__ = ["BACKEND", "SYSTEM_IDS", "TERMS", "get_system"]
__version__ = "0.1.0"
