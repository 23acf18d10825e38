"""Inharmonious region localization with style voting, on a small numpy autodiff core."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
