"""Backend selection for the convolution kernels.

The compiled Cython module is used when it was built; otherwise the numpy
implementation in ``_kernels_py`` is used. Set ``AUSTKIT_PURE_PYTHON=1`` to
force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("AUSTKIT_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def use_backend(name):
    """Switch kernels at runtime ("cython" or "python"); returns the previous name."""
    global _impl, BACKEND
    prev = BACKEND
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _impl = _compiled
    elif name == "python":
        _impl = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return prev


def compiled_available():
    return _compiled is not None


def conv_forward(xp, wmat, kh, kw, stride):
    return _impl.conv_forward(np.ascontiguousarray(xp), np.ascontiguousarray(wmat), kh, kw, stride)


def conv_backward(xp, wmat, gmat, kh, kw, stride, need_dx=True, need_dw=True):
    return _impl.conv_backward(np.ascontiguousarray(xp), np.ascontiguousarray(wmat),
                               np.ascontiguousarray(gmat), kh, kw, stride, need_dx, need_dw)
