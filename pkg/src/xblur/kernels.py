"""Backend selection for the loop kernels.

The compiled extension ``xblur._ckernels`` is used when it was built;
otherwise the numpy implementations in ``xblur._pykernels`` are used. Set
``XBLUR_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("XBLUR_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

NEIGHBOR_OFFSETS = _pykernels.NEIGHBOR_OFFSETS


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python') or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def convolve_direct(image, kernel):
    return _impl.convolve_direct(np.ascontiguousarray(image, dtype=np.float64),
                                 np.ascontiguousarray(kernel, dtype=np.float64))


def marching_squares_segments(image, level):
    return _impl.marching_squares_segments(np.ascontiguousarray(image, dtype=np.float64),
                                           float(level))


def neighbor_prior(t, weights, eps, power=1.2):
    return _impl.neighbor_prior(np.ascontiguousarray(t, dtype=np.float64),
                                np.ascontiguousarray(weights, dtype=np.float64),
                                float(eps), float(power))
