"""Voxel kernel dispatch.

The compiled backend (``_ckernels``) is used when it was built; otherwise, or
when ``HOMCONC_PURE_PYTHON`` is set, the NumPy backend is used. Both produce
bit-identical results.
"""
import importlib
import os

from . import _pykernels

_NAMES = ("pairwise_sum", "moment_sum", "image_norms", "voxel_matvec", "rasterize_balls")


def _load_compiled():
    try:
        return importlib.import_module("homconc._ckernels")
    except ImportError:
        return None


_compiled = _load_compiled()

if _compiled is not None and not os.environ.get("HOMCONC_PURE_PYTHON"):
    _impl, BACKEND = _compiled, "cython"
else:
    _impl, BACKEND = _pykernels, "numpy"

pairwise_sum = _impl.pairwise_sum
moment_sum = _impl.moment_sum
image_norms = _impl.image_norms
voxel_matvec = _impl.voxel_matvec
rasterize_balls = _impl.rasterize_balls


def available_backends():
    return ["numpy"] + (["cython"] if _compiled is not None else [])


def get_backend(name):
    """Return the kernel module for ``name`` ("numpy" or "cython")."""
    if name == "numpy":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels were not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def voxel_mean(x):
    """Mean over all entries using the fixed-order tree sum."""
    x = x.ravel()
    return pairwise_sum(x) / x.shape[0]
