"""Kernel backend selection.

The hot kernels (modal basis evaluation at point sets) exist twice: a pure
numpy reference in ``_kernels`` and a numba-compiled twin in
``_kernels_numba``.  Selection is controlled by the environment variable

    PATCHEXT_BACKEND = auto | numba | numpy      (default: auto)

``auto`` uses numba when it imports, numpy otherwise.  ``numba`` fails hard
if numba is unavailable.  ``benchmarks/bench_basis.py`` compares the two.
"""

import os

from . import _kernels as _np_kernels

_choice = os.environ.get("PATCHEXT_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"PATCHEXT_BACKEND must be auto|numba|numpy, got {_choice!r}")

if _choice == "numpy":
    _impl = _np_kernels
    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _impl
        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        _impl = _np_kernels
        BACKEND = "numpy"

import numpy as _np


def _as_pts(pts, dim):
    a = _np.ascontiguousarray(pts, dtype=_np.float64)
    if a.ndim != 2 or a.shape[1] != dim:
        raise ValueError(f"expected points of shape (n, {dim})")
    return a


def tet_onb_raw(pts, p):
    return _impl.tet_onb_raw(_as_pts(pts, 3), int(p))


def tri_onb_raw(pts, p):
    return _impl.tri_onb_raw(_as_pts(pts, 2), int(p))


def tet_homog_raw(pts, p):
    return _impl.tet_homog_raw(_as_pts(pts, 3), int(p))


tet_mode_count = _np_kernels.tet_mode_count
tri_mode_count = _np_kernels.tri_mode_count
homog_mode_count = _np_kernels.homog_mode_count
