"""Backend selection for the assembly kernels.

The compiled extension is used when importable; set ``MG_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

import numpy as np

from mgalerkin import _pykernels

if os.environ.get("MG_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from mgalerkin import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"


def scatter_add(cell_dofs, elem, ntotal):
    return _impl.scatter_add(
        np.ascontiguousarray(cell_dofs, dtype=np.int64),
        np.ascontiguousarray(elem, dtype=float),
        int(ntotal),
    )


def duality_elements(grad, dphi, wq, p):
    return _impl.duality_elements(
        np.ascontiguousarray(grad, dtype=float),
        np.ascontiguousarray(dphi, dtype=float),
        np.ascontiguousarray(wq, dtype=float),
        float(p),
    )


def convection_local(w, dw, phi, dphi, wq):
    return _impl.convection_local(
        np.ascontiguousarray(w, dtype=float),
        np.ascontiguousarray(dw, dtype=float),
        np.ascontiguousarray(phi, dtype=float),
        np.ascontiguousarray(dphi, dtype=float),
        np.ascontiguousarray(wq, dtype=float),
    )
