"""Backend selection for the rod energy/gradient kernel.

The compiled extension is used when importable; set ``CATHROD_PURE_PYTHON=1``
to force the NumPy implementation.
"""

from __future__ import annotations

import os

from . import _pykernels
from ._pykernels import DegenerateGeometryError

BACKEND = "python"
_impl = _pykernels.rod_energy_gradient

if not os.environ.get("CATHROD_PURE_PYTHON"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        _ckernels = None
    if _ckernels is not None:
        BACKEND = "cython"


def _compiled(points, quats, rest, ks, kdiag, kp, uhat, kq=0.0, qbase=None):
    energies, gp, gq, status = _ckernels.rod_energy_gradient(
        points, quats, rest, float(ks), kdiag, float(kp), uhat, float(kq), qbase)
    if status >= 0:
        raise DegenerateGeometryError(f"coincident points at element {status}")
    return energies, gp, gq


if BACKEND == "cython":
    _impl = _compiled


def rod_energy_gradient(points, quats, rest, ks, kdiag, kp, uhat, kq=0.0, qbase=None):
    """Dispatch to the active backend; see ``_pykernels.rod_energy_gradient``."""
    return _impl(points, quats, rest, ks, kdiag, kp, uhat, kq, qbase)


def available_backends() -> dict:
    out = {"python": _pykernels.rod_energy_gradient}
    if BACKEND == "cython" or _has_compiled():
        out["cython"] = _compiled
    return out


def _has_compiled() -> bool:
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    globals()["_ckernels"] = _ckernels
    return True
