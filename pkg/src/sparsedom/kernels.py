"""Kernel dispatch: compiled module when available, numpy otherwise.

Set ``SPARSEDOM_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _pykernels

_FORCE_PY = os.environ.get("SPARSEDOM_PURE_PYTHON", "").lower() in ("1", "true", "yes")

_impl = _pykernels
BACKEND = "python"
if not _FORCE_PY:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels

cube_sums = _impl.cube_sums
ancestor_table = _impl.ancestor_table
ancestor_max = _impl.ancestor_max
ancestor_scan = _impl.ancestor_scan
maximal_cubes = _impl.maximal_cubes
weak_sup = _impl.weak_sup
level_offsets = _pykernels.level_offsets


def available_backends():
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:  # pragma: no cover
        pass
    return out
