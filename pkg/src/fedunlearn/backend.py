"""Kernel backend selection.

The hot numeric kernels (model forward/backward/curvature passes) are written
once in a numba-compatible numpy subset and compiled with ``@njit`` when the
numba backend is active.  Set ``FEDUNLEARN_BACKEND=numpy`` to force the plain
interpreted path, ``FEDUNLEARN_BACKEND=numba`` to require compilation (raises
if numba is missing), or leave unset / ``auto`` to use numba when available.
"""

import os

_FLAG = os.environ.get("FEDUNLEARN_BACKEND", "auto").strip().lower()
if _FLAG not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"FEDUNLEARN_BACKEND must be one of auto|numba|numpy, got {_FLAG!r}"
    )

if _FLAG == "numpy":
    _numba = None
else:
    try:
        import numba as _numba
    except ImportError:
        if _FLAG == "numba":
            raise
        _numba = None

USE_NUMBA = _numba is not None
BACKEND_NAME = "numba" if USE_NUMBA else "numpy"


def jit(func):
    """Compile ``func`` with numba when the numba backend is active.

    Identity function on the numpy backend, so the same source serves both
    paths.  fastmath stays off: the convergence-bound checks need IEEE
    semantics, and reassociation would break cross-backend agreement.
    """
    if USE_NUMBA:
        return _numba.njit(cache=True, fastmath=False)(func)
    return func
