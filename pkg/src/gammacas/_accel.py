"""Numba switch.

Hot kernels are written twice: an ``@njit`` loop version and a plain
numpy/Python version. Setting ``GAMMACAS_DISABLE_NUMBA=1`` (or running
without numba installed) selects the numpy path at import time.
"""

import os

_FLAG = os.environ.get("GAMMACAS_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged.

    The returned object is always callable; tests use it to reach the
    compiled variant even when the numpy path is the active one.
    """
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)
