"""Numba switch.

Set ``RELAYGP_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels.  When numba is missing the numpy path is used silently.
"""

import os

_FLAG = os.environ.get("RELAYGP_DISABLE_NUMBA", "").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` in nopython mode, or return it unchanged without numba."""
    if not HAVE_NUMBA:
        return func
    return _numba.njit(cache=True, nogil=True, fastmath=False)(func)
