"""Numba switch.

Hot kernels are compiled with numba when it is importable and the
``SIMP_DISABLE_JIT`` environment variable is unset (or "0"). Otherwise every
kernel dispatches to its vectorized numpy twin.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _jit_requested() -> bool:
    return os.environ.get("SIMP_DISABLE_JIT", "").strip().lower() in _FALSY


try:
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _jit_requested()


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched without numba."""
    if not HAVE_NUMBA:
        return func
    return _numba.njit(cache=True, nogil=True)(func)
