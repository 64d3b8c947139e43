"""Kernel backend selection.

Hot loops are written twice: once as a numba ``@njit`` kernel and once as a
pure-numpy fallback. Set ``CANOPY_HEIGHT_NUMBA=0`` before import to force the
numpy path (also used automatically when numba is not importable).
"""

import os

_flag = os.environ.get("CANOPY_HEIGHT_NUMBA", "1").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op when numba is missing."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
