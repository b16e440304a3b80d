"""Backend selection for the hot numeric loops.

Every kernel that matters for runtime exists twice: a numba ``@njit`` loop
and a vectorised numpy/scipy fallback. Set ``IFDENSITY_NO_NUMBA=1`` (or run
without numba installed) to force the fallback path.
"""

import os

_disabled = os.environ.get("IFDENSITY_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    import numba

    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"
    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


prange = numba.prange if HAS_NUMBA else range


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def set_backend(name):
    """Switch dispatch at runtime (used by the benchmark and backend tests)."""
    global USE_NUMBA
    if name == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba is not available")
        USE_NUMBA = True
    elif name == "numpy":
        USE_NUMBA = False
    else:
        raise ValueError(f"unknown backend {name!r}")
