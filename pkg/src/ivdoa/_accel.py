"""Numba switch.

Set ``IVDOA_DISABLE_NUMBA=1`` before import to run every kernel through its
pure-numpy path. Numba missing from the environment has the same effect.
"""
import os

_FLAG = os.environ.get("IVDOA_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


def njit(fn=None, **kwargs):
    """``numba.njit`` with cache on; identity decorator when numba is absent."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if not HAVE_NUMBA:
            return f
        return numba.njit(**kwargs)(f)

    if fn is not None:
        return wrap(fn)
    return wrap


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
