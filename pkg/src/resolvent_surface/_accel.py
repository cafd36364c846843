"""Selects between numba-compiled kernels and the plain numpy path.

Set ``RESOLVENT_SURFACE_NUMBA=0`` in the environment before import to run every
kernel as ordinary Python/numpy code.
"""
import os

_FLAG = os.environ.get("RESOLVENT_SURFACE_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_ENABLED = numba is not None and _FLAG not in ("0", "false", "no", "off")

JIT_OPTIONS = {"nogil": True, "cache": True}


def njit(func):
    """Compile ``func`` with numba when enabled, else return it unchanged."""
    if NUMBA_ENABLED:
        return numba.njit(**JIT_OPTIONS)(func)
    return func
