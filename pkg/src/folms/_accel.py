"""Optional numba acceleration.

Hot loops are written once as plain Python over numpy arrays and wrapped
with :func:`jit`.  When numba is importable and ``FOLMS_DISABLE_NUMBA`` is
unset (or ``0``), they are compiled with ``numba.njit``; otherwise the same
functions run interpreted, which is slow but numerically equivalent.
"""
import os

_DISABLE = os.environ.get("FOLMS_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLE:
        raise ImportError
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False


def jit(func):
    """Compile ``func`` with ``numba.njit(cache=True)`` when available."""
    if HAS_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def backend() -> str:
    return "numba" if HAS_NUMBA else "python"
