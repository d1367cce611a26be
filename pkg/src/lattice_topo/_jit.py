"""
Optional numba acceleration.

Hot kernels are written in a numba-compatible subset of Python and decorated
with :func:`njit` from this module.  Set ``LATTICE_TOPO_DISABLE_NUMBA=1`` (or
run without numba installed) to get plain Python/numpy fallbacks, which is
handy for debugging and is what the benchmark compares against.
"""

import os

_DISABLED = os.environ.get("LATTICE_TOPO_DISABLE_NUMBA", "0").strip().lower() in (
    "1",
    "true",
    "yes",
)

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:
    _numba = None
    HAVE_NUMBA = False


def njit(func=None, **kwargs):
    """``numba.njit`` when available and enabled, identity otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        if func is not None:
            return _numba.njit(**kwargs)(func)
        return _numba.njit(**kwargs)
    if func is not None:
        return func

    def wrapper(f):
        return f

    return wrapper


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
