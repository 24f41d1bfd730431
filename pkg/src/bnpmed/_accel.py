"""Selection between numba-compiled kernels and their pure-numpy twins.

Set ``BNPMED_DISABLE_NUMBA=1`` before import to force the numpy versions
(useful on platforms without numba and for cross-checking the two paths).
"""

import os

_FLAG = "BNPMED_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    if not _numba_requested():
        raise ImportError
    import numba  # noqa: F401
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    _njit = None


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if _njit is None:
        return fn
    return _njit(cache=True, nogil=True)(fn)


def backend_name() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
