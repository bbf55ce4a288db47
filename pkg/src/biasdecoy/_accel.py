"""Numba on/off switch.

Set ``BIASDECOY_DISABLE_NUMBA=1`` (or numba's own ``NUMBA_DISABLE_JIT=1``)
before import to run every kernel as plain Python/numpy. The flag is read
once, at import time.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() not in _FALSY


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = (
    HAVE_NUMBA
    and not _env_flag("BIASDECOY_DISABLE_NUMBA")
    and not _env_flag("NUMBA_DISABLE_JIT")
)


def jit(fn):
    """``numba.njit(cache=True)`` when acceleration is on, identity otherwise."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def py_func(fn):
    """The undecorated Python function behind a possibly-jitted kernel."""
    return getattr(fn, "py_func", fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
