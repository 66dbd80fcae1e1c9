"""Backend selection for the numeric kernels.

Kernels ship in two flavours: an explicit-loop version compiled with numba
and a vectorised pure-numpy version. The numba path is used when numba is
importable and ``CTBKIT_DISABLE_NUMBA`` is not set to a truthy value.
"""
import os
from contextlib import contextmanager

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

ENV_FLAG = "CTBKIT_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


_use_numba = HAVE_NUMBA and not _env_disabled()


def njit(fn):
    """Compile ``fn`` in nopython mode if numba is present, else return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def numba_enabled():
    return _use_numba


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels for the current process."""
    global _use_numba
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    _use_numba = name == "numba"


def current_backend():
    return "numba" if _use_numba else "numpy"


@contextmanager
def backend(name):
    previous = current_backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)
