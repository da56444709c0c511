"""Numba dispatch for the hot kernels.

Every kernel in the package exists twice with identical semantics: a plain
numpy version and an @njit-compiled version. Which one runs by default is
decided here, once, at import time:

  * numba importable and TIKRECO_NO_NUMBA unset  -> compiled kernels
  * TIKRECO_NO_NUMBA=1 (or numba missing)        -> pure numpy fallback

Callers can still force a specific backend per call (the benchmark does),
so both paths stay reachable in one process.
"""
import os

_FALSEY = {"", "0", "false", "no", "off"}


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() not in _FALSEY


NUMBA_DISABLED = _env_flag("TIKRECO_NO_NUMBA")

try:
    if NUMBA_DISABLED:
        raise ImportError("numba disabled via TIKRECO_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        # signature-compatible no-op decorator
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


def default_backend():
    """Name of the backend kernels run on unless a caller overrides it."""
    return "numba" if HAVE_NUMBA else "numpy"


def resolve_backend(backend):
    """Map a requested backend ('auto', 'numba', 'numpy' or None) to a real one.

    Asking for 'numba' when it is unavailable is an error rather than a
    silent fallback; 'auto'/None pick the import-time default.
    """
    if backend in (None, "auto"):
        return default_backend()
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError(
            "numba backend requested but numba is unavailable "
            "(not installed, or disabled via TIKRECO_NO_NUMBA)"
        )
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend
