"""Numba shim and runtime switches.

``HWMAP_DISABLE_JIT=1`` selects the pure-numpy kernels even when numba is
importable. ``HWMAP_THREADS`` caps FFT worker threads (default 1).
"""
import os

_FALSY = ("", "0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

JIT_DISABLED = os.environ.get("HWMAP_DISABLE_JIT", "0").strip().lower() not in _FALSY
HAVE_NUMBA = numba is not None
USE_JIT = HAVE_NUMBA and not JIT_DISABLED


def _threads():
    raw = os.environ.get("HWMAP_THREADS", "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(1, value)


THREADS = _threads()


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if numba is not None:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(func):
        return func

    return wrapper
