"""Compute-backend selection.

Hot kernels exist twice: a numba @njit build and a pure-numpy build with
identical semantics. FFFNET_BACKEND picks one:

    auto   (default) use numba when it imports and compiles, else numpy
    numba  require numba, fail hard if unavailable
    numpy  force the pure-numpy fallback

Resolution is cached per process; tests can call reset() after changing the
environment.
"""

import os

from .errors import ConfigError

_CHOICES = ("auto", "numba", "numpy")
_cached = None

try:
    import numba  # noqa: F401
    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False


def requested_backend():
    """The backend named by FFFNET_BACKEND, defaulting to auto."""
    name = os.environ.get("FFFNET_BACKEND", "auto").strip().lower()
    if name not in _CHOICES:
        raise ConfigError(
            f"FFFNET_BACKEND must be one of {_CHOICES}, got {name!r}")
    return name


def resolve(name=None):
    """Map a requested backend name to the concrete one ('numba' or 'numpy')."""
    if name is None:
        name = requested_backend()
    if name not in _CHOICES:
        raise ConfigError(f"unknown backend {name!r}, expected one of {_CHOICES}")
    if name == "numpy":
        return "numpy"
    if name == "numba":
        if not NUMBA_AVAILABLE:
            raise ConfigError("backend 'numba' requested but numba is not importable")
        return "numba"
    return "numba" if NUMBA_AVAILABLE else "numpy"


def default_backend():
    """Process-wide resolved default (cached)."""
    global _cached
    if _cached is None:
        _cached = resolve()
    return _cached


def reset():
    global _cached
    _cached = None
