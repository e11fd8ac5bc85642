"""Kernel backend selection.

The hot pooling kernels exist twice: a numba @njit build and a pure-numpy
build. ``MINIASV_BACKEND`` picks one explicitly ("numba" or "numpy");
unset, numba is used when importable. Both builds implement identical
semantics and are cross-checked in the test suite and benchmarked in
``benchmarks/bench_backends.py``.

Within one backend all computation is single-threaded and deterministic;
results across the two backends agree to roundoff (~1e-12 relative), not
bit-exactly, because summation orders differ.
"""

import os

from .errors import ConfigError

try:
    import numba  # noqa: F401

    _NUMBA_IMPORTABLE = True
except ImportError:
    _NUMBA_IMPORTABLE = False


def _resolve() -> str:
    choice = os.environ.get("MINIASV_BACKEND", "").strip().lower()
    if choice == "":
        return "numba" if _NUMBA_IMPORTABLE else "numpy"
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _NUMBA_IMPORTABLE:
            raise ConfigError("MINIASV_BACKEND=numba but numba is not importable")
        return "numba"
    raise ConfigError(f"MINIASV_BACKEND must be 'numba' or 'numpy', got {choice!r}")


_ACTIVE = _resolve()


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _ACTIVE


def numba_available() -> bool:
    return _NUMBA_IMPORTABLE
