"""Kernel backend selection.

The hot kernels exist twice: a numba ``@njit`` implementation
(:mod:`adev._kernels_numba`) and a pure-numpy one
(:mod:`adev._kernels_numpy`).  The active implementation is chosen once,
lazily, from the ``ADEV_BACKEND`` environment variable:

* ``ADEV_BACKEND=numba`` — require numba, fail loudly if unavailable;
* ``ADEV_BACKEND=numpy`` — force the pure-numpy path;
* unset — numba when it imports, numpy otherwise.

``ADEV_THREADS`` (or the CLI's ``--threads``) caps the numba worker
count; the numpy path is single-threaded apart from whatever the BLAS
does internally.  ``benchmarks/bench_backends.py`` compares the two.
"""

from __future__ import annotations

import os
import warnings

from .errors import ArgumentError

_ACTIVE = None  # module object once resolved
_ACTIVE_NAME = None


def _load(name):
    if name == "numpy":
        from . import _kernels_numpy

        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba

        return _kernels_numba
    raise ArgumentError(f"unknown backend {name!r}: expected 'numba' or 'numpy'")


def set_backend(name):
    """Force a backend (mostly for tests and benchmarks). Returns its name."""
    global _ACTIVE, _ACTIVE_NAME
    _ACTIVE = _load(name)
    _ACTIVE_NAME = name
    return _ACTIVE_NAME


def kernels():
    """Return the active kernel module, resolving it on first use."""
    global _ACTIVE, _ACTIVE_NAME
    if _ACTIVE is not None:
        return _ACTIVE
    requested = os.environ.get("ADEV_BACKEND", "").strip().lower()
    if requested:
        set_backend(requested)
        return _ACTIVE
    try:
        set_backend("numba")
    except ImportError:  # pragma: no cover - depends on the environment
        warnings.warn("numba unavailable; falling back to pure-numpy kernels")
        set_backend("numpy")
    return _ACTIVE


def backend_name():
    kernels()
    return _ACTIVE_NAME


def set_thread_cap(n=None):
    """Cap numba's worker threads.

    ``n=None`` reads ``ADEV_THREADS``; an unset/empty variable leaves the
    default alone.  Has no effect on the numpy backend.
    """
    if n is None:
        raw = os.environ.get("ADEV_THREADS", "").strip()
        if not raw:
            return None
        try:
            n = int(raw)
        except ValueError as exc:
            raise ArgumentError(f"ADEV_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ArgumentError(f"thread cap must be >= 1, got {n}")
    try:
        import numba
    except ImportError:  # pragma: no cover
        return None
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n
