"""Backend selection for the hot loops.

``RANKHC_BACKEND=numba`` (default when numba imports) or ``RANKHC_BACKEND=numpy``.
Both backends consume the same pre-drawn random numbers and return identical
arrays, so the choice never changes a result, only its speed.
"""

import os

from . import _numpy

_BACKENDS = {"numpy": _numpy}

try:  # pragma: no cover - depends on the environment
    from . import _numba

    _BACKENDS["numba"] = _numba
except ImportError:  # pragma: no cover
    _numba = None


def available():
    return sorted(_BACKENDS)


def get(name=None):
    name = name or os.environ.get("RANKHC_BACKEND", "").strip().lower() or None
    if name is None:
        return _BACKENDS.get("numba", _numpy)
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available()}")
    return _BACKENDS[name]
