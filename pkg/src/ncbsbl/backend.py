"""Kernel backend selection.

The solver's hot loops exist twice: numba-jitted (``_kernels_numba``) and
vectorized numpy (``_kernels_numpy``). The environment variable
``NCBSBL_BACKEND`` picks the initial backend:

* ``auto`` (default) — numba when importable, else numpy;
* ``numba`` — require numba, fail loudly if unavailable;
* ``numpy`` — force the pure-numpy path.

``use()`` switches at runtime, which the backend benchmark and the
cross-backend tests rely on.
"""

from __future__ import annotations

import os

from . import _kernels_numpy

_BACKENDS = {"numpy": _kernels_numpy}
_NUMBA_ERROR = None
try:
    from . import _kernels_numba

    _BACKENDS["numba"] = _kernels_numba
except ImportError as exc:  # pragma: no cover - depends on environment
    _NUMBA_ERROR = exc


def available() -> tuple:
    return tuple(sorted(_BACKENDS))


def _resolve(choice: str) -> str:
    choice = choice.lower()
    if choice == "auto":
        return "numba" if "numba" in _BACKENDS else "numpy"
    if choice not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {choice!r}; expected auto, numba or numpy")
    if choice not in _BACKENDS:
        raise RuntimeError(f"backend {choice!r} unavailable: {_NUMBA_ERROR}")
    return choice


_active = _resolve(os.environ.get("NCBSBL_BACKEND", "auto"))


def use(choice: str) -> str:
    """Switch the active backend; returns the resolved name."""
    global _active
    _active = _resolve(choice)
    return _active


def active() -> str:
    return _active


def kernels():
    """Module providing ``scan_blocks`` and ``rank2_refresh``."""
    return _BACKENDS[_active]
