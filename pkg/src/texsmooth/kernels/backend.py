"""Kernel backend selection.

The hot convolution kernels have two implementations: numba @njit loops
(default) and a pure-numpy im2col path. Selection order: set_backend()
override, then the TEXSMOOTH_BACKEND env var ("numba", "numpy", or "auto"),
then auto-detection of a working numba import.
"""

from __future__ import annotations

import os

ENV_VAR = "TEXSMOOTH_BACKEND"

_override: str | None = None
_numba_ok: bool | None = None


def _numba_available() -> bool:
    global _numba_ok
    if _numba_ok is None:
        try:
            import numba  # noqa: F401

            _numba_ok = True
        except ImportError:
            _numba_ok = False
    return _numba_ok


def set_backend(name: str | None) -> None:
    """Force a backend ("numba"/"numpy"), or None to fall back to the env var."""
    global _override
    if name is not None and name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    _override = name


def active_backend() -> str:
    name = _override or os.environ.get(ENV_VAR, "auto").lower()
    if name == "auto":
        return "numba" if _numba_available() else "numpy"
    if name not in ("numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be numba/numpy/auto, got {name!r}")
    if name == "numba" and not _numba_available():
        raise RuntimeError("TEXSMOOTH_BACKEND=numba but numba is not importable")
    return name
