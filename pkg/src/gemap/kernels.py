"""Kernel backend selection: compiled extension when available, numpy otherwise.

GEM_BACKEND=python|cython forces a backend (cython errors out if the
extension is not built); the default "auto" prefers the compiled kernels.
Both backends are bit-identical, so the choice only affects speed.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels
except ImportError:
    _kernels = None

BACKEND_NAMES = ("python", "cython")


def get_backend(name: str | None = None):
    """Return the kernel module for `name` ("python", "cython", "auto"/None)."""
    if name in (None, "auto"):
        return _kernels if _kernels is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _kernels is None:
            raise RuntimeError("compiled kernels are not available; rebuild or set GEM_BACKEND=python")
        return _kernels
    raise ValueError(f"unknown backend {name!r}; expected one of {BACKEND_NAMES + ('auto',)}")


def available_backends() -> tuple[str, ...]:
    return BACKEND_NAMES if _kernels is not None else ("python",)


_active = get_backend(os.environ.get("GEM_BACKEND", "auto"))


def active():
    return _active


def active_name() -> str:
    return _active.BACKEND
