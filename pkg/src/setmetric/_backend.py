"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; otherwise the
pure-Python fallback is used. ``SETMETRIC_KERNEL=python`` or
``SETMETRIC_KERNEL=compiled`` forces the choice at import time, and
individual solves can override it via their ``backend`` argument.
"""

from __future__ import annotations

import os

from . import _kernel_py
from .errors import InvalidConfig

try:
    from . import _kernel as _kernel_c
except ImportError:
    _kernel_c = None


def _select_default():
    forced = os.environ.get("SETMETRIC_KERNEL", "").strip().lower()
    if forced == "python":
        return _kernel_py
    if forced == "compiled":
        if _kernel_c is None:
            raise ImportError(
                "SETMETRIC_KERNEL=compiled but the extension is not built; "
                "run `pip install -e . --no-build-isolation`"
            )
        return _kernel_c
    if forced:
        raise ImportError(f"unknown SETMETRIC_KERNEL value: {forced!r}")
    return _kernel_c if _kernel_c is not None else _kernel_py


_default = _select_default()


def default_backend() -> str:
    """Name of the backend used when none is requested explicitly."""
    return _default.BACKEND_NAME


def available_backends() -> tuple:
    """Backend names importable in this environment."""
    names = ["python"]
    if _kernel_c is not None:
        names.append("compiled")
    return tuple(names)


def get_kernel(backend: str | None = None):
    """Resolve a backend name (or None for the default) to a kernel module."""
    if backend is None:
        return _default
    if backend == "python":
        return _kernel_py
    if backend == "compiled":
        if _kernel_c is None:
            raise InvalidConfig("compiled backend requested but not built")
        return _kernel_c
    raise InvalidConfig(f"unknown backend {backend!r}; choose 'python' or 'compiled'")
