"""Kernel backend selection.

The compiled extension is preferred when importable; the NumPy implementation
is the fallback. Override with VBD_BACKEND=native|numpy. Thread count for the
compiled backend defaults to VBD_THREADS (0 = all cores); the CLI --threads
flag takes precedence.
"""

import os

from . import _numpy_core

_forced = os.environ.get("VBD_BACKEND", "").strip().lower()

if _forced == "numpy":
    _impl = _numpy_core
else:
    try:
        from . import _native as _impl
    except ImportError:
        if _forced == "native":
            raise
        _impl = _numpy_core


def backend_name() -> str:
    """Name of the kernel backend in use: 'native' or 'numpy'."""
    return _impl.NAME


def get_backend():
    return _impl


def default_threads() -> int:
    """Thread count from VBD_THREADS; 0 means use all cores."""
    try:
        return max(0, int(os.environ.get("VBD_THREADS", "0")))
    except ValueError:
        return 0
