"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy implementation in ``_kernels_py`` is used. Setting
``FLOWRVAE_KERNELS=python`` before import forces the fallback.
"""
import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_active = _kernels_py
if _compiled is not None and os.environ.get("FLOWRVAE_KERNELS", "").lower() != "python":
    _active = _compiled


def kernels():
    return _active


def backend_name() -> str:
    return _active.BACKEND


def available_backends() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def use_backend(name: str):
    """Switch the active kernel set at runtime ("cython" or "python")."""
    global _active
    if name == "python":
        _active = _kernels_py
    elif name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available; rebuild the package")
        _active = _compiled
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    log.debug("kernel backend set to %s", name)
