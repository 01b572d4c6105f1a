"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``DDCOUPLING_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the pure-Python implementation is used.
"""
import logging
import os

logger = logging.getLogger(__name__)


def _load(pure: bool):
    if not pure:
        try:
            from . import _kernels as mod

            return mod, "compiled"
        except ImportError as exc:  # pragma: no cover - depends on build
            logger.warning("compiled kernels unavailable (%s); using pure Python", exc)
    from . import _kernels_py as mod

    return mod, "python"


kernels, BACKEND = _load(os.environ.get("DDCOUPLING_PURE_PYTHON", "") not in ("", "0"))


def get_kernels(name: str | None = None):
    """Return a kernel module by name ('compiled' or 'python'); default is the active one."""
    if name is None:
        return kernels
    if name == "python":
        from . import _kernels_py

        return _kernels_py
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
