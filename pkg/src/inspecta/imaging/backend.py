"""Kernel backend selection.

The compiled extension (``inspecta.imaging._kernels``) is preferred when
importable; otherwise the numpy/scipy fallback is used. ``INSPECTA_KERNELS``
forces a choice: ``compiled`` (error if unavailable), ``python``, or ``auto``.
Both backends are bit-identical by construction; see ``_common``.
"""

from __future__ import annotations

import logging
import os

log = logging.getLogger(__name__)


def _load():
    choice = os.environ.get("INSPECTA_KERNELS", "auto").strip().lower() or "auto"
    if choice not in ("auto", "compiled", "python"):
        raise RuntimeError(f"INSPECTA_KERNELS must be auto, compiled, or python; got {choice!r}")
    if choice in ("auto", "compiled"):
        try:
            from . import _kernels as compiled

            return compiled, "compiled"
        except ImportError as exc:
            if choice == "compiled":
                raise RuntimeError(f"compiled kernels requested but unavailable: {exc}") from exc
            log.debug("compiled kernels unavailable, using python backend: %s", exc)
    from . import _kernels_py

    return _kernels_py, "python"


_KERNELS, _ACTIVE = _load()


def get_kernels():
    """The active kernel module (compiled extension or python fallback)."""
    return _KERNELS


def active_backend() -> str:
    """Name of the active backend: 'compiled' or 'python'."""
    return _ACTIVE
