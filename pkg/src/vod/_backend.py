"""Kernel backend selection.

The compiled extension ``vod._kernels`` is used when importable; otherwise the
numpy implementations in ``vod._kernels_py`` are used. Setting the environment
variable ``VOD_PURE_PYTHON=1`` forces the numpy path.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py


def _load() -> ModuleType:
    if os.environ.get("VOD_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return _kernels_py
    return _kernels


kernels: ModuleType = _load()


def compiled_kernels() -> ModuleType | None:
    """The compiled module, or None when it was not built."""
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return None
    return _kernels


def backend_name() -> str:
    return kernels.NAME
