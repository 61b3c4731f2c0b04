"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy implementation in ``_kernels_py`` is used. Set ``VLGRASP_PURE_PYTHON=1``
to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("VLGRASP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

SPHERE, BOX, CYLINDER = _kernels_py.SPHERE, _kernels_py.BOX, _kernels_py.CYLINDER

raycast = _impl.raycast
gripper_counts = _impl.gripper_counts
