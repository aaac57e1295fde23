"""Kernel dispatch: compiled extension when available, numpy fallback otherwise.

Set FUSEDET_PURE_PYTHON=1 to force the fallback (useful for the parity
tests and the benchmark).
"""

from __future__ import annotations

import os

if os.environ.get("FUSEDET_PURE_PYTHON") == "1":
    from fusedet import _kernels_py as _impl
else:
    try:
        from fusedet import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        from fusedet import _kernels_py as _impl  # type: ignore[no-redef]

BACKEND: str = _impl.BACKEND

box_iou_matrix = _impl.box_iou_matrix
greedy_assign = _impl.greedy_assign
rle_decode = _impl.rle_decode
rle_encode = _impl.rle_encode
rle_extent = _impl.rle_extent
