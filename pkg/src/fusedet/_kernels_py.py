"""Pure-numpy implementations of the hot kernels.

Drop-in fallback for the compiled extension; both expose the same
functions with identical semantics (see fusedet.kernels).
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of corner-form boxes, shape (N, 4) x (M, 4) -> (N, M).

    Degenerate boxes (zero area) score 0 against everything.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    iw = np.where(iw > 0.0, iw, 0.0)
    ih = np.where(ih > 0.0, ih, 0.0)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def greedy_assign(ious: np.ndarray, thr: float) -> np.ndarray:
    """Row-greedy assignment on an IoU matrix.

    Rows must already be in priority (score-descending) order. Each row
    takes the still-unmatched column with the highest IoU >= thr; ties on
    IoU keep the lowest column index. Returns the matched column per row,
    -1 for unmatched.
    """
    ious = np.asarray(ious, dtype=np.float64)
    n, m = ious.shape
    assigned = np.full(n, -1, dtype=np.int64)
    taken = np.zeros(m, dtype=bool)
    for i in range(n):
        best = -1
        best_v = -1.0
        row = ious[i]
        for j in range(m):
            if taken[j]:
                continue
            v = row[j]
            if v >= thr and v > best_v:
                best = j
                best_v = v
        if best >= 0:
            assigned[i] = best
            taken[best] = True
    return assigned


def rle_decode(counts: np.ndarray, height: int, width: int) -> np.ndarray:
    """Column-major RLE (counts start with background) -> bool grid (h, w)."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total != height * width:
        raise ValueError(f"RLE counts sum to {total}, expected {height * width}")
    values = np.arange(len(counts), dtype=np.int64) % 2
    flat = np.repeat(values, counts).astype(bool)
    return flat.reshape((height, width), order="F")


def rle_encode(mask: np.ndarray) -> np.ndarray:
    """Bool grid (h, w) -> column-major RLE counts starting with background."""
    mask = np.asarray(mask)
    flat = mask.ravel(order="F").astype(np.int8)
    if flat.size == 0:
        return np.zeros(0, dtype=np.int64)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds)
    if flat[0] != 0:
        counts = np.concatenate(([0], counts))
    return counts.astype(np.int64)


def rle_extent(counts: np.ndarray, height: int, width: int) -> tuple[int, int, int, int] | None:
    """Tight foreground extent of a column-major RLE.

    Returns inclusive (min_row, min_col, max_row, max_col), or None for an
    all-background mask. Works directly on run boundaries without decoding.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total != height * width:
        raise ValueError(f"RLE counts sum to {total}, expected {height * width}")
    ends = np.cumsum(counts)
    starts = ends - counts
    fg_starts = starts[1::2]
    fg_ends = ends[1::2]
    keep = fg_ends > fg_starts
    fg_starts = fg_starts[keep]
    fg_ends = fg_ends[keep]
    if fg_starts.size == 0:
        return None
    if height == 0:
        return None
    min_col = int(fg_starts[0] // height)
    max_col = int((fg_ends[-1] - 1) // height)
    min_row = height - 1
    max_row = 0
    for s, e in zip(fg_starts, fg_ends):
        first_col = s // height
        last_col = (e - 1) // height
        if last_col > first_col:
            # run wraps at least one column boundary: full row span somewhere
            min_row = 0
            max_row = height - 1
            break
        min_row = min(min_row, int(s % height))
        max_row = max(max_row, int((e - 1) % height))
    return (min_row, min_col, max_row, max_col)
