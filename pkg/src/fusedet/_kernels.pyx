# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: pairwise IoU, greedy matching, RLE codecs.

Semantics mirror fusedet._kernels_py exactly; the dispatcher in
fusedet.kernels picks whichever is importable.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


def box_iou_matrix(a, b):
    """Pairwise IoU of corner-form boxes, shape (N, 4) x (M, 4) -> (N, M)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] aa = np.ascontiguousarray(
        np.asarray(a, dtype=np.float64).reshape(-1, 4))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bb = np.ascontiguousarray(
        np.asarray(b, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = aa.shape[0]
    cdef Py_ssize_t m = bb.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double ax1, ay1, ax2, ay2, area_a
    cdef double iw, ih, inter, union
    for i in range(n):
        ax1 = aa[i, 0]
        ay1 = aa[i, 1]
        ax2 = aa[i, 2]
        ay2 = aa[i, 3]
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for j in range(m):
            iw = min(ax2, bb[j, 2]) - max(ax1, bb[j, 0])
            ih = min(ay2, bb[j, 3]) - max(ay1, bb[j, 1])
            if iw > 0.0 and ih > 0.0:
                inter = iw * ih
            else:
                inter = 0.0
            union = area_a + (bb[j, 2] - bb[j, 0]) * (bb[j, 3] - bb[j, 1]) - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


def greedy_assign(ious, double thr):
    """Row-greedy assignment; rows in priority order, ties keep lowest column."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] mat = np.ascontiguousarray(
        np.asarray(ious, dtype=np.float64))
    cdef Py_ssize_t n = mat.shape[0]
    cdef Py_ssize_t m = mat.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] assigned = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] taken = np.zeros(m, dtype=np.uint8)
    cdef Py_ssize_t i, j, best
    cdef double v, best_v
    for i in range(n):
        best = -1
        best_v = -1.0
        for j in range(m):
            if taken[j]:
                continue
            v = mat[i, j]
            if v >= thr and v > best_v:
                best = j
                best_v = v
        if best >= 0:
            assigned[i] = best
            taken[best] = 1
    return assigned


def rle_decode(counts, int height, int width):
    """Column-major RLE (counts start with background) -> bool grid (h, w)."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cc = np.ascontiguousarray(
        np.asarray(counts, dtype=np.int64))
    cdef long long total = 0
    cdef Py_ssize_t k
    for k in range(cc.shape[0]):
        total += cc[k]
    if total != <long long> height * width:
        raise ValueError(f"RLE counts sum to {total}, expected {height * width}")
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] flat = np.zeros(height * width, dtype=np.uint8)
    cdef Py_ssize_t pos = 0, r
    cdef cnp.uint8_t val = 0
    for k in range(cc.shape[0]):
        if val:
            for r in range(cc[k]):
                flat[pos + r] = 1
        pos += cc[k]
        val = 1 - val
    return flat.view(np.bool_).reshape((height, width), order="F")


def rle_encode(mask):
    """Bool grid (h, w) -> column-major RLE counts starting with background."""
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] flat = np.asarray(
        mask, dtype=bool).ravel(order="F").view(np.uint8)
    cdef Py_ssize_t size = flat.shape[0]
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    cdef Py_ssize_t n_runs = 1, k
    for k in range(1, size):
        if flat[k] != flat[k - 1]:
            n_runs += 1
    cdef Py_ssize_t lead = 1 if flat[0] != 0 else 0
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(n_runs + lead, dtype=np.int64)
    cdef Py_ssize_t idx = lead
    cdef long long run = 1
    for k in range(1, size):
        if flat[k] == flat[k - 1]:
            run += 1
        else:
            counts[idx] = run
            idx += 1
            run = 1
    counts[idx] = run
    return counts


def rle_extent(counts, int height, int width):
    """Tight inclusive foreground extent (min_row, min_col, max_row, max_col)."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cc = np.ascontiguousarray(
        np.asarray(counts, dtype=np.int64))
    cdef long long total = 0
    cdef Py_ssize_t k
    for k in range(cc.shape[0]):
        total += cc[k]
    if total != <long long> height * width:
        raise ValueError(f"RLE counts sum to {total}, expected {height * width}")
    if height == 0:
        return None
    cdef long long pos = 0, s, e
    cdef long long min_row = height, max_row = -1, min_col = width, max_col = -1
    cdef long long first_col, last_col, r0, r1
    cdef bint fg = 0, any_fg = 0
    for k in range(cc.shape[0]):
        s = pos
        e = pos + cc[k]
        pos = e
        if fg and e > s:
            any_fg = 1
            first_col = s // height
            last_col = (e - 1) // height
            if first_col < min_col:
                min_col = first_col
            if last_col > max_col:
                max_col = last_col
            if last_col > first_col:
                min_row = 0
                max_row = height - 1
            else:
                r0 = s % height
                r1 = (e - 1) % height
                if r0 < min_row:
                    min_row = r0
                if r1 > max_row:
                    max_row = r1
        fg = not fg
    if not any_fg:
        return None
    return (int(min_row), int(min_col), int(max_row), int(max_col))
