#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fusedet import _kernels_py

try:
    from fusedet import _kernels
except ImportError:
    _kernels = None


def random_boxes(rng, n, size=640.0):
    xy = rng.uniform(0, size * 0.9, (n, 2))
    wh = rng.uniform(2.0, size * 0.3, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    dets = random_boxes(rng, 300)
    gts = random_boxes(rng, 60)
    mask = rng.random((480, 640)) > 0.6
    counts = _kernels_py.rle_encode(mask)
    ious = _kernels_py.box_iou_matrix(dets, gts)

    cases = {
        "box_iou_matrix 300x60": lambda k: k.box_iou_matrix(dets, gts),
        "greedy_assign 300x60": lambda k: k.greedy_assign(ious, 0.5),
        "rle_encode 480x640": lambda k: k.rle_encode(mask),
        "rle_decode 480x640": lambda k: k.rle_decode(counts, 480, 640),
        "rle_extent 480x640": lambda k: k.rle_extent(counts, 480, 640),
    }

    print(f"{'kernel':<26} {'python':>12} {'compiled':>12} {'speedup':>9}")
    for name, fn in cases.items():
        py = timeit(lambda: fn(_kernels_py), args.repeats)
        if _kernels is None:
            print(f"{name:<26} {py * 1e6:>10.1f}us {'n/a':>12} {'n/a':>9}")
            continue
        cy = timeit(lambda: fn(_kernels), args.repeats)
        print(f"{name:<26} {py * 1e6:>10.1f}us {cy * 1e6:>10.1f}us {py / cy:>8.1f}x")


if __name__ == "__main__":
    main()
