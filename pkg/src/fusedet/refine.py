"""Refinement: segmentation-prompted box tightening and score reweighting.

Each fused pool is sent to the segmentation backend in one call. Every
detection gets the tight box of its returned mask (keeping the prompt
box when the mask is empty), then scores are reweighted: detector scores
and mask-quality scores are independently min-max scaled over the image's
pool and multiplied. Final predictions are the top K by refined score.

Min-max scope is per image over the fused pool; normalizing across
images would entangle independent images.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fusedet import kernels
from fusedet.fusion import FusedPool
from fusedet.geometry import BBox, RefinedDetection, clamp_to_image
from fusedet.protocol import BackendSession
from fusedet.rle import SegmentationResult

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScorePair:
    """Detector score and mask-quality score for one detection."""

    combined: float
    sam: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.combined) and math.isfinite(self.sam)):
            raise ValueError(f"scores must be finite, got ({self.combined}, {self.sam})")


def minmax(scores: Sequence[float] | np.ndarray) -> np.ndarray:
    """(x - min) / (max - min); a constant input maps to all zeros."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("minmax of an empty score list")
    if not np.all(np.isfinite(arr)):
        raise ValueError("minmax requires finite scores")
    lo = arr.min()
    span = arr.max() - lo
    if span == 0.0:
        return np.zeros_like(arr)
    return (arr - lo) / span


def srm(pairs: Sequence[ScorePair]) -> np.ndarray:
    """Refined scores: minmax(combined) * minmax(sam), elementwise."""
    if len(pairs) == 0:
        raise ValueError("srm of an empty pool")
    return refine_scores([p.combined for p in pairs], [p.sam for p in pairs])


def refine_scores(
    combined: Sequence[float] | np.ndarray, sam: Sequence[float] | np.ndarray
) -> np.ndarray:
    combined = np.asarray(combined, dtype=np.float64)
    sam = np.asarray(sam, dtype=np.float64)
    if combined.shape != sam.shape:
        raise ValueError(f"score lists differ in length: {combined.shape} vs {sam.shape}")
    return minmax(combined) * minmax(sam)


def mask_to_box(seg: SegmentationResult, fallback: BBox) -> tuple[BBox, bool]:
    """Tight box over the mask's foreground; (fallback, True) when empty.

    Pixel extents translate to corner form as [min_col, min_row,
    max_col + 1, max_row + 1].
    """
    extent = kernels.rle_extent(np.asarray(seg.counts, dtype=np.int64), seg.height, seg.width)
    if extent is None:
        return fallback, True
    min_row, min_col, max_row, max_col = extent
    return BBox(float(min_col), float(min_row), float(max_col + 1), float(max_row + 1)), False


def refine(
    pool: FusedPool,
    image_ref: str,
    backend: BackendSession | None,
    k: int,
    *,
    use_sam: bool = True,
    use_srm: bool = True,
    image_size: tuple[int, int] | None = None,
) -> list[RefinedDetection]:
    """Refine one image's pool and keep the top k predictions.

    With use_sam off this reduces to score-sort + truncate of the fused
    pool. Ordering is always score-descending with deterministic
    tie-breaks: higher detector score first, then lower pool index.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    dets = pool.detections
    if not dets:
        return []

    combined = np.asarray([d.score for d in dets], dtype=np.float64)

    if not use_sam:
        order = sorted(range(len(dets)), key=lambda i: (-combined[i], i))
        return [
            RefinedDetection(
                box=dets[i].box,
                score=float(combined[i]),
                class_id=dets[i].class_id,
                source=dets[i].source,
                sam_score=None,
                fallback_flag=False,
            )
            for i in order[:k]
        ]

    if backend is None:
        raise ValueError("segmentation refinement requires a backend")

    prompts: list[BBox] = []
    for det in dets:
        box = det.box
        if image_size is not None:
            box = clamp_to_image(box, image_size[0], image_size[1])
        prompts.append(box)

    segs = backend.segment_boxes(image_ref, prompts)
    if len(segs) != len(dets):
        raise ValueError(f"backend returned {len(segs)} masks for {len(dets)} prompts")

    boxes: list[BBox] = []
    flags: list[bool] = []
    sam_scores = np.empty(len(dets), dtype=np.float64)
    n_fallback = 0
    for i, seg in enumerate(segs):
        box, fell_back = mask_to_box(seg, prompts[i])
        if image_size is not None:
            box = clamp_to_image(box, image_size[0], image_size[1])
        boxes.append(box)
        flags.append(fell_back)
        n_fallback += int(fell_back)
        sam_scores[i] = seg.sam_score
    if n_fallback:
        log.warning("%s: %d empty masks kept their prompt boxes", image_ref, n_fallback)

    if use_srm:
        refined = refine_scores(combined, sam_scores)
        if np.ptp(combined) == 0.0:
            log.warning("%s: constant detector scores min-max to zero", image_ref)
    else:
        refined = combined

    order = sorted(range(len(dets)), key=lambda i: (-refined[i], -combined[i], i))
    return [
        RefinedDetection(
            box=boxes[i],
            score=float(refined[i]),
            class_id=dets[i].class_id,
            source=dets[i].source,
            sam_score=float(sam_scores[i]),
            fallback_flag=flags[i],
        )
        for i in order[:k]
    ]
