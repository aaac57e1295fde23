"""Detection value types and box geometry.

Boxes are corner-form (x1, y1, x2, y2) in continuous pixel coordinates,
origin top-left. Area is (x2 - x1) * (y2 - y1) with no "+1" pixel
correction. Zero-area boxes are legal values (degenerate masks produce
them); they simply never win a match.

All types here are immutable and safe to share across workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class SourceTag(enum.Enum):
    """Provenance of a detection: known-class detector (KN), unclassified
    background proposal (BG), or grounded open-set detector (GD)."""

    KN = "KN"
    BG = "BG"
    GD = "GD"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with x2 >= x1 and y2 >= y1."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (self.x2 >= self.x1 and self.y2 >= self.y1):
            raise ValueError(f"box corners out of order: {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        inter = 0.0
    else:
        inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def clamp_to_image(box: BBox, width: float, height: float) -> BBox:
    """Clip a box into [0, width] x [0, height]; preserves corner ordering."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image size must be positive, got {width}x{height}")

    def _clip(v: float, hi: float) -> float:
        return min(max(v, 0.0), hi)

    return BBox(
        _clip(box.x1, width),
        _clip(box.y1, height),
        _clip(box.x2, width),
        _clip(box.y2, height),
    )


@dataclass(frozen=True)
class RawDetection:
    """Detector output before labelling.

    BG detections carry no class or score; KN and GD carry both.
    """

    box: BBox
    source: SourceTag
    class_id: int | None = None
    score: float | None = None

    def __post_init__(self) -> None:
        if self.source is SourceTag.BG:
            if self.class_id is not None or self.score is not None:
                raise ValueError("BG detections must not carry class_id or score")
        else:
            if self.class_id is None or self.score is None:
                raise ValueError(f"{self.source.value} detections require class_id and score")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class LabeledDetection:
    """Detection with a class and a confidence, provenance preserved."""

    box: BBox
    class_id: int
    score: float
    source: SourceTag

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class RefinedDetection:
    """Final prediction after mask refinement and score reweighting.

    ``fallback_flag`` is true when the segmenter returned an empty mask
    and the prompting box was kept instead of a mask-derived one.
    ``sam_score`` is None when refinement ran without segmentation.
    """

    box: BBox
    score: float
    class_id: int
    source: SourceTag
    sam_score: float | None
    fallback_flag: bool
