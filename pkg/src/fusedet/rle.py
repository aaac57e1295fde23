"""Run-length-encoded binary masks as returned by the segmentation backend.

Convention: column-major scan order, counts alternate starting with
background. This is bit-compatible with the common uncompressed
annotation format, so existing mask dumps can be replayed unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fusedet import kernels


@dataclass(frozen=True)
class SegmentationResult:
    """One mask per prompted box, plus the segmenter's quality score."""

    counts: tuple[int, ...]
    height: int
    width: int
    sam_score: float

    def __post_init__(self) -> None:
        if self.height < 0 or self.width < 0:
            raise ValueError(f"mask size must be non-negative, got {self.width}x{self.height}")
        if any(c < 0 for c in self.counts):
            raise ValueError("RLE counts must be non-negative")
        total = sum(self.counts)
        if total != self.height * self.width:
            raise ValueError(
                f"RLE counts sum to {total}, expected {self.height * self.width}"
            )

    @property
    def is_empty(self) -> bool:
        """True when no foreground pixel is set."""
        return all(c == 0 for c in self.counts[1::2])


def decode_rle(seg: SegmentationResult) -> np.ndarray:
    """Reconstruct the (height, width) boolean grid."""
    return kernels.rle_decode(np.asarray(seg.counts, dtype=np.int64), seg.height, seg.width)


def encode_rle(mask: np.ndarray, sam_score: float = 0.0) -> SegmentationResult:
    """Encode a boolean grid; inverse of decode_rle."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-d mask, got shape {mask.shape}")
    counts = kernels.rle_encode(mask)
    return SegmentationResult(
        counts=tuple(int(c) for c in counts),
        height=int(mask.shape[0]),
        width=int(mask.shape[1]),
        sam_score=sam_score,
    )
