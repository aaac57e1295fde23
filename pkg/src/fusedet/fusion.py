"""Pool assembly: pass known/grounded detections through, label background
boxes, and concatenate everything per image.

No NMS and no cross-source deduplication happens here; duplicates are
resolved only by the final top-K scoring. An optional class-wise NMS
post-filter exists behind a config flag for ablations, default off.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from fusedet.detections_io import ImageInfo
from fusedet.geometry import LabeledDetection, RawDetection, SourceTag, iou
from fusedet.protocol import BackendSession
from fusedet.zeroshot import ClassTextMatrix, label_background

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusedPool:
    """Per-image concatenation of labeled detections, KN then BG then GD."""

    detections: tuple[LabeledDetection, ...]
    n_kn: int
    n_bg: int
    n_gd: int

    def __post_init__(self) -> None:
        if len(self.detections) != self.n_kn + self.n_bg + self.n_gd:
            raise ValueError(
                f"pool size {len(self.detections)} != "
                f"{self.n_kn} + {self.n_bg} + {self.n_gd}"
            )
        tallies = {tag: 0 for tag in SourceTag}
        for det in self.detections:
            tallies[det.source] += 1
        if (tallies[SourceTag.KN], tallies[SourceTag.BG], tallies[SourceTag.GD]) != (
            self.n_kn,
            self.n_bg,
            self.n_gd,
        ):
            raise ValueError("per-source counts do not match detection tags")

    def __len__(self) -> int:
        return len(self.detections)


def _check_homogeneous(dets: Sequence[LabeledDetection], tag: SourceTag) -> None:
    for det in dets:
        if det.source is not tag:
            raise ValueError(f"expected only {tag.value} detections, found {det.source.value}")


def fuse(
    kn: Sequence[LabeledDetection],
    bg_labeled: Sequence[LabeledDetection],
    gd: Sequence[LabeledDetection],
) -> FusedPool:
    """Concatenate the three sources in KN, BG, GD order; no suppression."""
    _check_homogeneous(kn, SourceTag.KN)
    _check_homogeneous(bg_labeled, SourceTag.BG)
    _check_homogeneous(gd, SourceTag.GD)
    return FusedPool(
        detections=tuple(kn) + tuple(bg_labeled) + tuple(gd),
        n_kn=len(kn),
        n_bg=len(bg_labeled),
        n_gd=len(gd),
    )


def class_nms(pool: FusedPool, iou_thr: float) -> FusedPool:
    """Optional greedy class-wise suppression over a fused pool.

    Off by default in the pipeline; duplicates are normally left for the
    final top-K scoring to resolve. Survivors keep their pool order.
    """
    if not 0.0 < iou_thr < 1.0:
        raise ValueError(f"iou_thr must be in (0, 1), got {iou_thr}")
    dets = pool.detections
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    keep = [True] * len(dets)
    kept_boxes: dict[int, list] = {}
    for i in order:
        boxes = kept_boxes.setdefault(dets[i].class_id, [])
        if any(iou(dets[i].box, b) >= iou_thr for b in boxes):
            keep[i] = False
        else:
            boxes.append(dets[i].box)
    survivors = tuple(d for i, d in enumerate(dets) if keep[i])
    tallies = {tag: 0 for tag in SourceTag}
    for det in survivors:
        tallies[det.source] += 1
    return FusedPool(
        detections=survivors,
        n_kn=tallies[SourceTag.KN],
        n_bg=tallies[SourceTag.BG],
        n_gd=tallies[SourceTag.GD],
    )


def passthrough(dets: Sequence[RawDetection]) -> list[LabeledDetection]:
    """Promote already-classified raw detections to labeled ones."""
    out = []
    for det in dets:
        if det.class_id is None or det.score is None:
            raise ValueError(f"{det.source.value} detection missing class or score")
        out.append(
            LabeledDetection(
                box=det.box, class_id=det.class_id, score=det.score, source=det.source
            )
        )
    return out


def label_and_fuse_image(
    image_id: int,
    kn: Sequence[RawDetection],
    bg: Sequence[RawDetection],
    gd: Sequence[RawDetection],
    *,
    matrix: ClassTextMatrix,
    backend: BackendSession,
    image_info: ImageInfo | None,
    temperature: float = 0.01,
    context_pad: float = 0.0,
    use_gdino: bool = True,
    use_bg_labelling: bool = True,
    confidence_mode: str = "softmax",
    restrict_to: Sequence[int] | None = None,
) -> FusedPool:
    """Assemble one image's pool; BG boxes are dropped when labelling is off."""
    image_ref = image_info.ref if image_info is not None else str(image_id)
    image_size = (image_info.width, image_info.height) if image_info is not None else None
    bg_labeled: list[LabeledDetection] = []
    if use_bg_labelling and bg:
        bg_labeled = label_background(
            bg,
            image_ref,
            matrix,
            backend,
            temperature=temperature,
            context_pad=context_pad,
            image_size=image_size,
            confidence_mode=confidence_mode,
            restrict_to=restrict_to,
        )
    gd_pass = passthrough(gd) if use_gdino else []
    return fuse(passthrough(kn), bg_labeled, gd_pass)


def run_unknown_labelling(
    kn_dets: Mapping[int, Sequence[RawDetection]],
    bg_dets: Mapping[int, Sequence[RawDetection]],
    gd_dets: Mapping[int, Sequence[RawDetection]],
    *,
    matrix: ClassTextMatrix,
    backend: BackendSession,
    images: Mapping[int, ImageInfo] | None = None,
    temperature: float = 0.01,
    context_pad: float = 0.0,
    use_gdino: bool = True,
    use_bg_labelling: bool = True,
    confidence_mode: str = "softmax",
    restrict_to: Sequence[int] | None = None,
) -> dict[int, FusedPool]:
    """Fuse every image appearing in any dump; missing sources only warn."""
    image_ids = sorted(set(kn_dets) | set(bg_dets) | set(gd_dets))
    pools: dict[int, FusedPool] = {}
    for image_id in image_ids:
        missing = [
            name
            for name, dump in (("KN", kn_dets), ("BG", bg_dets), ("GD", gd_dets))
            if image_id not in dump
        ]
        if missing:
            log.warning("image %d missing sources: %s", image_id, ",".join(missing))
        info = images.get(image_id) if images is not None else None
        pools[image_id] = label_and_fuse_image(
            image_id,
            kn_dets.get(image_id, ()),
            bg_dets.get(image_id, ()),
            gd_dets.get(image_id, ()),
            matrix=matrix,
            backend=backend,
            image_info=info,
            temperature=temperature,
            context_pad=context_pad,
            use_gdino=use_gdino,
            use_bg_labelling=use_bg_labelling,
            confidence_mode=confidence_mode,
            restrict_to=restrict_to,
        )
    return pools
