"""Grouped detection evaluation: per-class AP over IoU 0.5:0.05:0.95 with
101-point interpolation, group means over known/novel/all classes, and
class-agnostic recall.

Matching is greedy by descending score (ties broken by input order): each
detection takes the unmatched same-class ground-truth box with the highest
IoU at or above the threshold. Classes without ground truth are excluded
from every mean rather than counted as zero. The "all" mean runs over the
union of counted classes, never over the two group means.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from fusedet import kernels
from fusedet.detections_io import GroundTruthSet
from fusedet.errors import FusedetError
from fusedet.geometry import BBox
from fusedet.vocab import ClassVocabulary

log = logging.getLogger(__name__)

# IoU grid and recall sample points are defined by enumeration so that the
# values are the correctly-rounded decimals, not accumulated steps.
COCO_IOU_THRESHOLDS: tuple[float, ...] = tuple(t / 100.0 for t in range(50, 100, 5))
RECALL_POINTS: np.ndarray = np.asarray([r / 100.0 for r in range(101)], dtype=np.float64)


class ScoredBox(Protocol):
    box: BBox
    score: float


@dataclass(frozen=True)
class MatchRecord:
    """Outcome of one detection in greedy matching."""

    det_index: int
    gt_index: int | None
    iou: float
    score: float
    class_id: int = -1
    image_id: int = -1


@dataclass(frozen=True)
class PerClassAP:
    class_id: int
    name: str
    known: bool
    n_gt: int
    n_det: int
    ap: float | None
    ap50: float | None


@dataclass(frozen=True)
class RecallResult:
    recall: float | None
    tp: int
    n_gt: int
    n_pred: int


@dataclass
class EvalReport:
    ap_novel: float
    ap_known: float
    ap_all: float
    ap50_novel: float
    ap50_known: float
    ap50_all: float
    recall_05: float | None
    tp_count: int
    gt_count: int
    pred_count: int
    per_class: list[PerClassAP] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ap_novel": self.ap_novel,
            "ap_known": self.ap_known,
            "ap_all": self.ap_all,
            "ap50_novel": self.ap50_novel,
            "ap50_known": self.ap50_known,
            "ap50_all": self.ap50_all,
            "recall_05": self.recall_05,
            "tp_count": self.tp_count,
            "gt_count": self.gt_count,
            "pred_count": self.pred_count,
            "per_class": [
                {
                    "class_id": pc.class_id,
                    "name": pc.name,
                    "known": pc.known,
                    "n_gt": pc.n_gt,
                    "n_det": pc.n_det,
                    "ap": pc.ap,
                    "ap50": pc.ap50,
                }
                for pc in self.per_class
            ],
            "notes": self.notes,
        }


def _effective_threshold(iou_thr: float, strict: bool) -> float:
    # ">= thr" kernels emulate "> thr" by bumping one ulp
    return float(np.nextafter(iou_thr, np.inf)) if strict else iou_thr


def greedy_match(
    dets: Sequence[tuple[BBox, float]],
    gts: Sequence[BBox],
    iou_thr: float,
    *,
    class_id: int = -1,
    image_id: int = -1,
    strict: bool = False,
) -> list[MatchRecord]:
    """Match score-sorted detections against ground truth at one threshold.

    ``dets`` must already be sorted by descending score (ties by input
    order); each entry is (box, score).
    """
    if not dets:
        return []
    det_arr = np.asarray([d[0].as_tuple() for d in dets], dtype=np.float64)
    gt_arr = (
        np.asarray([g.as_tuple() for g in gts], dtype=np.float64)
        if gts
        else np.zeros((0, 4), dtype=np.float64)
    )
    ious = kernels.box_iou_matrix(det_arr, gt_arr)
    assigned = kernels.greedy_assign(ious, _effective_threshold(iou_thr, strict))
    records = []
    for i, (box, score) in enumerate(dets):
        j = int(assigned[i])
        records.append(
            MatchRecord(
                det_index=i,
                gt_index=j if j >= 0 else None,
                iou=float(ious[i, j]) if j >= 0 else 0.0,
                score=score,
                class_id=class_id,
                image_id=image_id,
            )
        )
    return records


def _ap_from_flags(flags: np.ndarray, n_gt: int) -> float | None:
    """101-point interpolated AP from score-ordered TP flags."""
    if n_gt == 0:
        return None
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags, dtype=np.float64)
    fp = np.cumsum(~flags, dtype=np.float64)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    inside = idx < recall.size
    sampled = np.where(inside, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


def average_precision(records: Sequence[MatchRecord], n_gt: int) -> float | None:
    """AP for one class at one threshold; None marks an absent class."""
    flags = np.asarray([r.gt_index is not None for r in records], dtype=bool)
    return _ap_from_flags(flags, n_gt)


def _truncate_per_image(
    dets_by_image: Mapping[int, Sequence[ScoredBox]], max_dets: int
) -> dict[int, list[ScoredBox]]:
    out: dict[int, list[ScoredBox]] = {}
    for image_id in sorted(dets_by_image):
        dets = list(dets_by_image[image_id])
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
        out[image_id] = [dets[i] for i in order[:max_dets]]
    return out


def localization_recall(
    dets_by_image: Mapping[int, Sequence[ScoredBox]],
    gt: GroundTruthSet,
    iou_thr: float = 0.5,
    *,
    strict: bool = False,
) -> RecallResult:
    """Class-agnostic greedy recall: fraction of GT boxes covered by any
    prediction at the IoU threshold. Returns recall None when no GT exists."""
    if not 0.0 < iou_thr < 1.0:
        raise ValueError(f"iou_thr must be in (0, 1), got {iou_thr}")
    thr = _effective_threshold(iou_thr, strict)
    tp = 0
    n_gt = gt.total_annotations
    n_pred = 0
    for image_id in sorted(dets_by_image):
        dets = list(dets_by_image[image_id])
        n_pred += len(dets)
        if image_id not in gt.images or not dets:
            continue
        gts = gt.boxes_for(image_id)
        if not gts:
            continue
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
        det_arr = np.asarray([dets[i].box.as_tuple() for i in order], dtype=np.float64)
        gt_arr = np.asarray([g.box.as_tuple() for g in gts], dtype=np.float64)
        ious = kernels.box_iou_matrix(det_arr, gt_arr)
        assigned = kernels.greedy_assign(ious, thr)
        tp += int(np.count_nonzero(assigned >= 0))
    recall = tp / n_gt if n_gt > 0 else None
    return RecallResult(recall=recall, tp=tp, n_gt=n_gt, n_pred=n_pred)


def grouped_map(
    dets_by_image: Mapping[int, Sequence[ScoredBox]],
    gt: GroundTruthSet,
    vocab: ClassVocabulary,
    max_dets: int,
    *,
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
    strict: bool = False,
) -> EvalReport:
    """Full grouped evaluation: AP means over known/novel/all plus recall@0.5.

    Detections are truncated to the top max_dets per image by score before
    anything else. Detections on images absent from the ground truth are
    dropped and listed in the report notes.
    """
    if max_dets <= 0:
        raise ValueError(f"max_dets must be positive, got {max_dets}")
    notes: list[str] = []

    unknown_images = sorted(set(dets_by_image) - set(gt.images))
    if unknown_images:
        notes.append(
            "dropped detections for image ids missing from ground truth: "
            + ",".join(str(i) for i in unknown_images)
        )
    known_dets = {i: d for i, d in dets_by_image.items() if i in gt.images}
    truncated = _truncate_per_image(known_dets, max_dets)

    # global detection records in (image asc, rank) order; seq breaks ties
    by_class: dict[int, list[tuple[float, int, int, tuple[float, float, float, float]]]] = {}
    seq = 0
    n_pred = 0
    for image_id in sorted(truncated):
        for det in truncated[image_id]:
            cid = det.class_id  # type: ignore[attr-defined]
            if not 0 <= cid < len(vocab):
                raise FusedetError(f"detection class id {cid} not in vocabulary")
            by_class.setdefault(cid, []).append(
                (det.score, seq, image_id, det.box.as_tuple())
            )
            seq += 1
            n_pred += 1

    gt_by_class: dict[int, dict[int, list[tuple[float, float, float, float]]]] = {}
    gt_counts: dict[int, int] = {cid: 0 for cid in range(len(vocab))}
    for image_id, anns in gt.annotations.items():
        for ann in anns:
            gt_by_class.setdefault(ann.class_id, {}).setdefault(image_id, []).append(
                ann.box.as_tuple()
            )
            gt_counts[ann.class_id] = gt_counts.get(ann.class_id, 0) + 1

    thresholds = [_effective_threshold(t, strict) for t in iou_thresholds]
    per_class: list[PerClassAP] = []
    for entry in vocab.entries:
        cid = entry.class_id
        n_gt = gt_counts.get(cid, 0)
        dets = sorted(by_class.get(cid, []), key=lambda r: (-r[0], r[1]))
        if n_gt == 0:
            per_class.append(
                PerClassAP(cid, entry.name, entry.known, 0, len(dets), None, None)
            )
            continue
        flags = np.zeros((len(thresholds), len(dets)), dtype=bool)
        if dets:
            rows_by_image: dict[int, list[int]] = {}
            for pos, rec in enumerate(dets):
                rows_by_image.setdefault(rec[2], []).append(pos)
            for image_id, positions in rows_by_image.items():
                gts = gt_by_class.get(cid, {}).get(image_id)
                if not gts:
                    continue
                det_arr = np.asarray([dets[p][3] for p in positions], dtype=np.float64)
                gt_arr = np.asarray(gts, dtype=np.float64)
                ious = kernels.box_iou_matrix(det_arr, gt_arr)
                for t_idx, thr in enumerate(thresholds):
                    assigned = kernels.greedy_assign(ious, thr)
                    for row, pos in enumerate(positions):
                        if assigned[row] >= 0:
                            flags[t_idx, pos] = True
        aps = [_ap_from_flags(flags[t_idx], n_gt) for t_idx in range(len(thresholds))]
        ap = float(np.mean([a for a in aps if a is not None]))
        per_class.append(
            PerClassAP(cid, entry.name, entry.known, n_gt, len(dets), ap, aps[0])
        )

    def group_mean(rows: list[PerClassAP], attr: str) -> float:
        vals = [getattr(pc, attr) for pc in rows if pc.n_gt > 0]
        return float(np.mean(vals)) if vals else 0.0

    counted = [pc for pc in per_class if pc.n_gt > 0]
    known_rows = [pc for pc in counted if pc.known]
    novel_rows = [pc for pc in counted if not pc.known]
    if not counted:
        notes.append("no ground-truth annotations: all AP means default to 0")
    if n_pred == 0:
        notes.append("no predictions")

    rec = localization_recall(truncated, gt, 0.5, strict=strict)
    return EvalReport(
        ap_novel=group_mean(novel_rows, "ap"),
        ap_known=group_mean(known_rows, "ap"),
        ap_all=group_mean(counted, "ap"),
        ap50_novel=group_mean(novel_rows, "ap50"),
        ap50_known=group_mean(known_rows, "ap50"),
        ap50_all=group_mean(counted, "ap50"),
        recall_05=rec.recall,
        tp_count=rec.tp,
        gt_count=rec.n_gt,
        pred_count=n_pred,
        per_class=per_class,
        notes=notes,
    )


def write_report_json(path: str, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


def write_report_md(path: str, report: EvalReport, *, ap50_table: bool = False) -> None:
    """Human-readable summary table; optionally an AP50-only table as well."""
    lines = [
        "# Evaluation report",
        "",
        "| Novel AP | Known AP | All AP |",
        "|---------:|---------:|-------:|",
        f"| {report.ap_novel:.4f} | {report.ap_known:.4f} | {report.ap_all:.4f} |",
        "",
    ]
    if ap50_table:
        lines += [
            "AP at IoU 0.5 only:",
            "",
            "| Novel AP50 | Known AP50 | All AP50 |",
            "|-----------:|-----------:|---------:|",
            f"| {report.ap50_novel:.4f} | {report.ap50_known:.4f} | {report.ap50_all:.4f} |",
            "",
        ]
    recall_pct = f"{report.recall_05 * 100:.2f}%" if report.recall_05 is not None else "n/a"
    lines += [
        f"- recall@0.5: {recall_pct} (TP {report.tp_count} / GT {report.gt_count}, "
        f"predictions {report.pred_count})",
        "",
        "| class | known | n_gt | n_det | AP | AP50 |",
        "|-------|-------|-----:|------:|---:|-----:|",
    ]
    for pc in report.per_class:
        ap = f"{pc.ap:.4f}" if pc.ap is not None else "-"
        ap50 = f"{pc.ap50:.4f}" if pc.ap50 is not None else "-"
        lines.append(
            f"| {pc.name} | {'yes' if pc.known else 'no'} | {pc.n_gt} | {pc.n_det} "
            f"| {ap} | {ap50} |"
        )
    for note in report.notes:
        lines.append(f"\n> {note}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
