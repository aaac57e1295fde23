"""File ingest and dump: detection JSONL, ground truth, final predictions.

Detection dumps are newline-delimited JSON, one record per detection:

    {"image_id": 7, "box": [x1, y1, x2, y2], "score": 0.9, "class_id": 12}

BG dumps omit score and class_id. Ground truth is a single COCO-like
document with corner-form boxes. All parsing is total: malformed input
raises ParseError with file/line context, never a silent skip.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from fusedet.errors import ParseError
from fusedet.geometry import (
    BBox,
    LabeledDetection,
    RawDetection,
    RefinedDetection,
    SourceTag,
    clamp_to_image,
)
from fusedet.vocab import ClassVocabulary

log = logging.getLogger(__name__)


def _parse_box(value: object, where: str, path: str, line: int | None) -> BBox:
    if (
        not isinstance(value, list)
        or len(value) != 4
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise ParseError(f"{where}: box must be [x1, y1, x2, y2]", path=path, line=line)
    try:
        return BBox(float(value[0]), float(value[1]), float(value[2]), float(value[3]))
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}", path=path, line=line) from exc


def load_detections(path: str, source: SourceTag) -> dict[int, list[RawDetection]]:
    """Load a per-source dump; returns image_id -> detections in file order."""
    out: dict[int, list[RawDetection]] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=path) from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", path=path, line=lineno) from exc
            if not isinstance(rec, dict):
                raise ParseError("record must be an object", path=path, line=lineno)
            image_id = rec.get("image_id")
            if not isinstance(image_id, int) or isinstance(image_id, bool):
                raise ParseError("image_id must be an integer", path=path, line=lineno)
            box = _parse_box(rec.get("box"), "detection", path, lineno)
            class_id = rec.get("class_id")
            score = rec.get("score")
            if source is SourceTag.BG:
                if class_id is not None or score is not None:
                    raise ParseError(
                        "BG records must not carry class_id or score", path=path, line=lineno
                    )
            else:
                if not isinstance(class_id, int) or isinstance(class_id, bool):
                    raise ParseError(
                        f"{source.value} records require integer class_id",
                        path=path,
                        line=lineno,
                    )
                if not isinstance(score, (int, float)) or isinstance(score, bool):
                    raise ParseError(
                        f"{source.value} records require a numeric score", path=path, line=lineno
                    )
                if not 0.0 <= float(score) <= 1.0:
                    raise ParseError(f"score {score} outside [0, 1]", path=path, line=lineno)
                score = float(score)
            try:
                det = RawDetection(box=box, source=source, class_id=class_id, score=score)
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
            out.setdefault(image_id, []).append(det)
    return out


@dataclass(frozen=True)
class GroundTruthBox:
    box: BBox
    class_id: int


@dataclass(frozen=True)
class ImageInfo:
    image_id: int
    width: int
    height: int
    file_name: str | None = None

    @property
    def ref(self) -> str:
        """Identifier sent to the backend for this image."""
        return self.file_name if self.file_name is not None else str(self.image_id)


@dataclass
class GroundTruthSet:
    images: dict[int, ImageInfo] = field(default_factory=dict)
    annotations: dict[int, list[GroundTruthBox]] = field(default_factory=dict)

    def boxes_for(self, image_id: int) -> list[GroundTruthBox]:
        return self.annotations.get(image_id, [])

    @property
    def total_annotations(self) -> int:
        return sum(len(v) for v in self.annotations.values())


def load_ground_truth(path: str, vocab: ClassVocabulary | None = None) -> GroundTruthSet:
    """Parse gt.json: {"images": [...], "annotations": [...]} with corner boxes.

    Boxes extending past the image bounds are clamped with a warning so the
    in-memory set always satisfies its invariants.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=path) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from exc
    if not isinstance(doc, dict):
        raise ParseError("top-level value must be an object", path=path)

    gt = GroundTruthSet()
    images = doc.get("images")
    if not isinstance(images, list):
        raise ParseError('missing "images" array', path=path)
    for i, rec in enumerate(images):
        if not isinstance(rec, dict):
            raise ParseError(f"images[{i}] is not an object", path=path)
        try:
            image_id = rec["id"]
            width = rec["width"]
            height = rec["height"]
        except KeyError as exc:
            raise ParseError(f"images[{i}] missing field {exc}", path=path) from exc
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (image_id, width, height)):
            raise ParseError(f"images[{i}]: id/width/height must be integers", path=path)
        if width <= 0 or height <= 0:
            raise ParseError(f"images[{i}]: non-positive size {width}x{height}", path=path)
        if image_id in gt.images:
            raise ParseError(f"duplicate image id {image_id}", path=path)
        file_name = rec.get("file_name")
        if file_name is not None and not isinstance(file_name, str):
            raise ParseError(f"images[{i}].file_name must be a string", path=path)
        gt.images[image_id] = ImageInfo(image_id, width, height, file_name)
        gt.annotations.setdefault(image_id, [])

    annotations = doc.get("annotations")
    if not isinstance(annotations, list):
        raise ParseError('missing "annotations" array', path=path)
    clamped = 0
    for i, rec in enumerate(annotations):
        if not isinstance(rec, dict):
            raise ParseError(f"annotations[{i}] is not an object", path=path)
        image_id = rec.get("image_id")
        if image_id not in gt.images:
            raise ParseError(f"annotations[{i}]: unknown image_id {image_id}", path=path)
        class_id = rec.get("category_id")
        if not isinstance(class_id, int) or isinstance(class_id, bool):
            raise ParseError(f"annotations[{i}]: category_id must be an integer", path=path)
        if vocab is not None and not 0 <= class_id < len(vocab):
            raise ParseError(
                f"annotations[{i}]: category_id {class_id} not in vocabulary", path=path
            )
        box = _parse_box(rec.get("bbox"), f"annotations[{i}]", path, None)
        info = gt.images[image_id]
        inside = clamp_to_image(box, info.width, info.height)
        if inside != box:
            clamped += 1
            box = inside
        gt.annotations[image_id].append(GroundTruthBox(box=box, class_id=class_id))
    if clamped:
        log.warning("%s: clamped %d ground-truth boxes to image bounds", path, clamped)
    return gt


def write_detections(path: str, per_image: dict[int, list[RawDetection]]) -> None:
    """Dump detections to JSONL in ascending image_id order."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in sorted(per_image):
            for det in per_image[image_id]:
                rec: dict[str, object] = {
                    "image_id": image_id,
                    "box": list(det.box.as_tuple()),
                }
                if det.source is not SourceTag.BG:
                    rec["score"] = det.score
                    rec["class_id"] = det.class_id
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def write_predictions(path: str, per_image: dict[int, list[RefinedDetection]]) -> None:
    """Write final.jsonl, the evaluator's input, in ascending image_id order."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in sorted(per_image):
            for det in per_image[image_id]:
                rec = {
                    "image_id": image_id,
                    "box": list(det.box.as_tuple()),
                    "score": det.score,
                    "class_id": det.class_id,
                    "source": det.source.value,
                    "fallback_flag": det.fallback_flag,
                    "sam_score": det.sam_score,
                }
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_predictions(path: str) -> dict[int, list[LabeledDetection]]:
    """Load final.jsonl for evaluation (extra fields are ignored)."""
    out: dict[int, list[LabeledDetection]] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=path) from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", path=path, line=lineno) from exc
            if not isinstance(rec, dict):
                raise ParseError("record must be an object", path=path, line=lineno)
            image_id = rec.get("image_id")
            if not isinstance(image_id, int) or isinstance(image_id, bool):
                raise ParseError("image_id must be an integer", path=path, line=lineno)
            box = _parse_box(rec.get("box"), "prediction", path, lineno)
            class_id = rec.get("class_id")
            if not isinstance(class_id, int) or isinstance(class_id, bool):
                raise ParseError("class_id must be an integer", path=path, line=lineno)
            score = rec.get("score")
            if not isinstance(score, (int, float)) or isinstance(score, bool):
                raise ParseError("score must be numeric", path=path, line=lineno)
            source = rec.get("source", "KN")
            try:
                tag = SourceTag(source)
            except ValueError as exc:
                raise ParseError(f"unknown source tag {source!r}", path=path, line=lineno) from exc
            score = min(max(float(score), 0.0), 1.0)
            out.setdefault(image_id, []).append(
                LabeledDetection(box=box, class_id=class_id, score=score, source=tag)
            )
    return out
