"""Backend construction and the deterministic in-process stub.

The stub answers the same contract as a live model service but derives
everything from seeded hashes and the ground-truth layout, so pipeline
runs are reproducible byte-for-byte without any model weights. Text
prompts map back to their class through the template x synonym table;
ROI embeddings point at the class anchor of the best-overlapping
ground-truth box; segmentations snap prompts to that box.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence
from urllib.parse import parse_qs, urlparse

import numpy as np

from fusedet.detections_io import GroundTruthSet
from fusedet.geometry import BBox, iou
from fusedet.protocol import BackendSession, SocketBackendSession
from fusedet.rle import SegmentationResult, encode_rle
from fusedet.vocab import ClassVocabulary, PromptTemplateSet

_MATCH_IOU = 0.25


def _hash_unit(tag: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def _box_tag(box: BBox) -> str:
    return f"{box.x1!r},{box.y1!r},{box.x2!r},{box.y2!r}"


class OracleStubBackend:
    """Ground-truth-aware stub implementing the BackendSession contract."""

    def __init__(
        self,
        vocab: ClassVocabulary,
        templates: PromptTemplateSet,
        gt: GroundTruthSet,
        dim: int = 64,
        seed: int = 0,
    ):
        self._vocab = vocab
        self._gt = gt
        self._dim = dim
        self._seed = seed
        self.backend_id = f"stub:dim={dim}:seed={seed}"
        self.calls: dict[str, int] = {"text_embed": 0, "image_embed_roi": 0, "segment_boxes": 0}
        self._anchors = {
            e.class_id: _hash_unit(f"{seed}:anchor:{e.name}", dim) for e in vocab.entries
        }
        self._prompt_to_class: dict[str, int] = {}
        for entry in vocab.entries:
            for syn in entry.synonyms:
                for prompt in templates.expand(syn):
                    self._prompt_to_class.setdefault(prompt, entry.class_id)
        self._gt_by_ref = {info.ref: info.image_id for info in gt.images.values()}

    @property
    def dim(self) -> int:
        return self._dim

    def _noisy_anchor(self, class_id: int, tag: str, noise: float) -> np.ndarray:
        v = self._anchors[class_id].astype(np.float64) + noise * _hash_unit(
            f"{self._seed}:{tag}", self._dim
        )
        return (v / np.linalg.norm(v)).astype(np.float32)

    def text_embed(self, texts: Sequence[str]) -> np.ndarray:
        self.calls["text_embed"] += 1
        out = np.empty((len(texts), self._dim), dtype=np.float32)
        for i, text in enumerate(texts):
            class_id = self._prompt_to_class.get(text)
            if class_id is None:
                out[i] = _hash_unit(f"{self._seed}:text:{text}", self._dim)
            else:
                out[i] = self._noisy_anchor(class_id, f"text:{text}", noise=0.15)
        return out

    def _best_gt(self, image_ref: str, box: BBox) -> tuple[int, float] | None:
        image_id = self._gt_by_ref.get(image_ref)
        if image_id is None:
            return None
        best: tuple[int, float] | None = None
        for ann in self._gt.boxes_for(image_id):
            v = iou(box, ann.box)
            if v >= _MATCH_IOU and (best is None or v > best[1]):
                best = (ann.class_id, v)
        return best

    def _best_gt_box(self, image_ref: str, box: BBox) -> tuple[BBox, float] | None:
        image_id = self._gt_by_ref.get(image_ref)
        if image_id is None:
            return None
        best: tuple[BBox, float] | None = None
        for ann in self._gt.boxes_for(image_id):
            v = iou(box, ann.box)
            if v >= _MATCH_IOU and (best is None or v > best[1]):
                best = (ann.box, v)
        return best

    def image_embed_roi(
        self, image_ref: str, boxes: Sequence[BBox], context_pad: float = 0.0
    ) -> np.ndarray:
        self.calls["image_embed_roi"] += 1
        out = np.empty((len(boxes), self._dim), dtype=np.float32)
        for i, box in enumerate(boxes):
            hit = self._best_gt(image_ref, box)
            tag = f"roi:{image_ref}:{_box_tag(box)}"
            if hit is None:
                out[i] = _hash_unit(f"{self._seed}:{tag}", self._dim)
            else:
                out[i] = self._noisy_anchor(hit[0], tag, noise=0.1)
        return out

    def segment_boxes(self, image_ref: str, boxes: Sequence[BBox]) -> list[SegmentationResult]:
        self.calls["segment_boxes"] += 1
        image_id = self._gt_by_ref.get(image_ref)
        results: list[SegmentationResult] = []
        for box in boxes:
            if image_id is None:
                results.append(self._rect_mask(64, 64, box, score=0.05))
                continue
            info = self._gt.images[image_id]
            hit = self._best_gt_box(image_ref, box)
            if hit is not None:
                gt_box, overlap = hit
                results.append(
                    self._rect_mask(info.height, info.width, gt_box, score=0.55 + 0.45 * overlap)
                )
            elif box.area < 4.0:
                # degenerate prompt: empty mask exercises the fallback path
                results.append(
                    SegmentationResult(
                        counts=(info.height * info.width,),
                        height=info.height,
                        width=info.width,
                        sam_score=0.05,
                    )
                )
            else:
                shrunk = self._shrink(box)
                h = int.from_bytes(
                    hashlib.sha256(f"{self._seed}:seg:{image_ref}:{_box_tag(box)}".encode()).digest()[:4],
                    "little",
                )
                results.append(
                    self._rect_mask(info.height, info.width, shrunk, score=0.25 + 0.2 * (h / 2**32))
                )
        return results

    @staticmethod
    def _shrink(box: BBox, factor: float = 0.8) -> BBox:
        cx = (box.x1 + box.x2) / 2.0
        cy = (box.y1 + box.y2) / 2.0
        hw = box.width * factor / 2.0
        hh = box.height * factor / 2.0
        return BBox(cx - hw, cy - hh, cx + hw, cy + hh)

    @staticmethod
    def _rect_mask(height: int, width: int, box: BBox, score: float) -> SegmentationResult:
        mask = np.zeros((height, width), dtype=bool)
        r0 = max(int(np.floor(box.y1)), 0)
        r1 = min(int(np.ceil(box.y2)), height)
        c0 = max(int(np.floor(box.x1)), 0)
        c1 = min(int(np.ceil(box.x2)), width)
        if r1 > r0 and c1 > c0:
            mask[r0:r1, c0:c1] = True
        seg = encode_rle(mask, sam_score=score)
        return seg

    def close(self) -> None:
        pass


@dataclass
class StubContext:
    """Everything the stub needs to impersonate a model service."""

    vocab: ClassVocabulary
    templates: PromptTemplateSet
    gt: GroundTruthSet


def open_backend(endpoint: str, stub_context: StubContext | None = None) -> BackendSession:
    """Create a session from an endpoint URI.

    ``tcp://host:port`` connects to a live service; ``stub://?dim=64&seed=0``
    builds the in-process stub (requires stub_context).
    """
    parsed = urlparse(endpoint)
    if parsed.scheme == "tcp":
        return SocketBackendSession(endpoint)
    if parsed.scheme == "stub":
        if stub_context is None:
            raise ValueError("stub:// endpoint requires vocabulary/templates/ground truth")
        params = parse_qs(parsed.query)
        dim = int(params.get("dim", ["64"])[0])
        seed = int(params.get("seed", ["0"])[0])
        return OracleStubBackend(
            stub_context.vocab, stub_context.templates, stub_context.gt, dim=dim, seed=seed
        )
    raise ValueError(f"unsupported backend endpoint {endpoint!r}")
