"""Shared fixtures and scene generators for the test suite."""

from __future__ import annotations

import os
import shutil

import numpy as np
import pytest
from hypothesis import settings

from fusedet.detections_io import GroundTruthBox, GroundTruthSet, ImageInfo
from fusedet.geometry import BBox, LabeledDetection, SourceTag
from fusedet.vocab import ClassEntry, ClassVocabulary, PromptTemplateSet

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")

FIXTURE_ROOT = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def pipeline_fixture(tmp_path):
    """Writable copy of the committed 3-image pipeline fixture."""
    dst = tmp_path / "pipeline"
    shutil.copytree(os.path.join(FIXTURE_ROOT, "pipeline"), dst)
    return dst


def make_vocab(known: int = 2, novel: int = 2, synonyms_per_class: int = 1) -> ClassVocabulary:
    entries = []
    for i in range(known + novel):
        name = f"class_{i:04d}"
        syns = [name] + [f"{name}_syn{j}" for j in range(1, synonyms_per_class)]
        entries.append(ClassEntry(i, name, tuple(syns), known=i < known))
    return ClassVocabulary(tuple(entries))


def make_templates(n: int = 2) -> PromptTemplateSet:
    base = ["a photo of a [CLASS]", "an image of the [CLASS]", "a cropped [CLASS] picture"]
    return PromptTemplateSet(tuple(base[:n]) if n <= 3 else tuple(
        base + [f"scene {k} with a [CLASS]" for k in range(n - 3)]
    ))


class ArraySession:
    """Scriptable fake backend: returns pre-set arrays/masks, counts calls."""

    def __init__(
        self,
        dim: int = 4,
        text_fn=None,
        roi_fn=None,
        seg_fn=None,
    ):
        self._dim = dim
        self._text_fn = text_fn
        self._roi_fn = roi_fn
        self._seg_fn = seg_fn
        self.calls = {"text_embed": 0, "image_embed_roi": 0, "segment_boxes": 0}
        self.closed = False

    @property
    def dim(self) -> int:
        return self._dim

    def text_embed(self, texts):
        self.calls["text_embed"] += 1
        return np.asarray(self._text_fn(list(texts)), dtype=np.float32)

    def image_embed_roi(self, image_ref, boxes, context_pad=0.0):
        self.calls["image_embed_roi"] += 1
        return np.asarray(self._roi_fn(image_ref, list(boxes), context_pad), dtype=np.float32)

    def segment_boxes(self, image_ref, boxes):
        self.calls["segment_boxes"] += 1
        return self._seg_fn(image_ref, list(boxes))

    def close(self) -> None:
        self.closed = True


def random_scene(rng: np.random.Generator, n_classes: int = 5, max_gt: int = 10,
                 max_dets: int = 20, n_images: int = 3, size: float = 100.0):
    """Random evaluation scene as plain dicts (oracle-friendly).

    Half the detections are jittered copies of ground truth so scores and
    matches are non-trivial; the rest are random boxes.
    """
    def rand_box():
        x1, y1 = rng.uniform(0, size * 0.8, 2)
        w, h = rng.uniform(1.0, size * 0.4, 2)
        return (float(x1), float(y1), float(min(x1 + w, size)), float(min(y1 + h, size)))

    gts_by_image = {}
    dets_by_image = {}
    for image_id in range(1, n_images + 1):
        gts = []
        for _ in range(int(rng.integers(0, max_gt + 1))):
            gts.append({"box": rand_box(), "class_id": int(rng.integers(0, n_classes))})
        gts_by_image[image_id] = gts
        dets = []
        for _ in range(int(rng.integers(0, max_dets + 1))):
            if gts and rng.random() < 0.5:
                src = gts[int(rng.integers(0, len(gts)))]
                x1, y1, x2, y2 = src["box"]
                jit = rng.uniform(-4.0, 4.0, 4)
                box = (
                    float(min(x1 + jit[0], x2 + jit[2] - 0.1)),
                    float(min(y1 + jit[1], y2 + jit[3] - 0.1)),
                    float(x2 + jit[2]),
                    float(y2 + jit[3]),
                )
                class_id = src["class_id"] if rng.random() < 0.8 else int(rng.integers(0, n_classes))
            else:
                box = rand_box()
                class_id = int(rng.integers(0, n_classes))
            dets.append({
                "box": box,
                "class_id": class_id,
                "score": float(rng.random()),
            })
        dets_by_image[image_id] = dets
    return dets_by_image, gts_by_image


def scene_to_engine(dets_by_image, gts_by_image, n_classes: int, known_classes, size: float = 100.0):
    """Convert a dict scene to engine types (detections, GroundTruthSet, vocab)."""
    entries = tuple(
        ClassEntry(i, f"class_{i:04d}", (f"class_{i:04d}",), known=i in known_classes)
        for i in range(n_classes)
    )
    vocab = ClassVocabulary(entries)
    gt = GroundTruthSet()
    for image_id, gts in gts_by_image.items():
        gt.images[image_id] = ImageInfo(image_id, int(size), int(size))
        gt.annotations[image_id] = [
            GroundTruthBox(box=BBox(*g["box"]), class_id=g["class_id"]) for g in gts
        ]
    dets = {
        image_id: [
            LabeledDetection(
                box=BBox(*d["box"]),
                class_id=d["class_id"],
                score=d["score"],
                source=SourceTag.KN,
            )
            for d in rows
        ]
        for image_id, rows in dets_by_image.items()
    }
    return dets, gt, vocab
