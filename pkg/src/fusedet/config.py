"""Pipeline configuration: one JSON document plus CLI flag overrides.

Paths inside the file are resolved relative to the file's directory so a
config can travel with its fixture. Flags always win over the file; the
FUSEDET_BACKEND environment variable sits between the two.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from fusedet.errors import ParseError

MODE_DEFAULT_K = {"LVIS": 300, "COCO_OVD": 100}


@dataclass
class PipelineConfig:
    vocab_path: str = "vocab.json"
    templates_path: str = "templates.json"
    dets_kn_path: str = "dets_kn.jsonl"
    dets_bg_path: str = "dets_bg.jsonl"
    dets_gd_path: str = "dets_gd.jsonl"
    gt_path: str = "gt.json"
    image_root: str = "."
    cache_dir: str = "cache"
    out_dir: str = "out"
    backend: str = "stub://?dim=64&seed=0"
    mode: str = "LVIS"
    k_final: int | None = None
    temperature: float = 0.01
    context_pad: float = 0.0
    confidence_mode: str = "softmax"
    classify_novel_only: bool = False
    class_nms_iou: float | None = None
    use_gdino: bool = True
    use_bg_labelling: bool = True
    use_sam: bool = True
    use_srm: bool = True
    use_saeg: bool = True
    workers: int = 1
    dump_fused: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODE_DEFAULT_K:
            raise ValueError(f"mode must be one of {sorted(MODE_DEFAULT_K)}, got {self.mode!r}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.k_final is not None and self.k_final <= 0:
            raise ValueError(f"k_final must be positive, got {self.k_final}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.confidence_mode not in ("softmax", "cosine"):
            raise ValueError(f"unknown confidence mode {self.confidence_mode!r}")
        if self.class_nms_iou is not None and not 0.0 < self.class_nms_iou < 1.0:
            raise ValueError(f"class_nms_iou must be in (0, 1), got {self.class_nms_iou}")

    @property
    def k(self) -> int:
        """Final top-K; the mode fixes the default unless overridden."""
        return self.k_final if self.k_final is not None else MODE_DEFAULT_K[self.mode]

    @property
    def matrix_path(self) -> str:
        return os.path.join(self.cache_dir, "class_matrix.bin")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)


_PATH_FIELDS = (
    "vocab_path",
    "templates_path",
    "dets_kn_path",
    "dets_bg_path",
    "dets_gd_path",
    "gt_path",
    "image_root",
    "cache_dir",
    "out_dir",
)


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=path) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from exc
    if not isinstance(doc, dict):
        raise ParseError("config must be a JSON object", path=path)
    try:
        config = PipelineConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), path=path) from exc
    base = os.path.dirname(os.path.abspath(path))
    for name in _PATH_FIELDS:
        value = getattr(config, name)
        if not os.path.isabs(value):
            setattr(config, name, os.path.normpath(os.path.join(base, value)))
    return config


def save_config(path: str, config: PipelineConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
