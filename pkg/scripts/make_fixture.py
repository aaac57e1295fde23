#!/usr/bin/env python3
"""Regenerate the committed 3-image pipeline fixture.

Deterministic: rerunning reproduces tests/fixtures/pipeline byte for byte.
The layout gives every source something to do: KN and GD dumps cover the
known-class ground truth with jittered boxes, the BG dump covers the novel
ground truth (plus one spurious proposal per image), and the grounded dump
deliberately contains no novel classes so that disabling background
labelling leaves novel AP at exactly zero.
"""

from __future__ import annotations

import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.normpath(os.path.join(HERE, "..", "tests", "fixtures", "pipeline"))

W, H = 640, 480

VOCAB = {
    "classes": [
        {"id": 0, "name": "person", "synonyms": ["person", "human"], "known": True},
        {"id": 1, "name": "car", "synonyms": ["car", "automobile"], "known": True},
        {"id": 2, "name": "dog", "synonyms": ["dog"], "known": True},
        {"id": 3, "name": "xylophone", "synonyms": ["xylophone", "marimba"], "known": False},
        {"id": 4, "name": "unicycle", "synonyms": ["unicycle"], "known": False},
        {"id": 5, "name": "beanbag", "synonyms": ["beanbag", "bean_bag_chair"], "known": False},
    ]
}

TEMPLATES = {
    "templates": [
        "a photo of a [CLASS]",
        "a close-up photo of the [CLASS]",
    ]
}

# image_id -> list of (class_id, box)
SCENES = {
    1: [
        (0, [40, 60, 160, 300]),
        (1, [300, 200, 560, 360]),
        (3, [180, 340, 300, 430]),
        (4, [480, 40, 560, 180]),
    ],
    2: [
        (2, [80, 220, 230, 380]),
        (5, [320, 260, 470, 420]),
        (0, [520, 100, 610, 330]),
        (3, [60, 40, 200, 140]),
    ],
    3: [
        (1, [30, 280, 260, 420]),
        (4, [380, 120, 470, 300]),
        (5, [100, 60, 240, 180]),
        (2, [420, 340, 580, 460]),
    ],
}

KNOWN = {0, 1, 2}


def jitter(rng: random.Random, box: list[int], amount: float) -> list[float]:
    out = []
    for k, v in enumerate(box):
        v = v + rng.uniform(-amount, amount)
        out.append(round(min(max(v, 0.0), W if k % 2 == 0 else H), 1))
    if out[2] <= out[0]:
        out[2] = out[0] + 1.0
    if out[3] <= out[1]:
        out[3] = out[1] + 1.0
    return out


def main() -> None:
    rng = random.Random(11)
    os.makedirs(OUT, exist_ok=True)

    with open(os.path.join(OUT, "vocab.json"), "w") as fh:
        json.dump(VOCAB, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(OUT, "templates.json"), "w") as fh:
        json.dump(TEMPLATES, fh, indent=2)
        fh.write("\n")

    images = [{"id": i, "width": W, "height": H, "file_name": f"img_{i:06d}.jpg"}
              for i in sorted(SCENES)]
    annotations = [
        {"image_id": i, "bbox": [float(v) for v in box], "category_id": cid}
        for i in sorted(SCENES)
        for cid, box in SCENES[i]
    ]
    with open(os.path.join(OUT, "gt.json"), "w") as fh:
        json.dump({"images": images, "annotations": annotations}, fh, indent=2)
        fh.write("\n")

    kn_lines, bg_lines, gd_lines = [], [], []
    for image_id in sorted(SCENES):
        for cid, box in SCENES[image_id]:
            if cid in KNOWN:
                kn_lines.append({
                    "image_id": image_id,
                    "box": jitter(rng, box, 12.0),
                    "score": round(rng.uniform(0.6, 0.95), 4),
                    "class_id": cid,
                })
                gd_lines.append({
                    "image_id": image_id,
                    "box": jitter(rng, box, 8.0),
                    "score": round(rng.uniform(0.5, 0.9), 4),
                    "class_id": cid,
                })
            else:
                bg_lines.append({"image_id": image_id, "box": jitter(rng, box, 15.0)})
        # one spurious background proposal per image, away from any object
        bg_lines.append({
            "image_id": image_id,
            "box": jitter(rng, [600, 430, 636, 476], 2.0),
        })

    for name, lines in (("dets_kn.jsonl", kn_lines),
                        ("dets_bg.jsonl", bg_lines),
                        ("dets_gd.jsonl", gd_lines)):
        with open(os.path.join(OUT, name), "w") as fh:
            for rec in lines:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    config = {
        "vocab_path": "vocab.json",
        "templates_path": "templates.json",
        "dets_kn_path": "dets_kn.jsonl",
        "dets_bg_path": "dets_bg.jsonl",
        "dets_gd_path": "dets_gd.jsonl",
        "gt_path": "gt.json",
        "image_root": ".",
        "cache_dir": "cache",
        "out_dir": "out",
        "backend": "stub://?dim=48&seed=7",
        "mode": "LVIS",
        "temperature": 0.01,
    }
    with open(os.path.join(OUT, "config.json"), "w") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    print(f"fixture written to {OUT}")


if __name__ == "__main__":
    main()
