"""Command-line entry point: build-matrix, run, eval.

    fusedet build-matrix --config pipeline.json
    fusedet run --config pipeline.json --workers 4
    fusedet eval --config pipeline.json

Stage switches (--no-gdino, --no-sam, --no-srm, --no-saeg,
--no-bg-labelling) bypass individual pipeline components for ablations.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

from fusedet import __version__
from fusedet.backends import StubContext, open_backend
from fusedet.config import MODE_DEFAULT_K, PipelineConfig, load_config
from fusedet.detections_io import (
    load_detections,
    load_ground_truth,
    load_predictions,
    write_predictions,
)
from fusedet.errors import FusedetError
from fusedet.evaluation import grouped_map, write_report_json, write_report_md
from fusedet.fusion import class_nms, label_and_fuse_image
from fusedet.geometry import SourceTag
from fusedet.refine import refine
from fusedet.vocab import load_templates, load_vocabulary
from fusedet.zeroshot import (
    build_class_matrix,
    load_class_matrix,
    matrix_cache_key,
    save_class_matrix,
)

log = logging.getLogger("fusedet")

BACKEND_ENV = "FUSEDET_BACKEND"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusedet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"fusedet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--backend", help="backend endpoint (tcp://host:port or stub://)")
        p.add_argument("--mode", choices=sorted(MODE_DEFAULT_K), help="evaluation protocol")
        p.add_argument("--k", type=int, help="final top-K predictions per image")
        p.add_argument("--temperature", type=float, help="softmax temperature for labelling")
        p.add_argument("--workers", type=int, help="image-level parallelism")
        p.add_argument("--no-gdino", action="store_true", help="exclude the open-set detector dump")
        p.add_argument("--no-sam", action="store_true", help="skip segmentation-based box refinement")
        p.add_argument("--no-srm", action="store_true", help="skip mask-quality score reweighting")
        p.add_argument("--no-saeg", action="store_true",
                       help="single prompt, primary name only for the text matrix")
        p.add_argument("--no-bg-labelling", action="store_true",
                       help="drop background boxes instead of zero-shot labelling them")
        p.add_argument("-v", "--verbose", action="store_true")

    p_matrix = sub.add_parser("build-matrix", help="build and cache the class-text matrix")
    add_common(p_matrix)
    p_matrix.set_defaults(func=cmd_build_matrix)

    p_run = sub.add_parser("run", help="label, fuse and refine detections into final.jsonl")
    add_common(p_run)
    p_run.add_argument("--dump-fused", action="store_true",
                       help="also write the intermediate fused.jsonl")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="evaluate final.jsonl against ground truth")
    add_common(p_eval)
    p_eval.add_argument("--pred", help="predictions file (default: <out_dir>/final.jsonl)")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def _resolved_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config)
    overrides: dict[str, object] = {}
    env_backend = os.environ.get(BACKEND_ENV)
    if env_backend:
        overrides["backend"] = env_backend
    if args.backend:
        overrides["backend"] = args.backend
    if args.mode:
        overrides["mode"] = args.mode
    if args.k is not None:
        overrides["k_final"] = args.k
    if args.temperature is not None:
        overrides["temperature"] = args.temperature
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.no_gdino:
        overrides["use_gdino"] = False
    if args.no_sam:
        overrides["use_sam"] = False
    if args.no_srm:
        overrides["use_srm"] = False
    if args.no_saeg:
        overrides["use_saeg"] = False
    if args.no_bg_labelling:
        overrides["use_bg_labelling"] = False
    if getattr(args, "dump_fused", False):
        overrides["dump_fused"] = True
    return dataclasses.replace(config, **overrides)


def _load_inputs(config: PipelineConfig):
    vocab = load_vocabulary(config.vocab_path)
    templates = load_templates(config.templates_path)
    gt = load_ground_truth(config.gt_path, vocab)
    return vocab, templates, gt


def _ensure_matrix(config: PipelineConfig, vocab, templates, gt):
    """Load the cached matrix or (re)build it; returns (matrix, session)."""
    stub_context = StubContext(vocab=vocab, templates=templates, gt=gt)
    session = open_backend(config.backend, stub_context)
    key = matrix_cache_key(
        vocab.content_hash(),
        templates.content_hash(),
        getattr(session, "backend_id", "unknown"),
        config.use_saeg,
    )
    path = config.matrix_path
    if os.path.exists(path):
        try:
            matrix, header = load_class_matrix(path)
            if header.get("cache_key") == key:
                log.info("stage=build-matrix cache=hit path=%s", path)
                return matrix, session
            log.warning("stage=build-matrix cache=stale path=%s; rebuilding", path)
        except FusedetError as exc:
            log.warning("stage=build-matrix cache=unreadable (%s); rebuilding", exc)
    matrix = build_class_matrix(
        vocab, templates, session, synonym_averaging=config.use_saeg
    )
    os.makedirs(config.cache_dir, exist_ok=True)
    save_class_matrix(path, matrix, {"cache_key": key})
    log.info("stage=build-matrix cache=miss wrote=%s classes=%d dim=%d",
             path, matrix.num_classes, matrix.dim)
    return matrix, session


def cmd_build_matrix(args: argparse.Namespace) -> int:
    config = _resolved_config(args)
    vocab, templates, gt = _load_inputs(config)
    matrix, session = _ensure_matrix(config, vocab, templates, gt)
    session.close()
    print(f"class matrix ready: {config.matrix_path} ({matrix.num_classes} classes, d={matrix.dim})")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _resolved_config(args)
    vocab, templates, gt = _load_inputs(config)
    matrix, shared_session = _ensure_matrix(config, vocab, templates, gt)

    kn = load_detections(config.dets_kn_path, SourceTag.KN)
    bg = load_detections(config.dets_bg_path, SourceTag.BG) if config.use_bg_labelling else {}
    gd = load_detections(config.dets_gd_path, SourceTag.GD) if config.use_gdino else {}
    image_ids = sorted(set(kn) | set(bg) | set(gd))

    stub_context = StubContext(vocab=vocab, templates=templates, gt=gt)
    tcp = config.backend.startswith("tcp://")
    local = threading.local()
    extra_sessions: list = []
    lock = threading.Lock()

    def get_session():
        if not tcp:
            return shared_session
        session = getattr(local, "session", None)
        if session is None:
            session = open_backend(config.backend, stub_context)
            local.session = session
            with lock:
                extra_sessions.append(session)
        return session

    restrict = vocab.novel_ids if config.classify_novel_only else None

    def process(image_id: int):
        session = get_session()
        info = gt.images.get(image_id)
        pool = label_and_fuse_image(
            image_id,
            kn.get(image_id, ()),
            bg.get(image_id, ()),
            gd.get(image_id, ()),
            matrix=matrix,
            backend=session,
            image_info=info,
            temperature=config.temperature,
            context_pad=config.context_pad,
            use_gdino=config.use_gdino,
            use_bg_labelling=config.use_bg_labelling,
            confidence_mode=config.confidence_mode,
            restrict_to=restrict,
        )
        if config.class_nms_iou is not None:
            pool = class_nms(pool, config.class_nms_iou)
        image_size = (info.width, info.height) if info is not None else None
        refined = refine(
            pool,
            info.ref if info is not None else str(image_id),
            session,
            config.k,
            use_sam=config.use_sam,
            use_srm=config.use_srm,
            image_size=image_size,
        )
        log.info(
            "stage=refine image=%d n_kn=%d n_bg=%d n_gd=%d kept=%d",
            image_id, pool.n_kn, pool.n_bg, pool.n_gd, len(refined),
        )
        return pool, refined

    results: dict[int, tuple] = {}
    failures: dict[int, str] = {}
    if config.workers == 1:
        for image_id in image_ids:
            try:
                results[image_id] = process(image_id)
            except FusedetError as exc:
                failures[image_id] = str(exc)
                log.error("stage=run image=%d failed: %s", image_id, exc)
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool_exec:
            futures = {pool_exec.submit(process, i): i for i in image_ids}
            for fut, image_id in futures.items():
                try:
                    results[image_id] = fut.result()
                except FusedetError as exc:
                    failures[image_id] = str(exc)
                    log.error("stage=run image=%d failed: %s", image_id, exc)

    for session in extra_sessions:
        session.close()
    shared_session.close()

    os.makedirs(config.out_dir, exist_ok=True)
    final_path = os.path.join(config.out_dir, "final.jsonl")
    write_predictions(final_path, {i: r[1] for i, r in results.items()})
    if config.dump_fused:
        fused_path = os.path.join(config.out_dir, "fused.jsonl")
        with open(fused_path, "w", encoding="utf-8") as fh:
            for image_id in sorted(results):
                fused = results[image_id][0]
                for det in fused.detections:
                    fh.write(json.dumps({
                        "image_id": image_id,
                        "box": list(det.box.as_tuple()),
                        "score": det.score,
                        "class_id": det.class_id,
                        "source": det.source.value,
                    }, separators=(",", ":")) + "\n")
                fh.write(json.dumps({
                    "image_id": image_id,
                    "counts": {"n_kn": fused.n_kn, "n_bg": fused.n_bg, "n_gd": fused.n_gd},
                }, separators=(",", ":")) + "\n")
    if failures:
        errors_path = os.path.join(config.out_dir, "run_errors.json")
        with open(errors_path, "w", encoding="utf-8") as fh:
            json.dump({str(k): v for k, v in sorted(failures.items())}, fh, indent=2)
        print(f"run finished with {len(failures)} failed images; see {errors_path}",
              file=sys.stderr)
        return 1
    print(f"wrote {final_path} ({sum(len(r[1]) for r in results.values())} predictions, "
          f"{len(results)} images)")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _resolved_config(args)
    vocab = load_vocabulary(config.vocab_path)
    gt = load_ground_truth(config.gt_path, vocab)
    pred_path = args.pred or os.path.join(config.out_dir, "final.jsonl")
    dets = load_predictions(pred_path)
    report = grouped_map(dets, gt, vocab, max_dets=config.k)
    os.makedirs(config.out_dir, exist_ok=True)
    json_path = os.path.join(config.out_dir, "report.json")
    md_path = os.path.join(config.out_dir, "report.md")
    write_report_json(json_path, report)
    write_report_md(md_path, report, ap50_table=config.mode == "COCO_OVD")
    recall = f"{report.recall_05 * 100:.2f}%" if report.recall_05 is not None else "n/a"
    print(f"AP novel={report.ap_novel:.4f} known={report.ap_known:.4f} all={report.ap_all:.4f} "
          f"recall@0.5={recall}")
    for note in report.notes:
        print(f"note: {note}")
    print(f"wrote {json_path} and {md_path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FusedetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
