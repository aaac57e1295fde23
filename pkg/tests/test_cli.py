import hashlib
import json
import os

import pytest

from fusedet.cli import main
from fusedet.config import PipelineConfig, load_config, save_config
from fusedet.errors import ParseError


def run_cli(*args):
    return main([str(a) for a in args])


def config_path(fixture_dir):
    return str(fixture_dir / "config.json")


def file_hash(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestConfig:
    def test_roundtrip(self, tmp_path):
        config = PipelineConfig(
            vocab_path="/abs/vocab.json",
            templates_path="/abs/templates.json",
            dets_kn_path="/abs/kn.jsonl",
            dets_bg_path="/abs/bg.jsonl",
            dets_gd_path="/abs/gd.jsonl",
            gt_path="/abs/gt.json",
            image_root="/abs/images",
            cache_dir="/abs/cache",
            out_dir="/abs/out",
            mode="COCO_OVD",
            k_final=42,
            temperature=0.05,
            use_srm=False,
            workers=3,
        )
        path = str(tmp_path / "config.json")
        save_config(path, config)
        assert load_config(path) == config

    def test_relative_paths_resolve_against_file(self, tmp_path):
        (tmp_path / "config.json").write_text(json.dumps({"vocab_path": "sub/vocab.json"}))
        config = load_config(str(tmp_path / "config.json"))
        assert config.vocab_path == str(tmp_path / "sub" / "vocab.json")

    def test_mode_fixes_default_k(self):
        assert PipelineConfig(mode="LVIS").k == 300
        assert PipelineConfig(mode="COCO_OVD").k == 100
        assert PipelineConfig(mode="COCO_OVD", k_final=7).k == 7

    def test_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig(mode="bogus")
        with pytest.raises(ValueError):
            PipelineConfig(temperature=0.0)
        with pytest.raises(ValueError):
            PipelineConfig(k_final=0)
        with pytest.raises(ValueError):
            PipelineConfig(workers=0)

    def test_unknown_fields_rejected(self, tmp_path):
        (tmp_path / "config.json").write_text(json.dumps({"nope": 1}))
        with pytest.raises(ParseError, match="unknown config fields"):
            load_config(str(tmp_path / "config.json"))


class TestBuildMatrix:
    def test_cache_hit_on_rerun(self, pipeline_fixture, caplog):
        assert run_cli("build-matrix", "--config", config_path(pipeline_fixture)) == 0
        matrix_file = pipeline_fixture / "cache" / "class_matrix.bin"
        assert matrix_file.exists()
        first = file_hash(matrix_file)
        with caplog.at_level("INFO", logger="fusedet"):
            assert run_cli("build-matrix", "--config", config_path(pipeline_fixture)) == 0
        assert any("cache=hit" in r.message for r in caplog.records)
        assert file_hash(matrix_file) == first

    def test_vocabulary_edit_triggers_rebuild(self, pipeline_fixture, caplog):
        run_cli("build-matrix", "--config", config_path(pipeline_fixture))
        vocab_file = pipeline_fixture / "vocab.json"
        doc = json.loads(vocab_file.read_text())
        doc["classes"][0]["synonyms"] = ["person", "human", "pedestrian"]
        vocab_file.write_text(json.dumps(doc))
        with caplog.at_level("WARNING", logger="fusedet"):
            assert run_cli("build-matrix", "--config", config_path(pipeline_fixture)) == 0
        assert any("cache=stale" in r.message for r in caplog.records)

    def test_no_saeg_uses_separate_cache_key(self, pipeline_fixture, caplog):
        run_cli("build-matrix", "--config", config_path(pipeline_fixture))
        with caplog.at_level("WARNING", logger="fusedet"):
            run_cli("build-matrix", "--config", config_path(pipeline_fixture), "--no-saeg")
        assert any("cache=stale" in r.message for r in caplog.records)


class TestRun:
    def test_determinism_across_runs_and_workers(self, pipeline_fixture):
        cfg = config_path(pipeline_fixture)
        final = pipeline_fixture / "out" / "final.jsonl"
        hashes = []
        for workers in (1, 3):
            assert run_cli("run", "--config", cfg, "--workers", workers) == 0
            hashes.append(file_hash(final))
        assert len(set(hashes)) == 1

    def test_counts_add_up_in_fused_dump(self, pipeline_fixture):
        cfg = config_path(pipeline_fixture)
        assert run_cli("run", "--config", cfg, "--dump-fused") == 0
        counts_lines = {}
        det_lines = {}
        with open(pipeline_fixture / "out" / "fused.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                if "counts" in rec:
                    counts_lines[rec["image_id"]] = rec["counts"]
                else:
                    det_lines.setdefault(rec["image_id"], []).append(rec)
        for image_id, counts in counts_lines.items():
            assert counts["n_kn"] + counts["n_bg"] + counts["n_gd"] == len(det_lines[image_id])

    def test_k_flag_truncates(self, pipeline_fixture):
        cfg = config_path(pipeline_fixture)
        assert run_cli("run", "--config", cfg, "--k", 2) == 0
        per_image = {}
        with open(pipeline_fixture / "out" / "final.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                per_image[rec["image_id"]] = per_image.get(rec["image_id"], 0) + 1
        assert per_image and all(v <= 2 for v in per_image.values())

    def test_per_image_failure_recorded_and_run_continues(self, pipeline_fixture, monkeypatch):
        import fusedet.cli as cli_mod
        from fusedet.errors import BackendError

        real_refine = cli_mod.refine

        def flaky_refine(pool, image_ref, backend, k, **kwargs):
            if image_ref == "img_000002.jpg":
                raise BackendError("segmenter crashed")
            return real_refine(pool, image_ref, backend, k, **kwargs)

        monkeypatch.setattr(cli_mod, "refine", flaky_refine)
        cfg = config_path(pipeline_fixture)
        assert run_cli("run", "--config", cfg) == 1
        errors = json.loads((pipeline_fixture / "out" / "run_errors.json").read_text())
        assert set(errors) == {"2"}
        image_ids = set()
        with open(pipeline_fixture / "out" / "final.jsonl") as fh:
            for line in fh:
                image_ids.add(json.loads(line)["image_id"])
        assert image_ids == {1, 3}  # the healthy images still ran

    def test_no_sam_passes_boxes_through(self, pipeline_fixture):
        cfg = config_path(pipeline_fixture)
        assert run_cli("run", "--config", cfg, "--no-sam") == 0
        with open(pipeline_fixture / "out" / "final.jsonl") as fh:
            records = [json.loads(line) for line in fh]
        assert all(rec["sam_score"] is None for rec in records)
        source_boxes = set()
        for name in ("dets_kn.jsonl", "dets_bg.jsonl", "dets_gd.jsonl"):
            with open(pipeline_fixture / name) as fh:
                for line in fh:
                    source_boxes.add(tuple(json.loads(line)["box"]))
        assert all(tuple(rec["box"]) in source_boxes for rec in records)


class TestEval:
    def test_reports_written(self, pipeline_fixture):
        cfg = config_path(pipeline_fixture)
        run_cli("run", "--config", cfg)
        assert run_cli("eval", "--config", cfg) == 0
        report = json.loads((pipeline_fixture / "out" / "report.json").read_text())
        assert set(report) >= {"ap_novel", "ap_known", "ap_all", "recall_05", "per_class"}
        assert report["ap_novel"] > 0.0
        md = (pipeline_fixture / "out" / "report.md").read_text()
        assert "Novel AP" in md

    def test_coco_ovd_mode_emits_ap50_table(self, pipeline_fixture):
        cfg = config_path(pipeline_fixture)
        run_cli("run", "--config", cfg, "--mode", "COCO_OVD")
        assert run_cli("eval", "--config", cfg, "--mode", "COCO_OVD") == 0
        md = (pipeline_fixture / "out" / "report.md").read_text()
        assert "AP50" in md

    def test_empty_predictions(self, pipeline_fixture, capsys):
        cfg = config_path(pipeline_fixture)
        out_dir = pipeline_fixture / "out"
        os.makedirs(out_dir, exist_ok=True)
        (out_dir / "final.jsonl").write_text("")
        assert run_cli("eval", "--config", cfg) == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert report["ap_all"] == 0.0
        assert report["recall_05"] == 0.0
        assert any("no predictions" in n for n in report["notes"])

    def test_backend_env_override(self, pipeline_fixture, monkeypatch):
        cfg = config_path(pipeline_fixture)
        monkeypatch.setenv("FUSEDET_BACKEND", "stub://?dim=32&seed=1")
        assert run_cli("run", "--config", cfg) == 0
        matrix_file = pipeline_fixture / "cache" / "class_matrix.bin"
        assert matrix_file.exists()
        final = (pipeline_fixture / "out" / "final.jsonl").read_text()
        assert final  # env-selected stub still produces predictions
