import math

import numpy as np
import pytest

import reference_eval as ref
from conftest import random_scene, scene_to_engine
from fusedet.detections_io import GroundTruthBox, GroundTruthSet, ImageInfo
from fusedet.errors import FusedetError
from fusedet.evaluation import (
    COCO_IOU_THRESHOLDS,
    MatchRecord,
    average_precision,
    greedy_match,
    grouped_map,
    localization_recall,
)
from fusedet.geometry import BBox, LabeledDetection, SourceTag
from fusedet.vocab import ClassEntry, ClassVocabulary


def det(box, score, class_id=0):
    return LabeledDetection(box=BBox(*box), class_id=class_id, score=score, source=SourceTag.KN)


def simple_gt(boxes_by_image, size=100):
    gt = GroundTruthSet()
    for image_id, rows in boxes_by_image.items():
        gt.images[image_id] = ImageInfo(image_id, size, size)
        gt.annotations[image_id] = [
            GroundTruthBox(box=BBox(*b), class_id=c) for b, c in rows
        ]
    return gt


def two_class_vocab():
    return ClassVocabulary((
        ClassEntry(0, "class_0000", ("class_0000",), True),
        ClassEntry(1, "class_0001", ("class_0001",), False),
    ))


class TestGreedyMatch:
    def test_exact_hit(self):
        records = greedy_match([(BBox(0, 0, 10, 10), 0.9)], [BBox(0, 0, 10, 10)], 0.5)
        assert records[0].gt_index == 0
        assert records[0].iou == 1.0

    def test_single_match_rule(self):
        dets = [(BBox(0, 0, 10, 10), 0.9), (BBox(0, 0, 10, 10), 0.8)]
        records = greedy_match(dets, [BBox(0, 0, 10, 10)], 0.5)
        assert records[0].gt_index == 0
        assert records[1].gt_index is None

    def test_greedy_takes_best_not_global_optimum(self):
        # A overlaps G1 at 0.6 and G2 at 0.55; B overlaps G1 at 0.6 only.
        g1 = BBox(0, 0, 10, 1)
        g2 = BBox(5.403225806451613, 0, 15.403225806451613, 1)
        a = BBox(2.5, 0, 12.5, 1)
        b = BBox(-2.5, 0, 7.5, 1)
        assert math.isclose(ref.ref_iou(a.as_tuple(), g1.as_tuple()), 0.6, rel_tol=1e-9)
        assert math.isclose(ref.ref_iou(a.as_tuple(), g2.as_tuple()), 0.55, rel_tol=1e-9)
        assert math.isclose(ref.ref_iou(b.as_tuple(), g1.as_tuple()), 0.6, rel_tol=1e-9)
        assert ref.ref_iou(b.as_tuple(), g2.as_tuple()) < 0.5

        records = greedy_match([(a, 0.9), (b, 0.8)], [g1, g2], 0.5)
        assert records[0].gt_index == 0
        assert records[1].gt_index is None

        flags = ref.ref_match_flags(
            [
                {"box": a.as_tuple(), "score": 0.9, "image_id": 1},
                {"box": b.as_tuple(), "score": 0.8, "image_id": 1},
            ],
            {1: [{"box": g1.as_tuple()}, {"box": g2.as_tuple()}]},
            0.5,
        )
        assert flags == [True, False]

    def test_no_gts(self):
        records = greedy_match([(BBox(0, 0, 1, 1), 0.5)], [], 0.5)
        assert records[0].gt_index is None


class TestAveragePrecision:
    def rec(self, matched, score):
        return MatchRecord(0, 0 if matched else None, 1.0 if matched else 0.0, score)

    def test_perfect(self):
        records = [self.rec(True, 0.9), self.rec(True, 0.8)]
        assert average_precision(records, n_gt=2) == 1.0

    def test_zero_tp(self):
        records = [self.rec(False, 0.9)]
        assert average_precision(records, n_gt=3) == 0.0

    def test_tp_then_fp_half_gt(self):
        records = [self.rec(True, 0.9), self.rec(False, 0.8)]
        ap = average_precision(records, n_gt=2)
        assert abs(ap - 51 / 101) < 1e-12

    def test_no_gt_excluded(self):
        assert average_precision([self.rec(False, 0.9)], n_gt=0) is None

    def test_no_dets(self):
        assert average_precision([], n_gt=2) == 0.0


class TestGroupedMap:
    def test_perfect_toy_scene(self):
        gt = simple_gt({1: [((0, 0, 10, 10), 0), ((20, 20, 40, 40), 1)]})
        dets = {1: [det((0, 0, 10, 10), 0.9, 0), det((20, 20, 40, 40), 0.8, 1)]}
        report = grouped_map(dets, gt, two_class_vocab(), max_dets=100)
        assert report.ap_all == 1.0
        assert report.ap_known == 1.0
        assert report.ap_novel == 1.0
        assert report.recall_05 == 1.0
        assert report.pred_count == 2

    def test_known_only_predictions_zero_novel_ap(self):
        gt = simple_gt({1: [((0, 0, 10, 10), 0), ((20, 20, 40, 40), 1)]})
        dets = {1: [det((0, 0, 10, 10), 0.9, 0)]}
        report = grouped_map(dets, gt, two_class_vocab(), max_dets=100)
        assert report.ap_novel == 0.0
        assert report.ap_known == 1.0

    def test_all_mean_is_class_weighted(self):
        vocab = ClassVocabulary((
            ClassEntry(0, "a", ("a",), True),
            ClassEntry(1, "b", ("b",), False),
            ClassEntry(2, "c", ("c",), False),
        ))
        gt = simple_gt({
            1: [((0, 0, 10, 10), 0), ((20, 20, 30, 30), 1), ((50, 50, 60, 60), 2)]
        })
        dets = {1: [det((0, 0, 10, 10), 0.9, 0), det((50, 50, 60, 60), 0.8, 2)]}
        report = grouped_map(dets, gt, vocab, max_dets=10)
        assert report.ap_known == 1.0
        assert report.ap_novel == 0.5
        assert abs(report.ap_all - 2 / 3) < 1e-12  # not mean(1.0, 0.5)

    def test_class_without_gt_excluded_not_zeroed(self):
        gt = simple_gt({1: [((0, 0, 10, 10), 0)]})
        dets = {1: [det((0, 0, 10, 10), 0.9, 0), det((40, 40, 50, 50), 0.8, 1)]}
        report = grouped_map(dets, gt, two_class_vocab(), max_dets=10)
        assert report.per_class[1].ap is None
        assert report.ap_all == 1.0

    def test_max_dets_truncation(self):
        gt = simple_gt({1: [((0, 0, 10, 10), 0)]})
        dets = {1: [det((40, 40, 50, 50), 0.99, 0), det((0, 0, 10, 10), 0.5, 0)]}
        full = grouped_map(dets, gt, two_class_vocab(), max_dets=2)
        trimmed = grouped_map(dets, gt, two_class_vocab(), max_dets=1)
        assert full.ap_known > 0.0
        assert trimmed.ap_known == 0.0  # only the high-scoring miss survives

    def test_unknown_image_ids_noted(self):
        gt = simple_gt({1: [((0, 0, 10, 10), 0)]})
        dets = {1: [det((0, 0, 10, 10), 0.9, 0)], 99: [det((0, 0, 5, 5), 0.4, 0)]}
        report = grouped_map(dets, gt, two_class_vocab(), max_dets=10)
        assert any("99" in note for note in report.notes)
        assert report.pred_count == 1

    def test_unknown_class_id_rejected(self):
        gt = simple_gt({1: [((0, 0, 10, 10), 0)]})
        dets = {1: [det((0, 0, 10, 10), 0.9, 7)]}
        with pytest.raises(FusedetError, match="class id 7"):
            grouped_map(dets, gt, two_class_vocab(), max_dets=10)

    def test_empty_predictions_note(self):
        gt = simple_gt({1: [((0, 0, 10, 10), 0)]})
        report = grouped_map({}, gt, two_class_vocab(), max_dets=10)
        assert report.ap_all == 0.0
        assert report.recall_05 == 0.0
        assert any("no predictions" in note for note in report.notes)

    def test_ap_monotone_in_iou_threshold(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            dets_d, gts_d = random_scene(rng, n_classes=3, n_images=2)
            dets, gt, vocab = scene_to_engine(dets_d, gts_d, 3, known_classes={0})
            per_thr = []
            for thr in COCO_IOU_THRESHOLDS:
                report = grouped_map(dets, gt, vocab, max_dets=50, iou_thresholds=[thr])
                per_thr.append(report.ap_all)
            assert all(a >= b - 1e-12 for a, b in zip(per_thr, per_thr[1:]))

    def test_duplicating_detection_never_increases_ap(self):
        rng = np.random.default_rng(22)
        for _ in range(10):
            dets_d, gts_d = random_scene(rng, n_classes=3, n_images=2)
            if not any(dets_d.values()):
                continue
            dets, gt, vocab = scene_to_engine(dets_d, gts_d, 3, known_classes={0})
            base = grouped_map(dets, gt, vocab, max_dets=100)
            image_id = next(i for i, rows in dets.items() if rows)
            dets[image_id] = dets[image_id] + [dets[image_id][0]]
            doubled = grouped_map(dets, gt, vocab, max_dets=100)
            assert doubled.ap_all <= base.ap_all + 1e-12


class TestLocalizationRecall:
    def test_exact_duplicates_full_recall(self):
        gt = simple_gt({1: [((0, 0, 10, 10), 0), ((20, 20, 40, 40), 1)]})
        dets = {1: [det((0, 0, 10, 10), 0.9, 1), det((20, 20, 40, 40), 0.8, 0)]}
        result = localization_recall(dets, gt, 0.5)
        assert result.recall == 1.0  # labels are ignored
        assert (result.tp, result.n_gt, result.n_pred) == (2, 2, 2)

    def test_no_gt_gives_none(self):
        gt = GroundTruthSet()
        gt.images[1] = ImageInfo(1, 10, 10)
        gt.annotations[1] = []
        result = localization_recall({1: [det((0, 0, 5, 5), 0.9, 0)]}, gt, 0.5)
        assert result.recall is None

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            localization_recall({}, GroundTruthSet(), 0.0)

    def test_strict_vs_inclusive(self):
        # IoU is exactly 0.5
        gt = simple_gt({1: [((0, 0, 2, 1), 0)]})
        dets = {1: [det((0, 0, 1, 1), 0.9, 0)]}
        assert localization_recall(dets, gt, 0.5).tp == 1
        assert localization_recall(dets, gt, 0.5, strict=True).tp == 0


class TestOracleEquivalence:
    def test_random_scenes_match_bruteforce(self):
        rng = np.random.default_rng(99)
        for _ in range(30):
            n_classes = int(rng.integers(1, 6))
            known = {c for c in range(n_classes) if rng.random() < 0.5} | {0}
            dets_d, gts_d = random_scene(rng, n_classes=n_classes)
            dets, gt, vocab = scene_to_engine(dets_d, gts_d, n_classes, known)
            max_dets = int(rng.integers(1, 25))

            report = grouped_map(dets, gt, vocab, max_dets=max_dets)
            expected = ref.ref_grouped_map(
                dets_d, gts_d, [(c, c in known) for c in range(n_classes)], max_dets
            )
            assert abs(report.ap_all - expected["ap_all"]) < 1e-9
            assert abs(report.ap_known - expected["ap_known"]) < 1e-9
            assert abs(report.ap_novel - expected["ap_novel"]) < 1e-9
            assert abs(report.ap50_all - expected["ap50_all"]) < 1e-9
            for pc in report.per_class:
                exp = expected["per_class"][pc.class_id]
                if exp is None:
                    assert pc.ap is None
                else:
                    assert pc.ap is not None and abs(pc.ap - exp) < 1e-9

            got = localization_recall(dets, gt, 0.5)
            exp_recall, exp_tp, exp_gt, exp_pred = ref.ref_recall(dets_d, gts_d, 0.5)
            assert got.tp == exp_tp
            assert got.n_gt == exp_gt
            assert got.n_pred == exp_pred
            if exp_recall is None:
                assert got.recall is None
            else:
                assert abs(got.recall - exp_recall) < 1e-12
