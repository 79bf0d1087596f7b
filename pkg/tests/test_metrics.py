"""Tests for the pixel metrics (glo, ave, mIoU) and their reports."""

from __future__ import annotations

import math
import sys
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
import pytest
import yaml

PROJECT_ROOT = Path(__file__).resolve().parents[1]
SRC_DIR = PROJECT_ROOT / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from ssa2d.metrics import (  # type: ignore[import]
    DataError,
    MetricAccumulator,
    confusion_matrix,
    evaluate,
    evaluate_joint,
    metrics_from_confusion,
    pair_labels,
    parse_report_lines,
    report_from_mapping,
    summarize,
)

PAIRS = [(a, b) for a in (1, 2, 3) for b in (1, 2, 3, 4)]


def counting_oracle(pred, gt, num_classes, include_background):
    """Per-pixel counting without a confusion matrix."""

    pred = pred.reshape(-1)
    gt = gt.reshape(-1)
    glo = sum(int(p == g) for p, g in zip(pred, gt)) / len(gt)
    accuracies, ious = [], []
    for k in range(num_classes):
        in_gt = sum(int(g == k) for g in gt)
        in_pred = sum(int(p == k) for p in pred)
        hit = sum(int(p == k and g == k) for p, g in zip(pred, gt))
        if in_gt:
            accuracies.append(hit / in_gt)
        if (in_gt or in_pred) and (include_background or k > 0):
            ious.append(hit / (in_gt + in_pred - hit))
    return glo, sum(accuracies) / len(accuracies), (sum(ious) / len(ious)) if ious else None


@pytest.mark.parametrize("seed", range(50))
def test_matches_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    classes = int(rng.integers(2, 7))
    shape = (2, int(rng.integers(1, 6)), int(rng.integers(1, 6)))
    gt = rng.integers(0, classes, size=shape)
    pred = np.where(rng.uniform(size=shape) < 0.6, gt, rng.integers(0, classes, size=shape))
    for include_background in (False, True):
        glo, ave, miou = counting_oracle(pred, gt, classes, include_background)
        metrics = evaluate(pred, gt, classes, include_background=include_background)
        assert metrics.glo == pytest.approx(glo, abs=1e-12)
        assert metrics.ave == pytest.approx(ave, abs=1e-12)
        if miou is not None:
            assert metrics.miou == pytest.approx(miou, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_scores_ignore_class_relabeling(seed):
    rng = np.random.default_rng(100 + seed)
    classes = int(rng.integers(3, 7))
    gt = rng.integers(0, classes, size=(2, 5, 5))
    pred = np.where(rng.uniform(size=gt.shape) < 0.5, gt, rng.integers(0, classes, size=gt.shape))
    anything = rng.permutation(classes)
    before = evaluate(pred, gt, classes, include_background=True)
    after = evaluate(anything[pred], anything[gt], classes, include_background=True)
    assert after.glo == before.glo
    assert after.ave == pytest.approx(before.ave, abs=1e-12)
    assert after.miou == pytest.approx(before.miou, abs=1e-12)

    # background stays class 0 when it is excluded from mIoU
    foreground = np.concatenate([[0], 1 + rng.permutation(classes - 1)])
    before = evaluate(pred, gt, classes)
    after = evaluate(foreground[pred], foreground[gt], classes)
    assert after.glo == before.glo
    assert after.miou == pytest.approx(before.miou, abs=1e-12)


class WorkedExampleTests(unittest.TestCase):
    def setUp(self) -> None:
        self.gt = np.array([0, 1, 1, 2])
        self.pred = np.array([0, 1, 2, 2])

    def test_scores(self) -> None:
        metrics = evaluate(self.pred, self.gt, 3)
        self.assertAlmostEqual(metrics.glo, 0.75)
        self.assertAlmostEqual(metrics.ave, 2.5 / 3)
        np.testing.assert_allclose(metrics.class_iou, [1.0, 0.5, 0.5])
        self.assertAlmostEqual(metrics.miou, 0.5)
        with_background = evaluate(self.pred, self.gt, 3, include_background=True)
        self.assertAlmostEqual(with_background.miou, 2.0 / 3)

    def test_confusion_is_indexed_gt_then_pred(self) -> None:
        confusion = confusion_matrix(self.pred, self.gt, 3)
        np.testing.assert_array_equal(confusion, [[1, 0, 0], [0, 1, 1], [0, 0, 1]])

    def test_absent_classes_are_skipped(self) -> None:
        metrics = evaluate(self.pred, self.gt, 5)
        self.assertTrue(math.isnan(metrics.class_iou[4]))
        self.assertAlmostEqual(metrics.ave, 2.5 / 3)
        self.assertAlmostEqual(metrics.miou, 0.5)

    def test_perfect_prediction(self) -> None:
        metrics = evaluate(self.gt, self.gt, 3)
        self.assertEqual((metrics.glo, metrics.ave, metrics.miou), (1.0, 1.0, 1.0))

    def test_background_only_scene(self) -> None:
        empty = np.zeros(6, dtype=np.int64)
        self.assertEqual(evaluate(empty, empty, 3).miou, 1.0)
        wrong = empty.copy()
        wrong[0] = 1
        metrics = evaluate(wrong, empty, 3)
        self.assertEqual(metrics.miou, 0.0)
        self.assertAlmostEqual(metrics.glo, 5 / 6)


class ValidationTests(unittest.TestCase):
    def test_out_of_range_labels(self) -> None:
        with self.assertRaises(DataError):
            evaluate(np.array([0, 3]), np.array([0, 1]), 3)
        with self.assertRaises(DataError):
            evaluate(np.array([0, 1]), np.array([-1, 1]), 3)

    def test_fractional_labels(self) -> None:
        with self.assertRaises(DataError):
            evaluate(np.array([0.5, 1.0]), np.array([0, 1]), 3)

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(DataError):
            evaluate(np.zeros(3, dtype=int), np.zeros(4, dtype=int), 2)

    def test_no_pixels(self) -> None:
        with self.assertRaises(DataError):
            metrics_from_confusion("actor", np.zeros((3, 3)))


class JointTests(unittest.TestCase):
    def test_pair_labels(self) -> None:
        actor = np.array([0, 1, 3, 0, 2])
        action = np.array([0, 1, 4, 2, 0])
        joint = pair_labels(actor, action, PAIRS)
        invalid = len(PAIRS) + 1
        np.testing.assert_array_equal(joint, [0, 1, 12, invalid, invalid])
        with self.assertRaises(DataError):
            pair_labels(actor, action, PAIRS, strict=True)

    def test_joint_needs_both_labels(self) -> None:
        gt_actor = np.array([1, 1, 2, 0])
        gt_action = np.array([1, 2, 3, 0])
        pred_actor = np.array([1, 1, 3, 0])
        pred_action = np.array([1, 3, 3, 0])
        metrics = evaluate_joint(pred_actor, pred_action, gt_actor, gt_action, PAIRS)
        self.assertAlmostEqual(metrics.glo, 0.5)
        self.assertEqual(metrics.num_classes, len(PAIRS) + 1)

    def test_invalid_predicted_pair_is_an_error(self) -> None:
        gt_actor = np.array([1, 0])
        gt_action = np.array([1, 0])
        metrics = evaluate_joint(np.array([1, 1]), np.array([1, 0]), gt_actor, gt_action, PAIRS)
        self.assertAlmostEqual(metrics.glo, 0.5)
        self.assertAlmostEqual(metrics.class_accuracy[0], 0.0)

    def test_oracle_scores_one(self) -> None:
        rng = np.random.default_rng(3)
        actor = rng.integers(0, 4, size=(2, 4, 4))
        action = np.where(actor > 0, rng.integers(1, 5, size=actor.shape), 0)
        metrics = evaluate_joint(actor, action, actor, action, PAIRS)
        self.assertEqual((metrics.glo, metrics.ave, metrics.miou), (1.0, 1.0, 1.0))


class TopKTests(unittest.TestCase):
    def test_most_frequent_classes(self) -> None:
        gt = np.array([1, 1, 1, 2, 2, 3, 0, 0])
        pred = np.array([1, 1, 0, 2, 0, 3, 0, 0])
        metrics = evaluate(pred, gt, 4, top_k=2)
        self.assertEqual(metrics.top_k_classes, (1, 2))
        self.assertAlmostEqual(metrics.top_k_ave, (2 / 3 + 1 / 2) / 2)
        self.assertAlmostEqual(metrics.top_k_miou, (2 / 3 + 1 / 2) / 2)

    def test_ties_prefer_lower_class(self) -> None:
        gt = np.array([1, 2, 3])
        metrics = evaluate(gt, gt, 4, top_k=1)
        self.assertEqual(metrics.top_k_classes, (1,))


class ReportTests(unittest.TestCase):
    def _report(self):
        accumulator = MetricAccumulator(4, 5, PAIRS, top_k=2)
        rng = np.random.default_rng(8)
        for _ in range(3):
            actor = rng.integers(0, 4, size=(2, 3, 3))
            action = np.where(actor > 0, rng.integers(1, 5, size=actor.shape), 0)
            noisy = np.where(rng.uniform(size=actor.shape) < 0.2, 0, actor)
            accumulator.update(noisy, np.where(noisy > 0, action, 0), actor, action)
        return accumulator.report()

    def test_accumulator_equals_single_pass(self) -> None:
        accumulator = MetricAccumulator(3, 3, [(1, 1), (2, 2)])
        gt = np.array([[0, 1, 2, 1], [2, 2, 0, 1]])
        pred = np.array([[0, 1, 1, 1], [2, 0, 0, 1]])
        for row in range(2):
            accumulator.update(pred[row], pred[row], gt[row], gt[row])
        whole = evaluate(pred, gt, 3)
        report = accumulator.report()
        self.assertEqual(report.clips, 2)
        self.assertAlmostEqual(report.tasks["actor"].glo, whole.glo)
        self.assertAlmostEqual(report.tasks["actor"].miou, whole.miou)

    def test_empty_accumulator(self) -> None:
        with self.assertRaises(DataError):
            MetricAccumulator(3, 3, []).report()

    def test_lines_round_trip(self) -> None:
        report = self._report()
        text = report.to_lines()
        self.assertTrue(text.startswith("# "))
        self.assertIn("background excluded", text)
        values = parse_report_lines(text)
        self.assertEqual(values["clips"], "3")
        scores = report_from_mapping(values)
        self.assertEqual(list(scores), ["actor", "action", "joint"])
        self.assertAlmostEqual(scores["joint"]["miou"], report.tasks["joint"].miou, places=7)
        with self.assertRaises(DataError):
            parse_report_lines("glo 1.0")

    def test_write_produces_yaml_documents(self) -> None:
        report = self._report()
        with TemporaryDirectory() as tmpdir:
            lines_path, yaml_path = report.write(Path(tmpdir) / "eval" / "report.txt")
            self.assertTrue(lines_path.is_file())
            documents = list(yaml.safe_load_all(yaml_path.read_text(encoding="utf-8")))
        self.assertEqual([doc["task"] for doc in documents], ["actor", "action", "joint"])
        self.assertEqual(len(documents[0]["classes"]), 4)
        self.assertIn("top_k", documents[0])

    def test_summary_mentions_every_task(self) -> None:
        summary = summarize(self._report())
        for task in ("actor:", "action:", "joint:"):
            self.assertIn(task, summary)


if __name__ == "__main__":
    unittest.main()
