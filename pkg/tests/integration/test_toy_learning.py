"""Slow end-to-end learning runs on the toy synthetic benchmark.

These train the toy profile from scratch on CPU and take from minutes (single
clip overfit) to most of an hour (200/50 split). Set SSA2D_LEARNING_TEST=1 to
run them.
"""

from __future__ import annotations

import os
import sys
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory

PROJECT_ROOT = Path(__file__).resolve().parents[2]
SRC_DIR = PROJECT_ROOT / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from ssa2d.config import parse_config_dict  # type: ignore[import]
from ssa2d.metrics import evaluate_joint  # type: ignore[import]
from ssa2d.synth import clip_filename, load_clip, read_manifest, valid_pairs, write_dataset  # type: ignore[import]
from ssa2d.trainer import evaluate_dataset, infer, load_checkpoint, train  # type: ignore[import]


class ToyLearningTests(unittest.TestCase):
    def setUp(self) -> None:
        if os.environ.get("SSA2D_LEARNING_TEST") != "1":
            self.skipTest("Set SSA2D_LEARNING_TEST=1 to run the toy learning runs")
        self._tmp = TemporaryDirectory()
        self.root = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_single_clip_overfit(self) -> None:
        config = parse_config_dict({
            "seed": 0,
            "schedule": {"phase1_epochs": 500, "phase2_epochs": 0, "batch_size": 1, "max_steps": 500},
        })
        data = self.root / "one"
        write_dataset(config.synth, data, 1, seed=0)
        result = train(config, data, self.root / "run")

        self.assertEqual(result.steps, 500)
        first, last = result.entries[0].total, result.entries[-1].total
        self.assertLessEqual(last, 0.1 * first, f"loss went from {first} to {last}")

        clip_id, clip_seed = read_manifest(data)[0]
        clip = load_clip(data / clip_filename(clip_id), seed=clip_seed)
        model, _ = load_checkpoint(result.checkpoint)
        prediction = infer(model, clip.video)
        joint = evaluate_joint(prediction.actor, prediction.action, clip.actor_gt, clip.action_gt, valid_pairs())
        self.assertGreaterEqual(joint.glo, 0.95)

    def test_scaled_down_benchmark(self) -> None:
        config = parse_config_dict({"seed": 0})
        train_dir, test_dir = self.root / "train", self.root / "test"
        write_dataset(config.synth, train_dir, 200, seed=0)
        write_dataset(config.synth, test_dir, 50, seed=1)
        result = train(config, train_dir, self.root / "run")
        self.assertLessEqual(result.steps, 2000)

        model, _ = load_checkpoint(result.checkpoint)
        report = evaluate_dataset(model, test_dir, config)
        self.assertGreaterEqual(report.tasks["joint"].miou, 0.60)
        self.assertGreaterEqual(report.tasks["actor"].glo, 0.95)


if __name__ == "__main__":
    unittest.main()
