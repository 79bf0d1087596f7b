"""Tests for the ssa2d command-line surface and its exit codes."""

from __future__ import annotations

import io
import sys
import unittest
from contextlib import redirect_stdout
from pathlib import Path
from tempfile import TemporaryDirectory

import yaml

PROJECT_ROOT = Path(__file__).resolve().parents[1]
SRC_DIR = PROJECT_ROOT / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from ssa2d.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, run_from_cli  # type: ignore[import]
from ssa2d.container import read_container  # type: ignore[import]
from ssa2d.metrics import parse_report_lines, report_from_mapping  # type: ignore[import]
from ssa2d.synth import MANIFEST_NAME, clip_filename  # type: ignore[import]

TINY_CONFIG = {
    "seed": 1,
    "network": {
        "input_shape": [4, 16, 16],
        "encoder_channels": [4, 8],
        "decoder_channels": 4,
        "c_ap": 4,
    },
    "synth": {"size_min": 3, "size_max": 4, "speed_min": 1, "speed_max": 1},
    "schedule": {"phase1_epochs": 1, "phase2_epochs": 0, "batch_size": 2, "max_steps": 1},
}


class CliTests(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self.config = self.root / "tiny.yaml"
        self.config.write_text(yaml.safe_dump(TINY_CONFIG), encoding="utf-8")

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def _run(self, *argv: str) -> int:
        return run_from_cli([str(arg) for arg in argv])

    def _gen(self, name: str, clips: int) -> Path:
        out = self.root / name
        code = self._run("gen-data", "--config", self.config, "--out", out, "--clips", str(clips), "--seed", "3")
        self.assertEqual(code, EXIT_OK)
        return out

    def test_gen_data_with_zero_clips(self) -> None:
        out = self._gen("empty", 0)
        self.assertEqual((out / MANIFEST_NAME).read_text(encoding="utf-8"), "")

    def test_negative_clip_count_is_usage_error(self) -> None:
        code = self._run("gen-data", "--config", self.config, "--out", self.root / "x", "--clips", "-1")
        self.assertEqual(code, EXIT_USAGE)

    def test_missing_data_directory(self) -> None:
        code = self._run("train", "--config", self.config, "--data", self.root / "absent", "--out", self.root / "run")
        self.assertEqual(code, EXIT_USAGE)
        code = self._run("eval", "--oracle", "--config", self.config, "--data", self.root / "absent")
        self.assertEqual(code, EXIT_USAGE)

    def test_bad_override_is_usage_error(self) -> None:
        data = self._gen("data", 1)
        code = self._run("eval", "--oracle", "--config", self.config, "--data", data,
                         "--set", "network.bogus=1")
        self.assertEqual(code, EXIT_USAGE)

    def test_eval_without_checkpoint_is_usage_error(self) -> None:
        data = self._gen("data", 1)
        self.assertEqual(self._run("eval", "--config", self.config, "--data", data), EXIT_USAGE)

    def test_corrupt_clip_is_runtime_error(self) -> None:
        data = self._gen("data", 1)
        (data / clip_filename(0)).write_bytes(b"STC1garbage")
        code = self._run("eval", "--oracle", "--config", self.config, "--data", data)
        self.assertEqual(code, EXIT_RUNTIME)

    def test_oracle_eval_report(self) -> None:
        data = self._gen("data", 2)
        report = self.root / "oracle.txt"
        code = self._run("eval", "--oracle", "--config", self.config, "--data", data, "--report", report)
        self.assertEqual(code, EXIT_OK)
        scores = report_from_mapping(parse_report_lines(report.read_text(encoding="utf-8")))
        for task in ("actor", "action", "joint"):
            self.assertEqual(scores[task], {"glo": 1.0, "ave": 1.0, "miou": 1.0})
        self.assertTrue(Path(str(report) + ".yaml").is_file())

    def test_eval_prints_deltas_against_a_baseline(self) -> None:
        data = self._gen("data", 2)
        report = self.root / "oracle.txt"
        self.assertEqual(self._run("eval", "--oracle", "--config", self.config, "--data", data,
                                   "--report", report), EXIT_OK)
        captured = io.StringIO()
        with redirect_stdout(captured):
            code = self._run("eval", "--oracle", "--config", self.config, "--data", data, "--baseline", report)
        self.assertEqual(code, EXIT_OK)
        delta = captured.getvalue().splitlines()[-1].split()
        self.assertEqual(delta[0], "delta")
        self.assertEqual(len(delta), 10)
        self.assertIn("joint.miou=+0.0000", delta)

        garbage = self.root / "garbage.txt"
        garbage.write_text("not a report\n", encoding="utf-8")
        code = self._run("eval", "--oracle", "--config", self.config, "--data", data, "--baseline", garbage)
        self.assertEqual(code, EXIT_RUNTIME)
        code = self._run("eval", "--oracle", "--config", self.config, "--data", data,
                         "--baseline", self.root / "absent.txt")
        self.assertEqual(code, EXIT_USAGE)

    def test_train_eval_infer(self) -> None:
        data = self._gen("data", 2)
        run = self.root / "run"
        self.assertEqual(self._run("train", "--config", self.config, "--data", data, "--out", run), EXIT_OK)
        checkpoint = run / "model.stc"
        self.assertTrue(checkpoint.is_file())
        self.assertTrue((run / "train.log").read_text(encoding="utf-8").startswith("step=1 "))

        report = self.root / "eval.txt"
        self.assertEqual(self._run("eval", "--ckpt", checkpoint, "--data", data, "--report", report), EXIT_OK)
        self.assertIn("joint.miou=", report.read_text(encoding="utf-8"))

        out = self.root / "pred"
        code = self._run("infer", "--ckpt", checkpoint, "--input", data / clip_filename(0), "--out", out,
                         "--dump-frames")
        self.assertEqual(code, EXIT_OK)
        tensors = read_container(out / "prediction.stc")
        self.assertEqual(set(tensors), {"actor_pred", "action_pred", "mask_pred"})
        self.assertEqual(tensors["actor_pred"].shape, (4, 16, 16))
        frames = sorted(p.name for p in (out / "frames").iterdir())
        self.assertEqual(len(frames), 12)
        self.assertIn("actor_000.ppm", frames)
        self.assertTrue((out / "frames" / "mask_003.ppm").read_bytes().startswith(b"P6"))

    def test_infer_missing_checkpoint(self) -> None:
        code = self._run("infer", "--ckpt", self.root / "none.stc", "--input", self.root / "clip.stc",
                         "--out", self.root / "out")
        self.assertEqual(code, EXIT_USAGE)

    def test_bench_from_fresh_model(self) -> None:
        report = self.root / "bench.txt"
        code = self._run("bench", "--config", self.config, "--init", "--actors", "1,3", "--repeats", "1",
                         "--report", report)
        self.assertEqual(code, EXIT_OK)
        text = report.read_text(encoding="utf-8")
        self.assertTrue(text.startswith("# content_independent=true"))
        document = yaml.safe_load(Path(str(report) + ".yaml").read_text(encoding="utf-8"))
        self.assertEqual([row["actors"] for row in document["scenes"]], [1, 3])
        self.assertEqual(len({row["ops"] for row in document["scenes"]}), 1)

    def test_bench_rejects_bad_actor_list(self) -> None:
        code = self._run("bench", "--config", self.config, "--init", "--actors", "one,two")
        self.assertEqual(code, EXIT_USAGE)

    def test_ablate_writes_one_row_per_variant(self) -> None:
        data = self._gen("data", 2)
        out = self.root / "ablation"
        code = self._run("ablate", "--config", self.config, "--data", data, "--eval-data", data, "--out", out)
        self.assertEqual(code, EXIT_OK)
        rows = yaml.safe_load((out / "ablation.yaml").read_text(encoding="utf-8"))
        self.assertEqual([row["variant"] for row in rows],
                         ["full", "no_ap_infusion", "no_ssa_masking", "no_atrous", "no_multi_scale"])
        self.assertTrue(all(row["steps"] == 1 for row in rows))
        self.assertEqual(len((out / "ablation.txt").read_text(encoding="utf-8").splitlines()), 5)
        self.assertTrue((out / "no_atrous" / "model.stc").is_file())

    def test_ablation_flags_reach_the_config(self) -> None:
        args = build_parser().parse_args(["train", "--data", "d", "--out", "o", "--no-ssa-masking",
                                          "--no-atrous"])
        self.assertTrue(args.no_ssa_masking)
        self.assertTrue(args.no_atrous)
        self.assertFalse(args.no_ap_infusion)

    def test_command_is_required(self) -> None:
        with self.assertRaises(SystemExit) as caught:
            build_parser().parse_args([])
        self.assertEqual(caught.exception.code, 2)


if __name__ == "__main__":
    unittest.main()
