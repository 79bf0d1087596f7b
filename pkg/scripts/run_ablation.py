"""Train and score the full model and each single-toggle-off variant on a toy split."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]
SRC_DIR = PROJECT_ROOT / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from ssa2d.cli import EXIT_OK, run_from_cli  # type: ignore[import]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=PROJECT_ROOT / "runs" / "ablation")
    parser.add_argument("--config", type=Path, default=PROJECT_ROOT / "config.example.yaml")
    parser.add_argument("--train-clips", type=int, default=200)
    parser.add_argument("--test-clips", type=int, default=50)
    args = parser.parse_args()

    out: Path = args.out
    config = ["--config", str(args.config)]
    for name, clips, seed in (("train", args.train_clips, "0"), ("test", args.test_clips, "1")):
        if not (out / name / "manifest.txt").is_file():
            code = run_from_cli(["gen-data", *config, "--out", str(out / name), "--clips", str(clips), "--seed", seed])
            if code != EXIT_OK:
                return code
    return run_from_cli(["ablate", *config, "--data", str(out / "train"), "--eval-data", str(out / "test"),
                         "--out", str(out / "variants")])


if __name__ == "__main__":
    sys.exit(main())
