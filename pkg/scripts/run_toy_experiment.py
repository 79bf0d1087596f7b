"""Run the toy learning experiment end to end.

Generates a 200/50 synthetic split, trains the toy profile, scores the test
split and benchmarks forward cost at 1, 4 and 8 actors. Everything lands in
one run directory (default ``runs/toy``).
"""

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
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=PROJECT_ROOT / "runs" / "toy")
    parser.add_argument("--config", type=Path, default=PROJECT_ROOT / "config.example.yaml")
    parser.add_argument("--train-clips", type=int, default=200)
    parser.add_argument("--test-clips", type=int, default=50)
    args = parser.parse_args()

    out: Path = args.out
    config = ["--config", str(args.config)]
    steps = [
        ["gen-data", *config, "--out", str(out / "train"), "--clips", str(args.train_clips), "--seed", "0"],
        ["gen-data", *config, "--out", str(out / "test"), "--clips", str(args.test_clips), "--seed", "1"],
        ["train", *config, "--data", str(out / "train"), "--out", str(out / "model")],
        ["eval", "--ckpt", str(out / "model" / "model.stc"), "--data", str(out / "test"),
         "--report", str(out / "test_metrics.txt")],
        ["bench", "--ckpt", str(out / "model" / "model.stc"), "--actors", "1,4,8",
         "--report", str(out / "bench.txt")],
    ]
    for argv in steps:
        print(f"==> ssa2d {' '.join(argv)}", flush=True)
        code = run_from_cli(argv)
        if code != EXIT_OK:
            return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
