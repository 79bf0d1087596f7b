"""Mutation fuzzer for the STC1 tensor container decoder.

Flips, truncates and splices bytes of a valid container and checks that every
mutant either decodes or raises ContainerFormatError. Any other exception is a
decoder bug and is printed with the seed that reproduces it.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

PROJECT_ROOT = Path(__file__).resolve().parents[1]
SRC_DIR = PROJECT_ROOT / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from ssa2d.container import ContainerFormatError, decode_container, encode_container  # type: ignore[import]

_LOG = logging.getLogger(__name__)


def sample_container(rng: np.random.Generator) -> bytes:
    return encode_container({
        "video": rng.random((2, 4, 4, 3), dtype=np.float32),
        "actor_gt": rng.integers(0, 4, size=(2, 4, 4)).astype(np.int32),
        "mask_gt": rng.integers(0, 2, size=(2, 4, 4)).astype(np.uint8),
    })


def mutate(data: bytes, rng: np.random.Generator) -> bytes:
    buf = bytearray(data)
    kind = int(rng.integers(0, 4))
    if kind == 0:
        for _ in range(int(rng.integers(1, 8))):
            buf[int(rng.integers(0, len(buf)))] = int(rng.integers(0, 256))
    elif kind == 1:
        del buf[int(rng.integers(0, len(buf))):]
    elif kind == 2:
        start = int(rng.integers(0, len(buf)))
        buf[start:start] = rng.integers(0, 256, size=int(rng.integers(1, 16))).astype(np.uint8).tobytes()
    else:
        # overwrite a u32 with an extreme value
        start = int(rng.integers(0, max(1, len(buf) - 4)))
        buf[start:start + 4] = b"\xff\xff\xff\x7f"
    return bytes(buf)


def fuzz(iterations: int, seed: int) -> int:
    failures = 0
    decoded = rejected = 0
    for i in range(iterations):
        rng = np.random.default_rng([seed, i])
        mutant = mutate(sample_container(rng), rng)
        try:
            decode_container(mutant)
            decoded += 1
        except ContainerFormatError:
            rejected += 1
        except Exception as exc:  # noqa: BLE001 - anything else is a finding
            failures += 1
            _LOG.error("iteration %d (seed %d): %s: %s", i, seed, type(exc).__name__, exc)
    _LOG.info("%d mutants: %d decoded, %d rejected, %d crashed", iterations, decoded, rejected, failures)
    return failures


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="[%(asctime)s] %(levelname)s %(message)s")
    parser = argparse.ArgumentParser(description="Fuzz the tensor container decoder")
    parser.add_argument("--iterations", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    sys.exit(1 if fuzz(args.iterations, args.seed) else 0)


if __name__ == "__main__":
    main()
