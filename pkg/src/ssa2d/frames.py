"""Color-mapped label frames written as binary PPM (P6) images."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Mapping

import numpy as np
from PIL import Image

LOGGER = logging.getLogger(__name__)

# Label k is drawn in PALETTE[k % len(PALETTE)]; label 0 (background) is black.
PALETTE = np.array(
    [
        (0, 0, 0),
        (230, 25, 75),
        (60, 180, 75),
        (0, 130, 200),
        (255, 225, 25),
        (245, 130, 48),
        (145, 30, 180),
        (70, 240, 240),
        (240, 50, 230),
        (210, 245, 60),
        (250, 190, 212),
        (0, 128, 128),
        (220, 190, 255),
        (170, 110, 40),
        (255, 250, 200),
        (128, 0, 0),
    ],
    dtype=np.uint8,
)


def colorize(labels: np.ndarray) -> np.ndarray:
    """``[..., 3]`` uint8 RGB for an integer label array."""

    labels = np.asarray(labels, dtype=np.int64)
    return PALETTE[np.mod(labels, len(PALETTE))]


def write_ppm(path: Path, rgb: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PPM")


def dump_frames(volumes: Mapping[str, np.ndarray], out_dir: Path) -> Dict[str, List[Path]]:
    """Write one image per frame of each ``[T, H, W]`` label volume.

    Files are named ``<task>_<frame>.ppm``; returns the paths per task.
    """

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: Dict[str, List[Path]] = {}
    for task, volume in volumes.items():
        rgb = colorize(volume)
        paths = []
        for t in range(rgb.shape[0]):
            path = out_dir / f"{task}_{t:03d}.ppm"
            write_ppm(path, rgb[t])
            paths.append(path)
        written[task] = paths
    LOGGER.info("Wrote %d frames to %s", sum(len(p) for p in written.values()), out_dir)
    return written
