"""Synthetic moving-shapes clips with per-pixel actor and action labels.

Each actor is a flat-colored shape (its actor class) translating at constant
integer speed in one direction (its action class). Rendering is exact: no
anti-aliasing, and later actors overwrite earlier ones.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .config import ACTION_MOTIONS, ACTOR_SHAPES, SynthConfig, worker_threads
from .container import read_container, write_container
from .metrics import DataError

LOGGER = logging.getLogger(__name__)

CLIP_TENSORS = ("video", "actor_gt", "action_gt", "mask_gt")
MANIFEST_NAME = "manifest.txt"

# Actor class k (1-based) is drawn in SHAPE_COLORS[k - 1].
SHAPE_COLORS = np.array(
    [
        (0.90, 0.20, 0.20),
        (0.20, 0.80, 0.25),
        (0.25, 0.35, 0.95),
    ],
    dtype=np.float32,
)
FLAT_BACKGROUND = np.array((0.5, 0.5, 0.5), dtype=np.float32)

# (dy, dx) per pixel of speed, action class k at index k - 1
MOTION_VECTORS = {
    "right": (0, 1),
    "left": (0, -1),
    "up": (-1, 0),
    "down": (1, 0),
}


def valid_pairs() -> List[Tuple[int, int]]:
    """Every (actor, action) combination can occur in synthetic clips."""

    return [(a, m) for a in range(1, len(ACTOR_SHAPES) + 1) for m in range(1, len(ACTION_MOTIONS) + 1)]


def shape_mask(shape: str, size: int) -> np.ndarray:
    """Boolean ``[size, size]`` footprint of *shape*."""

    index = np.arange(size, dtype=np.float64)
    rows, cols = np.meshgrid(index, index, indexing="ij")
    center = (size - 1) / 2.0
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "circle":
        return (rows - center) ** 2 + (cols - center) ** 2 <= (size / 2.0) ** 2
    if shape == "triangle":
        # apex on the top row, base on the bottom row
        return np.abs(cols - center) <= (rows + 1) / 2.0
    raise ValueError(f"Unknown actor shape {shape!r}")


@dataclass(slots=True)
class ActorSpec:
    actor_class: int
    action_class: int
    size: int
    speed: int
    top: int
    left: int

    @property
    def velocity(self) -> Tuple[int, int]:
        dy, dx = MOTION_VECTORS[ACTION_MOTIONS[self.action_class - 1]]
        return dy * self.speed, dx * self.speed


@dataclass(slots=True)
class ClipRecord:
    """One clip with its ground truth; video values lie in [0, 1]."""

    video: np.ndarray
    actor_gt: np.ndarray
    action_gt: np.ndarray
    mask_gt: np.ndarray
    seed: int = 0
    actors: List[ActorSpec] = field(default_factory=list)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.actor_gt.shape)  # type: ignore[return-value]

    def to_tensors(self) -> Dict[str, np.ndarray]:
        return {
            "video": self.video.astype(np.float32, copy=False),
            "actor_gt": self.actor_gt.astype(np.int32, copy=False),
            "action_gt": self.action_gt.astype(np.int32, copy=False),
            "mask_gt": self.mask_gt.astype(np.uint8, copy=False),
        }

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], seed: int = 0) -> "ClipRecord":
        video = tensors["video"]
        labels = [tensors[name] for name in ("actor_gt", "action_gt", "mask_gt")]
        if video.ndim != 4 or video.shape[-1] != 3:
            raise DataError(f"Clip video must be [T, H, W, 3], got {video.shape}")
        for label in labels:
            if label.shape != video.shape[:3]:
                raise DataError(f"Clip label volume {label.shape} does not match video {video.shape}")
        return cls(video, labels[0], labels[1], labels[2], seed=seed)


def _place(rng: np.random.Generator, cfg: SynthConfig) -> ActorSpec:
    actor_class = int(rng.integers(1, len(ACTOR_SHAPES) + 1))
    action_class = int(rng.integers(1, len(ACTION_MOTIONS) + 1))
    size = int(rng.integers(cfg.size_min, cfg.size_max + 1))
    speed = int(rng.integers(cfg.speed_min, cfg.speed_max + 1))
    spec = ActorSpec(actor_class, action_class, size, speed, 0, 0)
    dy, dx = spec.velocity
    travel_y, travel_x = dy * (cfg.t - 1), dx * (cfg.t - 1)
    top_low, top_high = max(0, -travel_y), cfg.h - size - max(0, travel_y)
    left_low, left_high = max(0, -travel_x), cfg.w - size - max(0, travel_x)
    spec.top = int(rng.integers(top_low, top_high + 1))
    spec.left = int(rng.integers(left_low, left_high + 1))
    return spec


def generate_clip(cfg: SynthConfig, clip_seed: int) -> ClipRecord:
    """Deterministic clip for ``(cfg, clip_seed)``."""

    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, int(clip_seed)]))
    count = int(rng.integers(cfg.actors_min, cfg.actors_max + 1))
    actors = [_place(rng, cfg) for _ in range(count)]

    shape = (cfg.t, cfg.h, cfg.w)
    if cfg.background == "noise":
        video = rng.uniform(0.0, 0.35, size=shape + (3,)).astype(np.float32)
    else:
        video = np.broadcast_to(FLAT_BACKGROUND, shape + (3,)).copy()
    actor_gt = np.zeros(shape, dtype=np.int32)
    action_gt = np.zeros(shape, dtype=np.int32)

    for spec in actors:
        footprint = shape_mask(ACTOR_SHAPES[spec.actor_class - 1], spec.size)
        dy, dx = spec.velocity
        for t in range(cfg.t):
            top, left = spec.top + dy * t, spec.left + dx * t
            window = (t, slice(top, top + spec.size), slice(left, left + spec.size))
            actor_gt[window][footprint] = spec.actor_class
            action_gt[window][footprint] = spec.action_class
            video[window][footprint] = SHAPE_COLORS[spec.actor_class - 1]

    mask_gt = (actor_gt > 0).astype(np.uint8)
    return ClipRecord(video, actor_gt, action_gt, mask_gt, seed=int(clip_seed), actors=actors)


def check_clip(record: ClipRecord, pairs: Sequence[Tuple[int, int]]) -> None:
    """Raise :class:`DataError` unless the labels are mutually consistent."""

    foreground = record.actor_gt > 0
    if not np.array_equal(foreground, record.action_gt > 0):
        raise DataError(f"clip {record.seed}: action labels do not cover exactly the actor pixels")
    if not np.array_equal(record.mask_gt.astype(bool), foreground):
        raise DataError(f"clip {record.seed}: mask does not equal the actor foreground")
    present = set(zip(record.actor_gt[foreground].tolist(), record.action_gt[foreground].tolist()))
    unknown = present - set(pairs)
    if unknown:
        raise DataError(f"clip {record.seed}: pairs {sorted(unknown)} are not valid")


# ---------------------------------------------------------------------------
# Dataset directories
# ---------------------------------------------------------------------------


def clip_filename(clip_id: int) -> str:
    return f"clip_{clip_id:05d}.stc"


def clip_seeds(seed: int, count: int) -> List[int]:
    if count == 0:
        return []
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def write_dataset(cfg: SynthConfig, out_dir: Path, clips: int, seed: int) -> List[Tuple[int, int]]:
    """Generate *clips* clips into *out_dir* and write the manifest; returns (id, seed) pairs."""

    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = list(enumerate(clip_seeds(seed, clips)))

    def _one(entry: Tuple[int, int]) -> None:
        clip_id, clip_seed = entry
        record = generate_clip(cfg, clip_seed)
        write_container(out_dir / clip_filename(clip_id), record.to_tensors())

    if entries:
        with ThreadPoolExecutor(max_workers=min(worker_threads(), len(entries))) as pool:
            # list() surfaces the first worker exception
            list(pool.map(_one, entries))

    manifest = "".join(f"{clip_id} {clip_seed}\n" for clip_id, clip_seed in entries)
    (out_dir / MANIFEST_NAME).write_text(manifest, encoding="utf-8")
    LOGGER.info("Generated %d clips in %s", len(entries), out_dir)
    return entries


def read_manifest(data_dir: Path) -> List[Tuple[int, int]]:
    data_dir = Path(data_dir)
    path = data_dir / MANIFEST_NAME
    if not data_dir.is_dir():
        raise DataError(f"Dataset directory not found: {data_dir}")
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"Dataset manifest not found: {path}") from exc

    entries: List[Tuple[int, int]] = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{number}: expected 'id seed', got {line!r}")
        try:
            entries.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise DataError(f"{path}:{number}: id and seed must be integers") from exc
    return entries


def load_clip(path: Path, seed: int = 0) -> ClipRecord:
    """Read one clip and reject label volumes that disagree with each other."""

    record = ClipRecord.from_tensors(read_container(path, expected_names=CLIP_TENSORS), seed=seed)
    check_clip(record, valid_pairs())
    return record
