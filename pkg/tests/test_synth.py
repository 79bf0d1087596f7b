"""Tests for synthetic clip generation and dataset directories."""

from __future__ import annotations

import sys
import unittest
from dataclasses import replace
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np

PROJECT_ROOT = Path(__file__).resolve().parents[1]
SRC_DIR = PROJECT_ROOT / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from ssa2d.config import ConfigurationError, SynthConfig  # type: ignore[import]
from ssa2d.container import ContainerFormatError, write_container  # type: ignore[import]
from ssa2d.metrics import DataError  # type: ignore[import]
from ssa2d.synth import (  # type: ignore[import]
    CLIP_TENSORS,
    FLAT_BACKGROUND,
    MANIFEST_NAME,
    SHAPE_COLORS,
    ClipRecord,
    check_clip,
    clip_filename,
    generate_clip,
    load_clip,
    read_manifest,
    shape_mask,
    valid_pairs,
    write_dataset,
)

SMALL = SynthConfig(t=4, h=16, w=16, actors_min=1, actors_max=3, size_min=3, size_max=4,
                    speed_min=1, speed_max=1, seed=5)


class ShapeTests(unittest.TestCase):
    def test_square_fills_its_box(self) -> None:
        self.assertTrue(shape_mask("square", 4).all())

    def test_circle_is_symmetric_and_smaller(self) -> None:
        mask = shape_mask("circle", 7)
        np.testing.assert_array_equal(mask, mask.T)
        np.testing.assert_array_equal(mask, mask[::-1])
        self.assertLess(mask.sum(), 49)
        self.assertTrue(mask[3, 3])

    def test_triangle_widens_downwards(self) -> None:
        mask = shape_mask("triangle", 5)
        widths = mask.sum(axis=1)
        self.assertTrue(np.all(np.diff(widths) >= 0))
        self.assertEqual(int(widths[-1]), 5)
        self.assertTrue(mask[0, 2])

    def test_unknown_shape(self) -> None:
        with self.assertRaises(ValueError):
            shape_mask("hexagon", 3)


class GenerateClipTests(unittest.TestCase):
    def test_shapes_and_ranges(self) -> None:
        record = generate_clip(SMALL, 1)
        self.assertEqual(record.video.shape, (4, 16, 16, 3))
        self.assertEqual(record.shape, (4, 16, 16))
        self.assertEqual(record.video.dtype, np.float32)
        self.assertTrue(np.all((record.video >= 0) & (record.video <= 1)))
        self.assertTrue(1 <= len(record.actors) <= 3)
        self.assertLessEqual(int(record.actor_gt.max()), 3)
        self.assertLessEqual(int(record.action_gt.max()), 4)

    def test_labels_are_consistent(self) -> None:
        for clip_seed in range(20):
            with self.subTest(clip_seed=clip_seed):
                check_clip(generate_clip(SMALL, clip_seed), valid_pairs())

    def test_deterministic_per_seed(self) -> None:
        a = generate_clip(SMALL, 3)
        b = generate_clip(SMALL, 3)
        c = generate_clip(SMALL, 4)
        np.testing.assert_array_equal(a.video, b.video)
        np.testing.assert_array_equal(a.actor_gt, b.actor_gt)
        self.assertFalse(np.array_equal(a.video, c.video) and np.array_equal(a.actor_gt, c.actor_gt))

    def test_single_actor_moves_rigidly(self) -> None:
        cfg = replace(SMALL, actors_min=1, actors_max=1)
        record = generate_clip(cfg, 2)
        spec = record.actors[0]
        dy, dx = spec.velocity
        first = np.argwhere(record.actor_gt[0] > 0)
        for t in range(1, cfg.t):
            moved = np.argwhere(record.actor_gt[t] > 0)
            np.testing.assert_array_equal(moved, first + np.array([dy * t, dx * t]))
        colors = record.video[record.actor_gt > 0]
        np.testing.assert_array_equal(colors, np.broadcast_to(SHAPE_COLORS[spec.actor_class - 1], colors.shape))

    def test_empty_scene(self) -> None:
        record = generate_clip(replace(SMALL, actors_min=0, actors_max=0), 0)
        self.assertEqual(int(record.mask_gt.sum()), 0)
        np.testing.assert_array_equal(record.video, np.broadcast_to(FLAT_BACKGROUND, record.video.shape))

    def test_noise_background(self) -> None:
        record = generate_clip(replace(SMALL, background="noise", actors_min=0, actors_max=0), 0)
        self.assertLess(float(record.video.max()), 0.35)
        self.assertGreater(float(record.video.std()), 0.0)

    def test_infeasible_motion_is_rejected(self) -> None:
        with self.assertRaises(ConfigurationError):
            generate_clip(replace(SMALL, size_max=14, speed_max=2), 0)

    def test_inconsistent_labels_are_reported(self) -> None:
        record = generate_clip(replace(SMALL, actors_min=1, actors_max=1), 0)
        broken = replace(record, action_gt=np.zeros_like(record.action_gt))
        with self.assertRaises(DataError):
            check_clip(broken, valid_pairs())
        with self.assertRaises(DataError):
            check_clip(record, [(9, 9)])


class DatasetDirectoryTests(unittest.TestCase):
    def test_write_and_reload(self) -> None:
        with TemporaryDirectory() as tmpdir:
            out = Path(tmpdir) / "data"
            entries = write_dataset(SMALL, out, 4, seed=7)
            self.assertEqual([clip_id for clip_id, _ in entries], [0, 1, 2, 3])
            self.assertEqual(read_manifest(out), entries)
            for clip_id, clip_seed in entries:
                loaded = load_clip(out / clip_filename(clip_id), seed=clip_seed)
                fresh = generate_clip(SMALL, clip_seed)
                np.testing.assert_array_equal(loaded.video, fresh.video)
                np.testing.assert_array_equal(loaded.action_gt, fresh.action_gt)

    def test_same_seed_gives_identical_files(self) -> None:
        with TemporaryDirectory() as tmpdir:
            first, second = Path(tmpdir) / "a", Path(tmpdir) / "b"
            write_dataset(SMALL, first, 3, seed=1)
            write_dataset(SMALL, second, 3, seed=1)
            for name in [MANIFEST_NAME] + [clip_filename(i) for i in range(3)]:
                self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_zero_clips_writes_empty_manifest(self) -> None:
        with TemporaryDirectory() as tmpdir:
            out = Path(tmpdir) / "none"
            self.assertEqual(write_dataset(SMALL, out, 0, seed=0), [])
            self.assertEqual((out / MANIFEST_NAME).read_text(encoding="utf-8"), "")
            self.assertEqual(read_manifest(out), [])

    def test_manifest_errors(self) -> None:
        with TemporaryDirectory() as tmpdir:
            root = Path(tmpdir)
            with self.assertRaises(DataError):
                read_manifest(root / "missing")
            with self.assertRaises(DataError):
                read_manifest(root)
            (root / MANIFEST_NAME).write_text("0 1 2\n", encoding="utf-8")
            with self.assertRaises(DataError):
                read_manifest(root)
            (root / MANIFEST_NAME).write_text("zero one\n", encoding="utf-8")
            with self.assertRaises(DataError):
                read_manifest(root)

    def test_clip_file_must_hold_clip_tensors(self) -> None:
        record = generate_clip(SMALL, 0)
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "clip.stc"
            tensors = record.to_tensors()
            tensors.pop("mask_gt")
            write_container(path, tensors)
            with self.assertRaises(ContainerFormatError):
                load_clip(path)
        bad = record.to_tensors()
        bad["actor_gt"] = bad["actor_gt"][:, :8]
        with self.assertRaises(DataError):
            ClipRecord.from_tensors(bad)
        self.assertEqual(set(record.to_tensors()), set(CLIP_TENSORS))

    def test_loading_rejects_inconsistent_labels(self) -> None:
        record = generate_clip(replace(SMALL, actors_min=1, actors_max=1), 3)
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "clip.stc"
            write_container(path, record.to_tensors())
            self.assertEqual(int(load_clip(path).mask_gt.sum()), int(record.mask_gt.sum()))
            tensors = record.to_tensors()
            tensors["mask_gt"] = np.zeros_like(tensors["mask_gt"])
            write_container(path, tensors)
            with self.assertRaises(DataError):
                load_clip(path)


if __name__ == "__main__":
    unittest.main()
