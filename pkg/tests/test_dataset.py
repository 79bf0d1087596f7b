"""Tests for batched dataset iteration and the prefetching loader."""

from __future__ import annotations

import sys
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np

PROJECT_ROOT = Path(__file__).resolve().parents[1]
SRC_DIR = PROJECT_ROOT / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from ssa2d.config import SynthConfig  # type: ignore[import]
from ssa2d.dataset import PrefetchLoader, dataset_iter, dataset_size, epoch_order  # type: ignore[import]
from ssa2d.metrics import DataError  # type: ignore[import]
from ssa2d.synth import clip_filename, write_dataset  # type: ignore[import]

SMALL = SynthConfig(t=2, h=8, w=8, actors_min=0, actors_max=2, size_min=2, size_max=3,
                    speed_min=1, speed_max=1, seed=3)


def _seeds(batches):
    return [[clip.seed for clip in batch] for batch in batches]


class DatasetIterTests(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = TemporaryDirectory()
        self.data = Path(self._tmp.name) / "data"
        self.entries = write_dataset(SMALL, self.data, 5, seed=11)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_batch_sizes_with_short_tail(self) -> None:
        batches = list(dataset_iter(self.data, 2))
        self.assertEqual([len(batch) for batch in batches], [2, 2, 1])
        self.assertEqual(sum(_seeds(batches), []), [seed for _, seed in self.entries])
        self.assertEqual(dataset_size(self.data), 5)

    def test_shuffle_is_a_seeded_permutation(self) -> None:
        first = _seeds(dataset_iter(self.data, 5, shuffle_seed=4))
        again = _seeds(dataset_iter(self.data, 5, shuffle_seed=4))
        self.assertEqual(first, again)
        self.assertEqual(sorted(first[0]), sorted(seed for _, seed in self.entries))

    def test_prefetch_preserves_order(self) -> None:
        plain = _seeds(dataset_iter(self.data, 2, shuffle_seed=9))
        prefetched = _seeds(dataset_iter(self.data, 2, shuffle_seed=9, prefetch=1))
        self.assertEqual(plain, prefetched)

    def test_missing_clip_file(self) -> None:
        (self.data / clip_filename(3)).unlink()
        with self.assertRaises(DataError):
            list(dataset_iter(self.data, 2))
        with self.assertRaises(DataError):
            list(dataset_iter(self.data, 2, prefetch=2))

    def test_invalid_batch_size(self) -> None:
        with self.assertRaises(DataError):
            dataset_iter(self.data, 0)

    def test_missing_directory_fails_eagerly(self) -> None:
        with self.assertRaises(DataError):
            dataset_iter(self.data / "absent", 2)


class EpochOrderTests(unittest.TestCase):
    def test_none_keeps_manifest_order(self) -> None:
        entries = [(i, i * 10) for i in range(6)]
        self.assertEqual(epoch_order(entries, None), entries)
        shuffled = epoch_order(entries, 1)
        self.assertEqual(sorted(shuffled), entries)
        self.assertEqual(shuffled, epoch_order(entries, 1))


class PrefetchLoaderTests(unittest.TestCase):
    def test_items_flow_through(self) -> None:
        source = iter([[np.int64(i)] for i in range(10)])
        self.assertEqual([batch[0] for batch in PrefetchLoader(source, depth=2)], list(range(10)))

    def test_error_is_reraised(self) -> None:
        def failing():
            yield [1]
            raise DataError("broken clip")

        loader = PrefetchLoader(failing(), depth=1)
        seen = []
        with self.assertRaisesRegex(DataError, "broken clip"):
            for batch in loader:
                seen.append(batch)
        self.assertEqual(seen, [[1]])

    def test_early_exit_stops_worker(self) -> None:
        loader = PrefetchLoader(iter([[i] for i in range(100)]), depth=1)
        for batch in loader:
            break
        self.assertFalse(loader._thread.is_alive())


if __name__ == "__main__":
    unittest.main()
