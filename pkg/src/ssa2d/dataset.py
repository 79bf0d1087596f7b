"""Batched, shuffled iteration over a generated dataset directory."""

from __future__ import annotations

import logging
import queue
import threading
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .metrics import DataError
from .synth import ClipRecord, clip_filename, load_clip, read_manifest

LOGGER = logging.getLogger(__name__)

Batch = List[ClipRecord]


def epoch_order(entries: Sequence[Tuple[int, int]], shuffle_seed: Optional[int]) -> List[Tuple[int, int]]:
    """Manifest order when *shuffle_seed* is None, else a seeded permutation."""

    if shuffle_seed is None:
        return list(entries)
    permutation = np.random.default_rng(shuffle_seed).permutation(len(entries))
    return [entries[i] for i in permutation]


def _batches(data_dir: Path, order: Sequence[Tuple[int, int]], batch_size: int) -> Iterator[Batch]:
    for start in range(0, len(order), batch_size):
        batch = []
        for clip_id, clip_seed in order[start:start + batch_size]:
            path = data_dir / clip_filename(clip_id)
            if not path.is_file():
                raise DataError(f"Manifest lists clip {clip_id} but {path} is missing")
            batch.append(load_clip(path, seed=clip_seed))
        yield batch


class PrefetchLoader:
    """Load batches on a daemon thread into a bounded queue.

    Batches come out in the same order the synchronous path would produce;
    a loader error is re-raised in the consuming thread.
    """

    _DONE = object()

    def __init__(self, source: Iterator[Batch], depth: int = 2) -> None:
        self._source = source
        self._queue: "queue.Queue[object]" = queue.Queue(maxsize=max(1, depth))
        self._stopping = threading.Event()
        self._error: Optional[BaseException] = None
        self._thread = threading.Thread(target=self._run, name="ssa2d-prefetch", daemon=True)

    def start(self) -> "PrefetchLoader":
        if not self._thread.is_alive():
            self._thread.start()
        return self

    def _put(self, item: object) -> bool:
        while not self._stopping.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _run(self) -> None:
        try:
            for batch in self._source:
                if not self._put(batch):
                    return
        except BaseException as exc:  # re-raised by the consumer
            self._error = exc
        self._put(self._DONE)

    def stop(self) -> None:
        self._stopping.set()
        self._thread.join(timeout=1)

    def __iter__(self) -> Iterator[Batch]:
        self.start()
        try:
            while True:
                item = self._queue.get()
                if item is self._DONE:
                    if self._error is not None:
                        raise self._error
                    return
                yield item  # type: ignore[misc]
        finally:
            self.stop()


def dataset_iter(
    data_dir: Path,
    batch_size: int,
    shuffle_seed: Optional[int] = None,
    prefetch: int = 0,
) -> Iterator[Batch]:
    """Yield lists of clips; the final batch may be short.

    With ``prefetch > 0`` loading runs ahead on a worker thread holding at
    most *prefetch* batches.
    """

    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    data_dir = Path(data_dir)
    order = epoch_order(read_manifest(data_dir), shuffle_seed)
    source = _batches(data_dir, order, batch_size)
    if prefetch > 0:
        return iter(PrefetchLoader(source, prefetch))
    return source


def dataset_size(data_dir: Path) -> int:
    return len(read_manifest(Path(data_dir)))
