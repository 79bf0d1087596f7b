"""Forward-pass cost versus number of actors in the scene."""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Sequence

import yaml

from .config import SynthConfig
from .network import SSA2DNetwork
from .synth import generate_clip
from .tensor import OpCounter, Tensor, no_grad

LOGGER = logging.getLogger(__name__)


@dataclass(slots=True)
class BenchRow:
    actors: int
    repeats: int
    median_ms_per_frame: float
    ops: int
    arithmetic: int
    allocated_bytes: int
    peak_bytes: int

    def as_dict(self) -> Dict[str, float]:
        return {
            "actors": self.actors,
            "repeats": self.repeats,
            "median_ms_per_frame": self.median_ms_per_frame,
            "ops": self.ops,
            "arithmetic": self.arithmetic,
            "allocated_bytes": self.allocated_bytes,
            "peak_bytes": self.peak_bytes,
        }


@dataclass(slots=True)
class BenchReport:
    rows: List[BenchRow]

    @property
    def content_independent(self) -> bool:
        """True when op counts and peak allocation match for every scene."""

        signatures = {(row.ops, row.arithmetic, row.allocated_bytes, row.peak_bytes) for row in self.rows}
        return len(signatures) <= 1

    @property
    def time_spread(self) -> float:
        """``(max - min) / min`` of the median per-frame times."""

        times = [row.median_ms_per_frame for row in self.rows]
        if not times or min(times) <= 0:
            return 0.0
        return (max(times) - min(times)) / min(times)

    def to_lines(self) -> str:
        lines = [f"# content_independent={str(self.content_independent).lower()}"]
        for row in self.rows:
            lines.append(" ".join(f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}"
                                  for key, value in row.as_dict().items()))
        return "\n".join(lines) + "\n"

    def to_yaml(self) -> str:
        document = {
            "content_independent": self.content_independent,
            "time_spread": self.time_spread,
            "scenes": [row.as_dict() for row in self.rows],
        }
        return yaml.safe_dump(document, sort_keys=False)

    def write(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_lines(), encoding="utf-8")
        path.with_name(path.name + ".yaml").write_text(self.to_yaml(), encoding="utf-8")


def benchmark(model: SSA2DNetwork, synth: SynthConfig, actor_counts: Sequence[int],
              repeats: int = 5, clip_seed: int = 0) -> BenchReport:
    """Run forward-only inference *repeats* times per scene and record its cost."""

    rows = []
    t = model.cfg.input_shape[0]
    for count in actor_counts:
        scene = replace(synth, actors_min=count, actors_max=count)
        clip = generate_clip(scene, clip_seed)
        video = Tensor(clip.video, dtype=model.dtype)
        timings = []
        stats = None
        for _ in range(max(1, repeats)):
            with no_grad(), OpCounter() as counter:
                start = time.perf_counter()
                out = model(video)
                timings.append(time.perf_counter() - start)
                del out
            if stats is None:
                stats = counter.stats
            elif (counter.stats.ops, counter.stats.peak_bytes) != (stats.ops, stats.peak_bytes):
                LOGGER.warning("Forward cost changed between repeats for %d actors", count)
        assert stats is not None
        row = BenchRow(
            actors=count,
            repeats=len(timings),
            median_ms_per_frame=statistics.median(timings) * 1000.0 / t,
            ops=stats.ops,
            arithmetic=stats.arithmetic,
            allocated_bytes=stats.allocated_bytes,
            peak_bytes=stats.peak_bytes,
        )
        LOGGER.info("bench actors=%d median=%.3f ms/frame ops=%d peak=%d B",
                    count, row.median_ms_per_frame, row.ops, row.peak_bytes)
        rows.append(row)
    return BenchReport(rows)
