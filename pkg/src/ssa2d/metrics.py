"""Pixel-level evaluation: glo, ave and mIoU for actor, action and joint labels.

All scores derive from an integer confusion matrix (rows = ground truth,
columns = prediction), so accumulating over many clips is exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

LOGGER = logging.getLogger(__name__)

TASKS = ("actor", "action", "joint")


class DataError(RuntimeError):
    """Raised when label volumes or dataset contents are invalid."""


def _labels(volume: np.ndarray, num_classes: int, what: str) -> np.ndarray:
    array = np.asarray(volume)
    if not np.issubdtype(array.dtype, np.integer):
        if array.size and not np.all(np.equal(np.mod(array, 1), 0)):
            raise DataError(f"{what} labels must be integers")
        array = array.astype(np.int64)
    if array.size and (array.min() < 0 or array.max() >= num_classes):
        raise DataError(
            f"{what} labels must lie in [0, {num_classes}); found [{int(array.min())}, {int(array.max())}]"
        )
    return array.astype(np.int64, copy=False).reshape(-1)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """``[num_classes, num_classes]`` pixel counts indexed ``[gt, pred]``."""

    p = _labels(pred, num_classes, "Predicted")
    g = _labels(gt, num_classes, "Ground-truth")
    if p.shape != g.shape:
        raise DataError(f"Prediction has {p.size} pixels, ground truth has {g.size}")
    counts = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


@dataclass(slots=True)
class TaskMetrics:
    """Scores of one task plus the per-class figures they average."""

    task: str
    glo: float
    ave: float
    miou: float
    class_accuracy: np.ndarray
    class_iou: np.ndarray
    gt_pixels: np.ndarray
    pred_pixels: np.ndarray
    pixels: int
    top_k_classes: Tuple[int, ...] = ()
    top_k_ave: Optional[float] = None
    top_k_miou: Optional[float] = None

    @property
    def num_classes(self) -> int:
        return int(self.class_iou.shape[0])


def _nanmean(values: np.ndarray, fallback: float) -> float:
    finite = values[~np.isnan(values)]
    return float(finite.mean()) if finite.size else fallback


def metrics_from_confusion(
    task: str,
    confusion: np.ndarray,
    include_background: bool = False,
    top_k: int = 0,
    scored_classes: Optional[int] = None,
) -> TaskMetrics:
    """Derive scores from a confusion matrix.

    Only the first *scored_classes* labels enter class averages; any further
    predicted labels (invalid joint pairs) still count as errors for glo.
    """

    confusion = np.asarray(confusion, dtype=np.int64)
    scored = confusion.shape[0] if scored_classes is None else scored_classes
    pixels = int(confusion.sum())
    if pixels == 0:
        raise DataError(f"{task}: no pixels to evaluate")

    correct = np.diag(confusion)
    gt_pixels = confusion.sum(axis=1)
    pred_pixels = confusion.sum(axis=0)
    glo = float(correct.sum()) / pixels

    accuracy = np.full(scored, np.nan)
    iou = np.full(scored, np.nan)
    for k in range(scored):
        if gt_pixels[k]:
            accuracy[k] = correct[k] / gt_pixels[k]
        union = gt_pixels[k] + pred_pixels[k] - correct[k]
        if union:
            iou[k] = correct[k] / union

    # An empty class set means neither volume holds a scored foreground class.
    perfect = 1.0 if correct.sum() == pixels else 0.0
    ave = _nanmean(accuracy, perfect)
    first = 0 if include_background else 1
    miou = _nanmean(iou[first:], perfect)

    metrics = TaskMetrics(
        task=task,
        glo=glo,
        ave=ave,
        miou=miou,
        class_accuracy=accuracy,
        class_iou=iou,
        gt_pixels=gt_pixels[:scored].copy(),
        pred_pixels=pred_pixels[:scored].copy(),
        pixels=pixels,
    )
    if top_k > 0:
        candidates = [k for k in range(1, scored) if gt_pixels[k]]
        # most frequent first; ties broken by class index
        candidates.sort(key=lambda k: (-int(gt_pixels[k]), k))
        chosen = tuple(sorted(candidates[:top_k]))
        metrics.top_k_classes = chosen
        if chosen:
            metrics.top_k_ave = _nanmean(accuracy[list(chosen)], perfect)
            metrics.top_k_miou = _nanmean(iou[list(chosen)], perfect)
    return metrics


def evaluate(
    pred_labels: np.ndarray,
    gt_labels: np.ndarray,
    num_classes: int,
    task: str = "actor",
    include_background: bool = False,
    top_k: int = 0,
) -> TaskMetrics:
    """Score one label volume against its ground truth (class 0 is background)."""

    confusion = confusion_matrix(pred_labels, gt_labels, num_classes)
    return metrics_from_confusion(task, confusion, include_background, top_k)


# ---------------------------------------------------------------------------
# Joint actor-action labels
# ---------------------------------------------------------------------------


def pair_labels(
    actor: np.ndarray,
    action: np.ndarray,
    valid_pairs: Sequence[Tuple[int, int]],
    strict: bool = False,
) -> np.ndarray:
    """Map ``(actor, action)`` per pixel to a joint label.

    ``(0, 0)`` is label 0 and ``valid_pairs[i]`` is label ``i + 1``. Every
    other pair, including half-background ones, becomes ``len(valid_pairs) + 1``
    unless *strict*, in which case it raises :class:`DataError`.
    """

    actor = np.asarray(actor, dtype=np.int64)
    action = np.asarray(action, dtype=np.int64)
    if actor.shape != action.shape:
        raise DataError(f"Actor labels {actor.shape} and action labels {action.shape} differ in shape")
    if actor.size and (actor.min() < 0 or action.min() < 0):
        raise DataError("Joint labels must be non-negative")
    invalid = len(valid_pairs) + 1
    width = max([int(action.max()) if action.size else 0] + [b for _, b in valid_pairs]) + 1
    height = max([int(actor.max()) if actor.size else 0] + [a for a, _ in valid_pairs]) + 1
    table = np.full((height, width), invalid, dtype=np.int64)
    table[0, 0] = 0
    for index, (a, b) in enumerate(valid_pairs, start=1):
        if a < 1 or b < 1:
            raise DataError(f"Valid pair {(a, b)} must not contain background")
        table[a, b] = index
    joint = table[actor, action]
    if strict and np.any(joint == invalid):
        raise DataError("Ground truth contains an actor-action pair outside the valid set")
    return joint


def evaluate_joint(
    pred_actor: np.ndarray,
    pred_action: np.ndarray,
    gt_actor: np.ndarray,
    gt_action: np.ndarray,
    valid_pairs: Sequence[Tuple[int, int]],
    include_background: bool = False,
    top_k: int = 0,
) -> TaskMetrics:
    """Score the joint task; a pixel is correct only when both labels match."""

    classes = len(valid_pairs) + 2
    confusion = confusion_matrix(
        pair_labels(pred_actor, pred_action, valid_pairs),
        pair_labels(gt_actor, gt_action, valid_pairs, strict=True),
        classes,
    )
    return metrics_from_confusion("joint", confusion, include_background, top_k, scored_classes=classes - 1)


# ---------------------------------------------------------------------------
# Accumulation and reporting
# ---------------------------------------------------------------------------


PROTOCOL_HEADER = (
    "ave = mean per-class accuracy over classes present in ground truth (background included)",
    "mIoU = mean IoU over classes present in prediction or ground truth, background {background}",
    "classes absent from both prediction and ground truth are skipped",
    "joint: pixel correct only if actor and action both match; invalid predicted pairs count as errors",
)


@dataclass(slots=True)
class MetricReport:
    """Scores for each task, in actor, action, joint order."""

    tasks: Dict[str, TaskMetrics] = field(default_factory=dict)
    include_background: bool = False
    clips: int = 0

    def header(self) -> List[str]:
        background = "included" if self.include_background else "excluded"
        return [line.format(background=background) for line in PROTOCOL_HEADER]

    def to_lines(self) -> str:
        """Line-oriented ``key=value`` report preceded by ``#`` protocol notes."""

        lines = [f"# {line}" for line in self.header()]
        lines.append(f"clips={self.clips}")
        for name, metrics in self.tasks.items():
            lines.append(f"{name}.glo={metrics.glo:.9g}")
            lines.append(f"{name}.ave={metrics.ave:.9g}")
            lines.append(f"{name}.miou={metrics.miou:.9g}")
            lines.append(f"{name}.pixels={metrics.pixels}")
            if metrics.top_k_classes:
                lines.append(f"{name}.top_k_classes={','.join(str(k) for k in metrics.top_k_classes)}")
                lines.append(f"{name}.top_k_ave={metrics.top_k_ave:.9g}")
                lines.append(f"{name}.top_k_miou={metrics.top_k_miou:.9g}")
            for k in range(metrics.num_classes):
                if not math.isnan(metrics.class_accuracy[k]):
                    lines.append(f"{name}.accuracy.{k}={metrics.class_accuracy[k]:.9g}")
                if not math.isnan(metrics.class_iou[k]):
                    lines.append(f"{name}.iou.{k}={metrics.class_iou[k]:.9g}")
        return "\n".join(lines) + "\n"

    def to_documents(self) -> List[Dict[str, object]]:
        documents: List[Dict[str, object]] = []
        for name, metrics in self.tasks.items():
            per_class = []
            for k in range(metrics.num_classes):
                per_class.append({
                    "class": k,
                    "accuracy": None if math.isnan(metrics.class_accuracy[k]) else float(metrics.class_accuracy[k]),
                    "iou": None if math.isnan(metrics.class_iou[k]) else float(metrics.class_iou[k]),
                    "gt_pixels": int(metrics.gt_pixels[k]),
                    "pred_pixels": int(metrics.pred_pixels[k]),
                })
            document: Dict[str, object] = {
                "task": name,
                "glo": metrics.glo,
                "ave": metrics.ave,
                "miou": metrics.miou,
                "pixels": metrics.pixels,
                "clips": self.clips,
                "classes": per_class,
            }
            if metrics.top_k_classes:
                document["top_k"] = {
                    "classes": list(metrics.top_k_classes),
                    "ave": metrics.top_k_ave,
                    "miou": metrics.top_k_miou,
                }
            documents.append(document)
        return documents

    def to_yaml(self) -> str:
        """One YAML document per task, preceded by the protocol notes as comments."""

        header = "".join(f"# {line}\n" for line in self.header())
        return header + yaml.safe_dump_all(self.to_documents(), sort_keys=False, explicit_start=True)

    def write(self, path: Path) -> Tuple[Path, Path]:
        """Write ``<path>`` (key=value) and ``<path>.yaml``; returns both paths."""

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        structured = path.with_name(path.name + ".yaml")
        path.write_text(self.to_lines(), encoding="utf-8")
        structured.write_text(self.to_yaml(), encoding="utf-8")
        LOGGER.info("Wrote metric report %s", path)
        return path, structured


def parse_report_lines(text: str) -> Dict[str, str]:
    """Inverse of :meth:`MetricReport.to_lines` for the key=value body."""

    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"Report line {number} is not key=value: {raw!r}")
        values[key] = value
    return values


class MetricAccumulator:
    """Sums confusion matrices over clips for the actor, action and joint tasks."""

    def __init__(
        self,
        c_actor: int,
        c_action: int,
        valid_pairs: Sequence[Tuple[int, int]],
        include_background: bool = False,
        top_k: int = 0,
    ) -> None:
        self.valid_pairs = list(valid_pairs)
        self.include_background = include_background
        self.top_k = top_k
        self.classes = {"actor": c_actor, "action": c_action, "joint": len(self.valid_pairs) + 2}
        self.confusion = {task: np.zeros((n, n), dtype=np.int64) for task, n in self.classes.items()}
        self.clips = 0

    def update(
        self,
        pred_actor: np.ndarray,
        pred_action: np.ndarray,
        gt_actor: np.ndarray,
        gt_action: np.ndarray,
    ) -> None:
        self.confusion["actor"] += confusion_matrix(pred_actor, gt_actor, self.classes["actor"])
        self.confusion["action"] += confusion_matrix(pred_action, gt_action, self.classes["action"])
        self.confusion["joint"] += confusion_matrix(
            pair_labels(pred_actor, pred_action, self.valid_pairs),
            pair_labels(gt_actor, gt_action, self.valid_pairs, strict=True),
            self.classes["joint"],
        )
        self.clips += 1

    def report(self) -> MetricReport:
        if not self.clips:
            raise DataError("No clips were evaluated")
        tasks = {}
        for task in TASKS:
            scored = self.classes[task] - 1 if task == "joint" else None
            tasks[task] = metrics_from_confusion(
                task, self.confusion[task], self.include_background, self.top_k, scored
            )
        return MetricReport(tasks=tasks, include_background=self.include_background, clips=self.clips)


def summarize(report: MetricReport, tasks: Iterable[str] = TASKS) -> str:
    """One-line summary used in logs."""

    parts = []
    for task in tasks:
        metrics = report.tasks.get(task)
        if metrics is not None:
            parts.append(f"{task}: glo={metrics.glo:.4f} ave={metrics.ave:.4f} miou={metrics.miou:.4f}")
    return " | ".join(parts)


def report_from_mapping(values: Mapping[str, str]) -> Dict[str, Dict[str, float]]:
    """Headline scores (glo, ave, miou) per task from parsed report lines."""

    scores: Dict[str, Dict[str, float]] = {}
    for key, value in values.items():
        task, _, metric = key.partition(".")
        if task in TASKS and metric in ("glo", "ave", "miou"):
            scores.setdefault(task, {})[metric] = float(value)
    return scores
