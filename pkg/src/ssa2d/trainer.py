"""Joint training, checkpoints and inference for the SSA2D network."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .config import RunConfig, config_from_yaml, config_to_dict, config_to_yaml, save_config
from .container import ContainerFormatError, read_container, tensor_text, text_tensor, write_container
from .dataset import Batch, dataset_iter, dataset_size
from .losses import LossTerms, action_loss, actor_loss, mask_loss, one_hot, total_loss
from .metrics import DataError, MetricAccumulator, MetricReport, summarize
from .network import DetectionOutput, SSA2DNetwork
from .optim import Adam
from .synth import ClipRecord, valid_pairs
from .tensor import Tape, Tensor, add, affine, no_grad

LOGGER = logging.getLogger(__name__)

CONFIG_TENSOR = "meta.config"
CHECKPOINT_NAME = "model.stc"
LOG_NAME = "train.log"
CONFIG_NAME = "config.yaml"


class NonFiniteLossError(RuntimeError):
    """Raised when a loss term becomes NaN or infinite."""

    def __init__(self, term: str, step: int, value: float) -> None:
        super().__init__(f"Loss term {term} is {value} at step {step}")
        self.term = term
        self.step = step
        self.value = value


# ---------------------------------------------------------------------------
# Training log
# ---------------------------------------------------------------------------

_FLOAT = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?|nan|inf|-inf"
LOG_LINE = re.compile(
    rf"^step=(?P<step>\d+) l_actor=(?P<l_actor>{_FLOAT}) l_action=(?P<l_action>{_FLOAT}) "
    rf"l_mask=(?P<l_mask>{_FLOAT}) total=(?P<total>{_FLOAT}) lr=(?P<lr>{_FLOAT})$"
)


@dataclass(slots=True)
class TrainLogEntry:
    step: int
    l_actor: float
    l_action: float
    l_mask: float
    total: float
    lr: float

    def format(self) -> str:
        return (
            f"step={self.step} l_actor={self.l_actor:.9g} l_action={self.l_action:.9g} "
            f"l_mask={self.l_mask:.9g} total={self.total:.9g} lr={self.lr:.9g}"
        )

    @classmethod
    def parse(cls, line: str) -> "TrainLogEntry":
        match = LOG_LINE.match(line.strip())
        if match is None:
            raise DataError(f"Not a training log line: {line!r}")
        values = match.groupdict()
        return cls(
            step=int(values["step"]),
            l_actor=float(values["l_actor"]),
            l_action=float(values["l_action"]),
            l_mask=float(values["l_mask"]),
            total=float(values["total"]),
            lr=float(values["lr"]),
        )


def steps_to_threshold(entries: Sequence[TrainLogEntry], fraction: float) -> Optional[int]:
    """First step whose total loss is at most *fraction* of the first logged total."""

    if not entries:
        return None
    target = entries[0].total * fraction
    for entry in entries:
        if entry.total <= target:
            return entry.step
    return None


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: Path, model: SSA2DNetwork, config: RunConfig) -> None:
    """Write every parameter plus the run configuration to one container."""

    tensors: Dict[str, np.ndarray] = {
        name: value.astype(np.float32, copy=False) for name, value in model.state_dict().items()
    }
    tensors[CONFIG_TENSOR] = text_tensor(config_to_yaml(config))
    write_container(Path(path), tensors)
    LOGGER.info("Checkpoint written to %s", path)


def load_checkpoint(path: Path) -> Tuple[SSA2DNetwork, RunConfig]:
    """Rebuild ``(model, config)`` from a checkpoint written by :func:`save_checkpoint`."""

    tensors = read_container(Path(path))
    if CONFIG_TENSOR not in tensors:
        raise ContainerFormatError(f"{path} holds no {CONFIG_TENSOR!r} tensor", 0)
    config = config_from_yaml(tensor_text(tensors.pop(CONFIG_TENSOR)))
    model = SSA2DNetwork(config.network)
    model.load_state_dict(tensors)
    return model, config


# ---------------------------------------------------------------------------
# Losses over a batch
# ---------------------------------------------------------------------------


def clip_losses(model: SSA2DNetwork, clip: ClipRecord, config: RunConfig,
                teacher_forcing: bool = True) -> LossTerms:
    net = model.cfg
    dtype = model.dtype
    video = Tensor(clip.video, dtype=dtype)
    teacher = Tensor(clip.mask_gt, dtype=dtype) if teacher_forcing else None
    out = model(video, teacher_mask=teacher)
    eps = config.loss.dice_epsilon
    l_actor = actor_loss(out.actor_d, one_hot(clip.actor_gt, net.c_actor, dtype), eps)
    l_action = action_loss(out.action_d, one_hot(clip.action_gt, net.c_action, dtype), eps,
                           multi_label=net.action_activation == "sigmoid")
    l_mask = mask_loss(out.mask_fg, clip.mask_gt.astype(dtype)[..., None], eps)
    return LossTerms(l_actor, l_action, l_mask, total_loss(l_actor, l_action, l_mask, config.loss))


def batch_losses(model: SSA2DNetwork, batch: Batch, config: RunConfig,
                 teacher_forcing: bool = True) -> LossTerms:
    """Per-term losses averaged over the clips of *batch*."""

    if not batch:
        raise DataError("Empty batch")
    terms = [clip_losses(model, clip, config, teacher_forcing) for clip in batch]
    scale = 1.0 / len(terms)

    def _average(name: str) -> Tensor:
        acc = getattr(terms[0], name)
        for item in terms[1:]:
            acc = add(acc, getattr(item, name))
        return affine(acc, scale) if len(terms) > 1 else acc

    l_actor, l_action, l_mask = _average("l_actor"), _average("l_action"), _average("l_mask")
    return LossTerms(l_actor, l_action, l_mask, total_loss(l_actor, l_action, l_mask, config.loss))


def _check_finite(terms: LossTerms, step: int) -> None:
    for name, value in terms.values().items():
        if not math.isfinite(value):
            raise NonFiniteLossError(name, step, value)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class TrainResult:
    steps: int
    checkpoint: Path
    log_path: Path
    entries: List[TrainLogEntry] = field(default_factory=list)
    reports: List[MetricReport] = field(default_factory=list)


class Trainer:
    """Two-phase Adam training with teacher-forced masks."""

    def __init__(self, config: RunConfig, model: Optional[SSA2DNetwork] = None) -> None:
        self.config = config
        self.model = model if model is not None else SSA2DNetwork(config.network)
        schedule = config.schedule
        self.optimizer = Adam(
            self.model.parameters(),
            lr=schedule.phase1_lr,
            beta1=schedule.beta1,
            beta2=schedule.beta2,
            eps=schedule.adam_eps,
            grad_clip=schedule.grad_clip,
        )
        self.step = 0

    def phases(self) -> List[Tuple[int, float]]:
        schedule = self.config.schedule
        return [(schedule.phase1_epochs, schedule.phase1_lr), (schedule.phase2_epochs, schedule.phase2_lr)]

    def _apply(self, pending: List[LossTerms], log: TextIO) -> TrainLogEntry:
        self.optimizer.step()
        self.optimizer.zero_grad()
        self.step += 1
        count = len(pending)
        values = [terms.values() for terms in pending]
        l_actor = sum(v["l_actor"] for v in values) / count
        l_action = sum(v["l_action"] for v in values) / count
        l_mask = sum(v["l_mask"] for v in values) / count
        weights = self.config.loss
        # total is the weighted sum of the logged terms
        total = weights.w_actor * l_actor + weights.w_action * l_action + weights.w_mask * l_mask
        entry = TrainLogEntry(self.step, l_actor, l_action, l_mask, total, self.optimizer.lr)
        log.write(entry.format() + "\n")
        log.flush()
        LOGGER.debug(entry.format())
        return entry

    def train_batch(self, batch: Batch, accumulation: int = 1) -> LossTerms:
        """Forward and backward one batch, leaving gradients accumulated on the parameters.

        *accumulation* is the number of batches that share the next update;
        each contributes ``1 / accumulation`` of its objective.
        """

        with Tape() as tape:
            terms = batch_losses(self.model, batch, self.config)
            _check_finite(terms, self.step + 1)
            objective = terms.total if accumulation == 1 else affine(terms.total, 1.0 / accumulation)
            tape.backward(objective)
        return terms

    def train(self, data_dir: Path, out_dir: Path, eval_dir: Optional[Path] = None) -> TrainResult:
        config = self.config
        schedule = config.schedule
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(out_dir / CONFIG_NAME, config_to_dict(config))
        log_path = out_dir / LOG_NAME
        checkpoint = out_dir / CHECKPOINT_NAME
        result = TrainResult(steps=0, checkpoint=checkpoint, log_path=log_path)
        accumulation = schedule.accumulation_steps
        limit = schedule.max_steps
        clips = dataset_size(data_dir)
        per_epoch = math.ceil(clips / schedule.batch_size)
        LOGGER.info("Training on %d clips, %d batches per epoch, %d per update", clips, per_epoch, accumulation)

        epoch = 0
        with log_path.open("a", encoding="utf-8") as log:
            for phase, (epochs, lr) in enumerate(self.phases(), start=1):
                self.optimizer.lr = lr
                for _ in range(epochs):
                    if limit is not None and self.step >= limit:
                        break
                    epoch += 1
                    LOGGER.info("Epoch %d (phase %d, lr=%g)", epoch, phase, lr)
                    pending: List[LossTerms] = []
                    batches = dataset_iter(data_dir, schedule.batch_size,
                                           shuffle_seed=config.seed * 1_000_003 + epoch,
                                           prefetch=schedule.prefetch)
                    for index, batch in enumerate(batches):
                        # the last window of an epoch may hold fewer batches
                        window = min(accumulation, per_epoch - (index - len(pending)))
                        pending.append(self.train_batch(batch, window))
                        if len(pending) == window:
                            result.entries.append(self._apply(pending, log))
                            pending = []
                            self._maybe_checkpoint(out_dir)
                            if limit is not None and self.step >= limit:
                                break
                    if pending:
                        result.entries.append(self._apply(pending, log))
                        self._maybe_checkpoint(out_dir)
                    if eval_dir is not None and schedule.eval_every and epoch % schedule.eval_every == 0:
                        report = evaluate_dataset(self.model, eval_dir, config)
                        result.reports.append(report)
                        LOGGER.info("Epoch %d eval: %s", epoch, summarize(report))

        save_checkpoint(checkpoint, self.model, config)
        result.steps = self.step
        LOGGER.info("Training finished after %d steps", self.step)
        return result

    def _maybe_checkpoint(self, out_dir: Path) -> None:
        every = self.config.schedule.checkpoint_every
        if every and self.step % every == 0:
            save_checkpoint(out_dir / f"model_step{self.step:06d}.stc", self.model, self.config)


def train(config: RunConfig, data_dir: Path, out_dir: Path, eval_dir: Optional[Path] = None,
          model: Optional[SSA2DNetwork] = None) -> TrainResult:
    return Trainer(config, model).train(data_dir, out_dir, eval_dir)


# ---------------------------------------------------------------------------
# Inference and evaluation
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class Prediction:
    actor: np.ndarray
    action: np.ndarray
    mask: np.ndarray

    def to_tensors(self) -> Dict[str, np.ndarray]:
        return {
            "actor_pred": self.actor.astype(np.int32),
            "action_pred": self.action.astype(np.int32),
            "mask_pred": self.mask.astype(np.int32),
        }


def labels_from_scores(scores: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over channels; ties resolve to the lowest class index."""

    return np.argmax(scores, axis=-1).astype(np.int32)


def predict(model: SSA2DNetwork, video: np.ndarray) -> DetectionOutput:
    with no_grad():
        return model(Tensor(video, dtype=model.dtype))


def infer(model: SSA2DNetwork, video: np.ndarray) -> Prediction:
    """Label volumes at input resolution using the predicted mask."""

    out = predict(model, video)
    return Prediction(
        actor=labels_from_scores(out.actor_d.data),
        action=labels_from_scores(out.action_d.data),
        mask=labels_from_scores(out.stu_mask.data),
    )


def evaluate_dataset(model: Optional[SSA2DNetwork], data_dir: Path, config: RunConfig,
                     oracle: bool = False) -> MetricReport:
    """Score every clip of *data_dir*; *oracle* compares ground truth with itself."""

    net = config.network
    accumulator = MetricAccumulator(
        net.c_actor,
        net.c_action,
        valid_pairs(),
        include_background=config.metrics.miou_include_background,
        top_k=config.metrics.top_k_frequent,
    )
    for batch in dataset_iter(data_dir, 1):
        for clip in batch:
            if oracle:
                accumulator.update(clip.actor_gt, clip.action_gt, clip.actor_gt, clip.action_gt)
                continue
            if model is None:
                raise DataError("evaluate_dataset needs a model unless oracle mode is on")
            prediction = infer(model, clip.video)
            accumulator.update(prediction.actor, prediction.action, clip.actor_gt, clip.action_gt)
    return accumulator.report()

