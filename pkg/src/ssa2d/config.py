"""Configuration loading utilities for SSA2D runs.

A run configuration is a YAML mapping with five sections (``network``,
``synth``, ``schedule``, ``loss``, ``metrics``) plus a top-level ``seed``.
Sections may be written nested or as flat dotted keys
(``network.profile: toy``); both spellings may be mixed. Unknown keys are
rejected and every invalid value raises :class:`ConfigurationError` naming
the dotted key.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import yaml


class ConfigurationError(RuntimeError):
    """Raised when configuration parsing or validation fails."""


Shape3 = Tuple[int, int, int]

ACTOR_SHAPES = ("circle", "square", "triangle")
ACTION_MOTIONS = ("right", "left", "up", "down")


def _divide(shape: Sequence[int], divisor: Sequence[int]) -> Shape3:
    """Per-axis ``shape // divisor``; every axis must divide exactly."""

    if len(shape) != 3 or len(divisor) != 3:
        raise ConfigurationError(f"Expected three axes, got shape {tuple(shape)} and divisor {tuple(divisor)}")
    if any(d < 1 or n % d for n, d in zip(shape, divisor)):
        raise ConfigurationError(f"Shape {tuple(shape)} is not divisible by {tuple(divisor)}")
    t, h, w = (int(n) // int(d) for n, d in zip(shape, divisor))
    return (t, h, w)


@dataclass(slots=True)
class NetworkConfig:
    """Architecture profile of the three-branch network."""

    profile: str = "toy"
    input_shape: Shape3 = (8, 32, 32)
    c_actor: int = len(ACTOR_SHAPES) + 1
    c_action: int = len(ACTION_MOTIONS) + 1
    c_ap: int = 16
    encoder_channels: Tuple[int, ...] = (16, 32)
    # (temporal, spatial) pooling stride per encoder stage
    encoder_strides: Tuple[Tuple[int, int], ...] = ((1, 2), (2, 2))
    decoder_channels: int = 16
    # input shape divided by these gives the actor/action and mask decoder outputs
    branch_divisor: Shape3 = (2, 2, 2)
    mask_divisor: Shape3 = (2, 1, 1)
    atrous_rates: Tuple[int, ...] = (1, 2)
    pyramid_levels: int = 3
    ap_infusion: bool = True
    ssa_masking: bool = True
    atrous: bool = True
    multi_scale: bool = True
    fusion_mode: str = "concat"
    action_activation: str = "softmax"
    mask_threshold: Optional[float] = None
    seed: int = 0

    @property
    def encoder_stride(self) -> Tuple[int, int]:
        temporal = spatial = 1
        for t_stride, s_stride in self.encoder_strides:
            temporal *= t_stride
            spatial *= s_stride
        return temporal, spatial

    @property
    def encoder_shape(self) -> Shape3:
        t_total, s_total = self.encoder_stride
        t, h, w = self.input_shape
        return (t // t_total, h // s_total, w // s_total)

    @property
    def branch_shape(self) -> Shape3:
        return _divide(self.input_shape, self.branch_divisor)

    @property
    def mask_shape(self) -> Shape3:
        return _divide(self.input_shape, self.mask_divisor)

    def check_input_shape(self, shape: Sequence[int]) -> None:
        """Raise unless a ``[T, H, W]`` clip fits this profile exactly."""

        t_total, s_total = self.encoder_stride
        t, h, w = (int(v) for v in shape[:3])
        if t % t_total or h % s_total or w % s_total:
            raise ConfigurationError(
                f"Input {tuple(shape[:3])} is not divisible by encoder stride "
                f"(t={t_total}, h=w={s_total})"
            )
        for name, divisor in (("branch_divisor", self.branch_divisor), ("mask_divisor", self.mask_divisor)):
            if any(n % d for n, d in zip((t, h, w), divisor)):
                raise ConfigurationError(f"Input {(t, h, w)} is not divisible by network.{name} {divisor}")

    def validate(self) -> None:
        if self.profile not in NETWORK_PROFILES:
            raise ConfigurationError(f"network.profile must be one of {sorted(NETWORK_PROFILES)}")
        if self.c_actor < 2 or self.c_action < 2:
            raise ConfigurationError("network.c_actor and network.c_action must count background plus >= 1 class")
        if len(self.encoder_channels) != len(self.encoder_strides) or not self.encoder_channels:
            raise ConfigurationError("network.encoder_channels and network.encoder_strides must have equal, non-zero length")
        if self.fusion_mode not in ("concat", "add"):
            raise ConfigurationError("network.fusion_mode must be 'concat' or 'add'")
        if self.action_activation not in ("softmax", "sigmoid"):
            raise ConfigurationError("network.action_activation must be 'softmax' or 'sigmoid'")
        if self.mask_threshold is not None and not 0.0 < self.mask_threshold < 1.0:
            raise ConfigurationError("network.mask_threshold must lie strictly between 0 and 1")
        self.check_input_shape(self.input_shape)
        encoder = self.encoder_shape
        for name, target in (("branch_divisor", self.branch_shape), ("mask_divisor", self.mask_shape)):
            for axis, (low, high) in enumerate(zip(encoder, target)):
                ratio, rest = divmod(high, low)
                if rest or ratio < 1 or ratio & (ratio - 1):
                    raise ConfigurationError(
                        f"network.{name}: decoder output {target} is not a power-of-two upsampling "
                        f"of encoder output {encoder} on axis {axis}"
                    )
        if self.branch_shape[1] > self.mask_shape[1] or self.branch_shape[0] != self.mask_shape[0]:
            raise ConfigurationError(
                "network.mask_divisor must give the mask branch the action branch's temporal size "
                "and at least its spatial size"
            )


@dataclass(slots=True)
class SynthConfig:
    """Synthetic moving-shapes benchmark settings."""

    t: int = 8
    h: int = 32
    w: int = 32
    actors_min: int = 1
    actors_max: int = 3
    size_min: int = 6
    size_max: int = 10
    speed_min: int = 1
    speed_max: int = 2
    background: str = "flat"
    seed: int = 0

    def validate(self) -> None:
        if min(self.t, self.h, self.w) < 1:
            raise ConfigurationError("synth.t, synth.h and synth.w must be positive")
        if not 0 <= self.actors_min <= self.actors_max:
            raise ConfigurationError("synth.actors_min must be >= 0 and <= synth.actors_max")
        if not 1 <= self.size_min <= self.size_max:
            raise ConfigurationError("synth.size_min must be >= 1 and <= synth.size_max")
        if not 0 <= self.speed_min <= self.speed_max:
            raise ConfigurationError("synth.speed_min must be >= 0 and <= synth.speed_max")
        if self.background not in ("flat", "noise"):
            raise ConfigurationError("synth.background must be 'flat' or 'noise'")
        travel = self.speed_max * (self.t - 1)
        if self.size_max + travel > min(self.h, self.w):
            raise ConfigurationError(
                f"synth: a shape of size {self.size_max} moving {travel} px does not fit a "
                f"{self.h}x{self.w} frame"
            )


@dataclass(slots=True)
class TrainSchedule:
    """Two-phase Adam schedule and bookkeeping cadence."""

    phase1_epochs: int = 5
    phase1_lr: float = 1e-4
    phase2_epochs: int = 6
    phase2_lr: float = 1e-5
    batch_size: int = 14
    accumulation_steps: int = 1
    max_steps: Optional[int] = None
    eval_every: int = 1
    checkpoint_every: int = 0
    grad_clip: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    prefetch: int = 2

    def validate(self) -> None:
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ConfigurationError("schedule.phase1_epochs and schedule.phase2_epochs must be >= 0")
        if self.batch_size < 1 or self.accumulation_steps < 1:
            raise ConfigurationError("schedule.batch_size and schedule.accumulation_steps must be >= 1")
        if self.phase1_lr <= 0 or self.phase2_lr <= 0:
            raise ConfigurationError("schedule learning rates must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigurationError("schedule.max_steps must be >= 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigurationError("schedule.beta1 and schedule.beta2 must lie in [0, 1)")


@dataclass(slots=True)
class LossWeights:
    """Per-task loss weights and the dice smoothing term."""

    w_actor: float = 1.3
    w_action: float = 1.3
    w_mask: float = 0.3
    dice_epsilon: float = 1e-6

    def validate(self) -> None:
        if min(self.w_actor, self.w_action, self.w_mask) < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.dice_epsilon <= 0:
            raise ConfigurationError("loss.dice_epsilon must be positive")


@dataclass(slots=True)
class MetricOptions:
    """Evaluation protocol switches."""

    miou_include_background: bool = False
    top_k_frequent: int = 0

    def validate(self) -> None:
        if self.top_k_frequent < 0:
            raise ConfigurationError("metrics.top_k_frequent must be >= 0")


@dataclass(slots=True)
class RunConfig:
    """Top-level configuration container."""

    network: NetworkConfig = field(default_factory=NetworkConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    loss: LossWeights = field(default_factory=LossWeights)
    metrics: MetricOptions = field(default_factory=MetricOptions)
    seed: int = 0


NETWORK_PROFILES: Dict[str, Dict[str, Any]] = {
    "toy": {},
    "paper": {
        "input_shape": (16, 224, 224),
        "encoder_channels": (32, 64, 128, 256),
        "encoder_strides": ((1, 2), (2, 2), (1, 2), (2, 2)),
        "decoder_channels": 64,
        "branch_divisor": (2, 4, 4),
        "mask_divisor": (2, 2, 2),
        "atrous_rates": (1, 2, 4),
    },
}

SCHEDULE_PROFILES: Dict[str, Dict[str, Any]] = {
    "toy": {
        "phase1_epochs": 8,
        "phase1_lr": 1e-3,
        "phase2_epochs": 2,
        "phase2_lr": 1e-4,
        "batch_size": 2,
        "max_steps": 2000,
    },
    "paper": {},
}


# ---------------------------------------------------------------------------
# Value converters
# ---------------------------------------------------------------------------

Converter = Callable[[str, Any], Any]


def _as_int(minimum: Optional[int] = None) -> Converter:
    def convert(key: str, value: Any) -> int:
        if isinstance(value, bool):
            raise ConfigurationError(f"{key} must be an integer, got {value!r}")
        try:
            result = int(value)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{key} must be an integer, got {value!r}") from exc
        if isinstance(value, float) and value != result:
            raise ConfigurationError(f"{key} must be an integer, got {value!r}")
        if minimum is not None and result < minimum:
            raise ConfigurationError(f"{key} must be >= {minimum}, got {result}")
        return result

    return convert


def _as_optional_int(key: str, value: Any) -> Optional[int]:
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
        return None
    return _as_int(0)(key, value)


def _as_float(key: str, value: Any) -> float:
    if isinstance(value, bool):
        raise ConfigurationError(f"{key} must be a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{key} must be a number, got {value!r}") from exc


def _as_optional_float(key: str, value: Any) -> Optional[float]:
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
        return None
    return _as_float(key, value)


def _as_bool(key: str, value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "yes", "on", "1"):
        return True
    if isinstance(value, str) and value.lower() in ("false", "no", "off", "0"):
        return False
    if isinstance(value, int) and value in (0, 1):
        return bool(value)
    raise ConfigurationError(f"{key} must be a boolean, got {value!r}")


def _as_str(key: str, value: Any) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigurationError(f"{key} must be a non-empty string, got {value!r}")
    return value


def _split(value: Any) -> List[Any]:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _as_int_tuple(length: Optional[int] = None, minimum: int = 1) -> Converter:
    def convert(key: str, value: Any) -> Tuple[int, ...]:
        items = tuple(_as_int(minimum)(key, item) for item in _split(value))
        if length is not None and len(items) != length:
            raise ConfigurationError(f"{key} must have {length} entries, got {len(items)}")
        if not items:
            raise ConfigurationError(f"{key} must not be empty")
        return items

    return convert


def _as_stride_pairs(key: str, value: Any) -> Tuple[Tuple[int, int], ...]:
    pairs = []
    for item in _split(value):
        if isinstance(item, str):
            item = item.replace(":", "x").split("x")
        pair = _as_int_tuple(2, 1)(key, item)
        pairs.append((pair[0], pair[1]))
    if not pairs:
        raise ConfigurationError(f"{key} must list at least one stage")
    return tuple(pairs)


_SECTION_FIELDS: Dict[str, Dict[str, Converter]] = {
    "network": {
        "profile": _as_str,
        "input_shape": _as_int_tuple(3),
        "c_actor": _as_int(2),
        "c_action": _as_int(2),
        "c_ap": _as_int(1),
        "encoder_channels": _as_int_tuple(),
        "encoder_strides": _as_stride_pairs,
        "decoder_channels": _as_int(1),
        "branch_divisor": _as_int_tuple(3),
        "mask_divisor": _as_int_tuple(3),
        "atrous_rates": _as_int_tuple(),
        "pyramid_levels": _as_int(1),
        "ap_infusion": _as_bool,
        "ssa_masking": _as_bool,
        "atrous": _as_bool,
        "multi_scale": _as_bool,
        "fusion_mode": _as_str,
        "action_activation": _as_str,
        "mask_threshold": _as_optional_float,
        "seed": _as_int(0),
    },
    "synth": {
        "t": _as_int(1),
        "h": _as_int(1),
        "w": _as_int(1),
        "actors_min": _as_int(0),
        "actors_max": _as_int(0),
        "size_min": _as_int(1),
        "size_max": _as_int(1),
        "speed_min": _as_int(0),
        "speed_max": _as_int(0),
        "background": _as_str,
        "seed": _as_int(0),
    },
    "schedule": {
        "phase1_epochs": _as_int(0),
        "phase1_lr": _as_float,
        "phase2_epochs": _as_int(0),
        "phase2_lr": _as_float,
        "batch_size": _as_int(1),
        "accumulation_steps": _as_int(1),
        "max_steps": _as_optional_int,
        "eval_every": _as_int(0),
        "checkpoint_every": _as_int(0),
        "grad_clip": _as_float,
        "beta1": _as_float,
        "beta2": _as_float,
        "adam_eps": _as_float,
        "prefetch": _as_int(1),
    },
    "loss": {
        "w_actor": _as_float,
        "w_action": _as_float,
        "w_mask": _as_float,
        "dice_epsilon": _as_float,
    },
    "metrics": {
        "miou_include_background": _as_bool,
        "top_k_frequent": _as_int(0),
    },
}


def _flatten(raw: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in raw.items():
        if not isinstance(key, str) or not key:
            raise ConfigurationError(f"Configuration keys must be non-empty strings, got {key!r}")
        dotted = f"{prefix}{key}"
        nested = _flatten(value, f"{dotted}.") if isinstance(value, Mapping) else {dotted: value}
        for name, item in nested.items():
            if name in flat:
                raise ConfigurationError(f"Duplicate configuration key {name!r}")
            flat[name] = item
    return flat


_KEY_VALUE_LINE = re.compile(r"^\s*[A-Za-z_][\w.]*\s*=")


def _key_value_lines(text: str) -> Optional[List[str]]:
    """Body lines of a flat ``key = value`` file, or None when *text* is not one."""

    lines = [line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if lines and all(_KEY_VALUE_LINE.match(line) for line in lines):
        return lines
    return None


def _load_yaml(path: Path) -> Dict[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigurationError(f"Configuration file not found: {path}") from exc

    lines = _key_value_lines(text)
    if lines is not None:
        values: Dict[str, Any] = {}
        for line in lines:
            for key, value in parse_overrides([line]).items():
                if key in values:
                    raise ConfigurationError(f"Duplicate configuration key {key!r} in {path}")
                values[key] = value
        return values

    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"Invalid YAML in configuration file: {path}") from exc

    if not isinstance(data, dict):
        raise ConfigurationError("Configuration root must be a mapping")

    return data


def parse_overrides(pairs: Iterable[str]) -> Dict[str, Any]:
    """Turn ``key.path=value`` strings into a flat mapping; values parse as YAML scalars."""

    overrides: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, text = pair.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"Override {pair!r} must look like key.path=value")
        try:
            overrides[key] = yaml.safe_load(text) if text.strip() else None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"Override {pair!r} has an unparsable value") from exc
    return overrides


def parse_config_dict(raw: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Parse configuration from an in-memory mapping, then apply dotted *overrides*."""

    if not isinstance(raw, Mapping):
        raise ConfigurationError("Configuration root must be a mapping")

    flat = _flatten(raw)
    if overrides:
        flat.update(_flatten(dict(overrides)))

    values: Dict[str, Dict[str, Any]] = {section: {} for section in _SECTION_FIELDS}
    seed = 0
    for dotted, value in flat.items():
        if dotted == "seed":
            seed = _as_int(0)(dotted, value)
            continue
        section, _, name = dotted.partition(".")
        converters = _SECTION_FIELDS.get(section)
        if converters is None or name not in converters:
            raise ConfigurationError(f"Unknown configuration key {dotted!r}")
        values[section][name] = converters[name](dotted, value)

    profile = values["network"].get("profile", "toy")
    if profile not in NETWORK_PROFILES:
        raise ConfigurationError(f"network.profile must be one of {sorted(NETWORK_PROFILES)}, got {profile!r}")

    network_values = {**NETWORK_PROFILES[profile], **values["network"]}
    network_values.setdefault("seed", seed)
    network = NetworkConfig(**network_values)

    synth_values = dict(values["synth"])
    for axis, size in zip(("t", "h", "w"), network.input_shape):
        synth_values.setdefault(axis, size)
    synth_values.setdefault("seed", seed)
    synth = SynthConfig(**synth_values)

    schedule = TrainSchedule(**{**SCHEDULE_PROFILES[profile], **values["schedule"]})
    loss = LossWeights(**values["loss"])
    metrics = MetricOptions(**values["metrics"])

    for part in (network, synth, schedule, loss, metrics):
        part.validate()
    if (synth.t, synth.h, synth.w) != network.input_shape:
        raise ConfigurationError(
            f"synth.t/h/w {(synth.t, synth.h, synth.w)} must match network.input_shape {network.input_shape}"
        )

    return RunConfig(network=network, synth=synth, schedule=schedule, loss=loss, metrics=metrics, seed=seed)


def load_config(path: Optional[Path], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Load and validate configuration from a YAML file (or defaults when *path* is None)."""

    raw = _load_yaml(path) if path is not None else {}
    return parse_config_dict(raw, overrides)


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(item) for item in value]
    return value


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    """Convert a RunConfig instance back into a serialisable nested mapping."""

    result: Dict[str, Any] = {"seed": config.seed}
    for section in _SECTION_FIELDS:
        part = getattr(config, section)
        result[section] = {f.name: _plain(getattr(part, f.name)) for f in fields(part)}
    return result


def config_to_yaml(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


def config_from_yaml(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError("Embedded configuration is not valid YAML") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("Embedded configuration root must be a mapping")
    return parse_config_dict(raw)


def save_config(path: Path, raw: Mapping[str, Any]) -> RunConfig:
    """Validate and write configuration data to disk.

    Returns the parsed RunConfig instance on success.
    """

    config = parse_config_dict(raw)
    with path.open("w", encoding="utf-8") as handle:
        yaml.safe_dump(config_to_dict(config), handle, sort_keys=False)
    return config


def worker_threads(default: int = 4) -> int:
    """Worker cap from ``SSA2D_THREADS`` (falls back to *default*)."""

    text = os.environ.get("SSA2D_THREADS")
    if not text:
        return default
    try:
        value = int(text)
    except ValueError as exc:
        raise ConfigurationError(f"SSA2D_THREADS must be an integer, got {text!r}") from exc
    if value < 1:
        raise ConfigurationError("SSA2D_THREADS must be >= 1")
    return value
