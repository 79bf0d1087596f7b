"""Single-shot actor-action network: shared encoder and three decoder branches.

The actor branch produces per-pixel actor scores and the actor prior
``f_ap``. The mask branch produces the spatio-temporal foreground mask. The
action branch fuses the actor prior into its features (AP-Infusion), filters
them with the mask (SSA-Masking) and predicts per-pixel action scores. The
graph depends only on the configuration and the input shape, never on how
many actors a clip contains.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import ConfigurationError, NetworkConfig, Shape3
from .layers import (
    AtrousBlock,
    Conv3D,
    Conv3DParams,
    ConvBlock,
    Deconv3D,
    Layer,
    conv3d,
    maxpool3d,
    resize_nearest,
    upsample_trilinear,
)
from .tensor import (
    ContractError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat_channels,
    elementwise_mul,
    relu,
    sigmoid,
    slice_channels,
    softmax_channels,
)

LOGGER = logging.getLogger(__name__)


@dataclass(slots=True)
class DetectionOutput:
    """Per-pixel scores at input resolution plus the mask fed to SSA-Masking."""

    actor_d: Tensor
    action_d: Tensor
    stu_mask: Tensor
    f_mask: Tensor

    @property
    def mask_fg(self) -> Tensor:
        """Foreground channel of ``stu_mask``."""

        return slice_channels(self.stu_mask, 1, 2)


def _concat_all(volumes: Sequence[Tensor]) -> Tensor:
    merged = volumes[0]
    for volume in volumes[1:]:
        merged = concat_channels(merged, volume)
    return merged


def _upsample_to(x: Tensor, shape: Shape3) -> Tensor:
    factors = []
    for have, want in zip(x.shape[:3], shape):
        if want % have:
            raise ShapeError(f"Cannot upsample {x.shape[:3]} to {shape} by integer factors")
        factors.append(want // have)
    if all(f == 1 for f in factors):
        return x
    return upsample_trilinear(x, factors)


# ---------------------------------------------------------------------------
# Fusion operations
# ---------------------------------------------------------------------------


def ap_infusion(
    f_a: Tensor,
    f_ap: Optional[Tensor],
    fuse: Conv3DParams,
    mode: str = "concat",
    project: Optional[Conv3DParams] = None,
) -> Tensor:
    """Fuse the actor prior into action features: ``relu(conv(<f_a, f_ap>))``.

    Without a prior (None or zero channels) this is ``relu(conv(f_a))``, the
    ablation path. In ``add`` mode the prior is projected to the width of
    *f_a* by *project* and summed instead of concatenated.
    """

    if f_ap is None or f_ap.channels == 0:
        return relu(conv3d(f_a, fuse))
    if f_ap.shape[:3] != f_a.shape[:3]:
        raise ShapeError(f"ap_infusion: actor prior {f_ap.shape} is not aligned with {f_a.shape}")
    if mode == "concat":
        merged = concat_channels(f_a, f_ap)
    elif mode == "add":
        if project is None:
            raise ContractError("ap_infusion: add mode needs a projection kernel")
        merged = add(f_a, conv3d(f_ap, project))
    else:
        raise ContractError(f"ap_infusion: unknown fusion mode {mode!r}")
    return relu(conv3d(merged, fuse))


def ssa_masking(f_act: Tensor, f_mask: Tensor, enabled: bool = True) -> Tensor:
    """``<f_act * f_mask, f_act>``; the identity when *enabled* is false."""

    if f_mask.shape != f_act.shape[:3] + (1,):
        raise ShapeError(f"ssa_masking: mask {f_mask.shape} is not aligned with {f_act.shape}")
    if not enabled:
        return f_act
    return concat_channels(elementwise_mul(f_act, f_mask), f_act)


# ---------------------------------------------------------------------------
# Encoder / decoder
# ---------------------------------------------------------------------------


class Encoder(Layer):
    """Strided stack of conv blocks; each stage's pre-pool output is a skip."""

    def __init__(self, cfg: NetworkConfig) -> None:
        super().__init__("encoder")
        self.strides = [(t, s, s) for t, s in cfg.encoder_strides]
        self.stages: List[ConvBlock] = []
        channels = 3
        for index, width in enumerate(cfg.encoder_channels):
            block = ConvBlock(f"encoder.stage{index}", channels, width, seed=cfg.seed)
            self.stages.append(self.add_child(f"stage{index}", block))
            channels = width
        self.head = self.add_child("head", ConvBlock("encoder.head", channels, channels, seed=cfg.seed))
        self.cfg = cfg

    @property
    def out_channels(self) -> int:
        return self.head.out_channels

    def skip_layout(self) -> List[Tuple[Shape3, int]]:
        """Shape and width of each skip volume for the configured input."""

        layout = []
        shape = self.cfg.input_shape
        for stage, stride in zip(self.stages, self.strides):
            layout.append((shape, stage.out_channels))
            shape = tuple(n // s for n, s in zip(shape, stride))  # type: ignore[assignment]
        return layout

    def encode(self, v: Tensor) -> Tuple[Tensor, List[Tensor]]:
        if v.ndim != 4 or v.channels != 3:
            raise ShapeError(f"Encoder expects an RGB clip [T, H, W, 3], got {v.shape}")
        self.cfg.check_input_shape(v.shape)
        skips: List[Tensor] = []
        x = v
        for stage, stride in zip(self.stages, self.strides):
            x = stage(x)
            skips.append(x)
            x = maxpool3d(x, stride)
        return self.head(x), skips

    def forward(self, x: Tensor) -> Tensor:
        return self.encode(x)[0]


@dataclass(slots=True)
class _DecoderStage:
    up: Deconv3D
    skip_index: Optional[int]
    skip_pool: int
    fuse: Optional[ConvBlock]


class Decoder(Layer):
    """Deconvolution stages from the encoder output up to a branch target shape.

    A stage doubles every axis still below the target. When an encoder skip
    has the stage's spatial size it is fused in (temporally max-pooled down
    when longer), by channel concatenation followed by a conv block.
    """

    def __init__(self, name: str, cfg: NetworkConfig, target: Shape3, out_channels: int,
                 skip_layout: Sequence[Tuple[Shape3, int]]) -> None:
        super().__init__(name)
        self.target = tuple(target)
        width = cfg.decoder_channels
        enc_channels = cfg.encoder_channels[-1]
        shape = cfg.encoder_shape

        self.atrous: Optional[AtrousBlock] = None
        if cfg.atrous:
            self.atrous = self.add_child("atrous", AtrousBlock(
                f"{name}.atrous", enc_channels, width, enc_channels, cfg.atrous_rates, seed=cfg.seed
            ))

        self.stages: List[_DecoderStage] = []
        level_channels = [enc_channels]
        channels = enc_channels
        while shape != self.target:
            factor = tuple(2 if have < want else 1 for have, want in zip(shape, self.target))
            index = len(self.stages)
            up = self.add_child(f"up{index}", Deconv3D(
                f"{name}.up{index}", channels, width, kernel_size=factor, stride=factor, seed=cfg.seed
            ))
            shape = tuple(n * f for n, f in zip(shape, factor))  # type: ignore[assignment]
            if any(n > m for n, m in zip(shape, self.target)):
                raise ConfigurationError(f"{name}: decoder overshoots target {self.target} at {shape}")
            skip_index, skip_pool, fuse = None, 1, None
            for candidate, (skip_shape, skip_channels) in enumerate(skip_layout):
                if skip_shape[1:] == shape[1:] and skip_shape[0] % shape[0] == 0:
                    skip_index, skip_pool = candidate, skip_shape[0] // shape[0]
                    fuse = self.add_child(f"fuse{index}", ConvBlock(
                        f"{name}.fuse{index}", width + skip_channels, width, seed=cfg.seed
                    ))
                    break
            self.stages.append(_DecoderStage(up, skip_index, skip_pool, fuse))
            level_channels.append(width)
            channels = width

        self.pyramid: Optional[Conv3D] = None
        self.pyramid_levels = min(cfg.pyramid_levels, len(level_channels))
        if cfg.multi_scale and self.pyramid_levels > 1:
            self.pyramid = self.add_child("pyramid", Conv3D(
                f"{name}.pyramid", sum(level_channels[-self.pyramid_levels:]), width, 1, seed=cfg.seed
            ))
            channels = width
        self.head = self.add_child("out", ConvBlock(f"{name}.out", channels, out_channels, seed=cfg.seed))

    @property
    def out_channels(self) -> int:
        return self.head.out_channels

    def decode(self, f_enc: Tensor, skips: Sequence[Tensor]) -> Tensor:
        x = self.atrous(f_enc) if self.atrous is not None else f_enc
        levels = [x]
        for stage in self.stages:
            x = relu(stage.up(x))
            if stage.skip_index is not None and stage.fuse is not None:
                if stage.skip_index >= len(skips):
                    raise ConfigurationError(f"{self.name}: missing encoder skip {stage.skip_index}")
                skip = skips[stage.skip_index]
                if stage.skip_pool > 1:
                    skip = maxpool3d(skip, (stage.skip_pool, 1, 1))
                if skip.shape[:3] != x.shape[:3]:
                    raise ConfigurationError(
                        f"{self.name}: skip {skip.shape} incompatible with stage output {x.shape}"
                    )
                x = stage.fuse(concat_channels(x, skip))
            levels.append(x)
        if self.pyramid is not None:
            chosen = levels[-self.pyramid_levels:]
            x = conv3d(_concat_all([_upsample_to(level, self.target) for level in chosen]), self.pyramid.params)
        return self.head(x)

    def forward(self, x: Tensor) -> Tensor:
        return self.decode(x, [])


# ---------------------------------------------------------------------------
# Full network
# ---------------------------------------------------------------------------


class SSA2DNetwork(Layer):
    """Shared encoder, actor/action/mask branches and prediction heads."""

    def __init__(self, cfg: NetworkConfig) -> None:
        super().__init__("ssa2d")
        cfg.validate()
        self.cfg = cfg
        seed = cfg.seed
        width = cfg.decoder_channels

        self.encoder = self.add_child("encoder", Encoder(cfg))
        layout = self.encoder.skip_layout()
        self.actor_decoder = self.add_child("actor", Decoder("actor", cfg, cfg.branch_shape, cfg.c_ap, layout))
        self.action_decoder = self.add_child("action", Decoder("action", cfg, cfg.branch_shape, width, layout))
        self.mask_decoder = self.add_child("mask", Decoder("mask", cfg, cfg.mask_shape, width, layout))

        infusion_in = width + cfg.c_ap if cfg.ap_infusion and cfg.fusion_mode == "concat" else width
        self.ap_fuse = self.add_child("ap_fuse", Conv3D("ap_fuse", infusion_in, width, 3, seed=seed))
        self.ap_project: Optional[Conv3D] = None
        if cfg.ap_infusion and cfg.fusion_mode == "add":
            self.ap_project = self.add_child("ap_project", Conv3D("ap_project", cfg.c_ap, width, 1, seed=seed))

        head_in = 2 * width if cfg.ssa_masking else width
        self.actor_head = self.add_child("actor_head", Conv3D("actor_head", cfg.c_ap, cfg.c_actor, 1, seed=seed))
        self.action_head = self.add_child("action_head", Conv3D("action_head", head_in, cfg.c_action, 1, seed=seed))
        self.mask_head = self.add_child("mask_head", Conv3D("mask_head", width, 2, 1, seed=seed))
        LOGGER.debug("Built %s network with %d parameters", cfg.profile,
                     sum(p.size for p in self.parameters()))

    @property
    def dtype(self) -> np.dtype:
        return self.actor_head.params.kernel.dtype

    def encoder_forward(self, v: Tensor) -> Tuple[Tensor, List[Tensor]]:
        return self.encoder.encode(v)

    def _teacher_mask(self, teacher_mask: Tensor) -> Tensor:
        t, h, w = self.cfg.input_shape
        if teacher_mask.shape not in ((t, h, w), (t, h, w, 1)):
            raise ContractError(
                f"teacher_mask must have shape {(t, h, w)}, got {teacher_mask.shape}"
            )
        values = teacher_mask.data
        if not np.all((values == 0) | (values == 1)):
            raise ContractError("teacher_mask must be a {0, 1} volume")
        mask = Tensor(values.reshape(t, h, w, 1), dtype=self.dtype)
        return resize_nearest(mask, self.cfg.branch_shape)

    def forward(self, v: Tensor, teacher_mask: Optional[Tensor] = None) -> DetectionOutput:  # type: ignore[override]
        cfg = self.cfg
        if v.shape != cfg.input_shape + (3,):
            raise ContractError(f"Clip shape {v.shape} does not match network input {cfg.input_shape + (3,)}")
        v = v if v.dtype == self.dtype else as_tensor(v.data, self.dtype)
        f_enc, skips = self.encoder_forward(v)

        f_ap = self.actor_decoder.decode(f_enc, skips)
        actor_logits = conv3d(f_ap, self.actor_head.params)
        actor_d = softmax_channels(_upsample_to(actor_logits, cfg.input_shape))

        mask_logits = conv3d(self.mask_decoder.decode(f_enc, skips), self.mask_head.params)
        stu_mask = softmax_channels(_upsample_to(mask_logits, cfg.input_shape))

        if teacher_mask is not None:
            f_mask = self._teacher_mask(teacher_mask)
        else:
            foreground = slice_channels(softmax_channels(mask_logits), 1, 2)
            f_mask = resize_nearest(foreground, cfg.branch_shape)
            if cfg.mask_threshold is not None:
                f_mask = Tensor((f_mask.data > cfg.mask_threshold).astype(self.dtype))

        f_a = self.action_decoder.decode(f_enc, skips)
        f_act = ap_infusion(
            f_a,
            f_ap if cfg.ap_infusion else None,
            self.ap_fuse.params,
            cfg.fusion_mode,
            self.ap_project.params if self.ap_project is not None else None,
        )
        f_masked = ssa_masking(f_act, f_mask, cfg.ssa_masking)
        action_logits = _upsample_to(conv3d(f_masked, self.action_head.params), cfg.input_shape)
        if cfg.action_activation == "sigmoid":
            action_d = sigmoid(action_logits)
        else:
            action_d = softmax_channels(action_logits)

        return DetectionOutput(actor_d=actor_d, action_d=action_d, stu_mask=stu_mask, f_mask=f_mask)

