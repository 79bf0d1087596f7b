"""Single-shot actor-action detection on synthetic video, built on a small numpy autodiff core."""

from . import config, container, metrics, network, synth, tensor, trainer

__all__ = [
    "config",
    "container",
    "metrics",
    "network",
    "synth",
    "tensor",
    "trainer",
]
