"""Multi-rate atrous (dilated) convolution block."""

from __future__ import annotations

from typing import List, Sequence

from ..tensor import ShapeError, Tensor, concat_channels, relu
from .base import Layer
from .conv import Conv3D, Conv3DParams, conv3d


def atrous_branch_params(rate: int) -> dict:
    """Geometry of one 3x3x3 branch: dilation on H and W only, padded to keep size."""

    return {"dilation": (1, rate, rate), "padding": (1, rate, rate)}


def atrous_block(x: Tensor, rates: Sequence[int], branches: Sequence[Conv3DParams],
                 fuse: Conv3DParams) -> Tensor:
    """Parallel dilated branches, concatenated on channels, fused by a 1x1x1 conv."""

    if not rates or len(rates) != len(branches):
        raise ShapeError(f"atrous_block: {len(branches)} branch kernels for rates {list(rates)}")
    merged = None
    for rate, params in zip(rates, branches):
        if params.dilation[1:] != (rate, rate):
            raise ShapeError(f"atrous_block: branch dilation {params.dilation} does not match rate {rate}")
        out = relu(conv3d(x, params))
        if out.shape[:3] != x.shape[:3]:
            raise ShapeError(f"atrous_block: rate {rate} changes size {x.shape[:3]} -> {out.shape[:3]}")
        merged = out if merged is None else concat_channels(merged, out)
    assert merged is not None
    return relu(conv3d(merged, fuse))


class AtrousBlock(Layer):
    """Layer wrapper owning one branch per rate plus the fusion conv."""

    def __init__(self, name: str, in_channels: int, branch_channels: int, out_channels: int,
                 rates: Sequence[int], seed: int = 0) -> None:
        super().__init__(name)
        self.rates: List[int] = [int(r) for r in rates]
        if not self.rates or min(self.rates) < 1:
            raise ShapeError(f"Atrous rates must be positive integers, got {self.rates}")
        self.branches: List[Conv3D] = []
        for rate in self.rates:
            branch = Conv3D(f"{name}.rate{rate}", in_channels, branch_channels, 3,
                            seed=seed, **atrous_branch_params(rate))
            self.branches.append(self.add_child(f"rate{rate}", branch))
        self.fuse = self.add_child(
            "fuse", Conv3D(f"{name}.fuse", branch_channels * len(self.rates), out_channels, 1, seed=seed)
        )

    @property
    def out_channels(self) -> int:
        return self.fuse.params.out_channels

    def forward(self, x: Tensor) -> Tensor:
        return atrous_block(x, self.rates, [b.params for b in self.branches], self.fuse.params)
