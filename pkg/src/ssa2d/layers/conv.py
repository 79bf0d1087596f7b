"""3D convolution and transposed convolution over ``[T, H, W, C]`` volumes.

Both directions are built from the same two kernels: a gather that sums
strided, dilated windows of a padded volume against the per-tap weight
matrices, and its exact adjoint, a scatter-add back into the padded volume.
The convolution forward pass is the gather and its input gradient is the
scatter; the transposed convolution swaps the two roles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..tensor import ShapeError, Tensor, emit, relu
from .base import Layer, layer_rng

Triple = Tuple[int, int, int]
IntOrTriple = Union[int, Sequence[int]]


def as_triple(value: IntOrTriple, what: str = "value") -> Triple:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * 3
    items = tuple(int(v) for v in value)
    if len(items) != 3:
        raise ShapeError(f"{what} must have three entries (t, h, w), got {items}")
    return items  # type: ignore[return-value]


@dataclass(slots=True)
class Conv3DParams:
    """Kernel ``[kt, kh, kw, in_ch, out_ch]``, bias ``[out_ch]`` and geometry."""

    kernel: Tensor
    bias: Tensor
    stride: Triple = (1, 1, 1)
    dilation: Triple = (1, 1, 1)
    padding: Triple = (0, 0, 0)

    def __post_init__(self) -> None:
        self.stride = as_triple(self.stride, "stride")
        self.dilation = as_triple(self.dilation, "dilation")
        self.padding = as_triple(self.padding, "padding")
        if self.kernel.ndim != 5 or any(k < 1 for k in self.kernel.shape[:3]):
            raise ShapeError(f"Kernel must be [kt, kh, kw, in, out] with sizes >= 1, got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[4],):
            raise ShapeError(f"Bias shape {self.bias.shape} does not match {self.kernel.shape[4]} outputs")
        if min(self.stride) < 1 or min(self.dilation) < 1 or min(self.padding) < 0:
            raise ShapeError(
                f"Invalid geometry stride={self.stride} dilation={self.dilation} padding={self.padding}"
            )

    @property
    def kernel_size(self) -> Triple:
        return tuple(self.kernel.shape[:3])  # type: ignore[return-value]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[3]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[4]


def conv_output_shape(size: Sequence[int], kernel: Sequence[int], stride: Sequence[int],
                      dilation: Sequence[int], padding: Sequence[int]) -> Triple:
    return tuple(  # type: ignore[return-value]
        (n + 2 * p - d * (k - 1) - 1) // s + 1
        for n, k, s, d, p in zip(size, kernel, stride, dilation, padding)
    )


def deconv_output_shape(size: Sequence[int], kernel: Sequence[int], stride: Sequence[int],
                        dilation: Sequence[int], padding: Sequence[int]) -> Triple:
    return tuple(  # type: ignore[return-value]
        (n - 1) * s - 2 * p + d * (k - 1) + 1
        for n, k, s, d, p in zip(size, kernel, stride, dilation, padding)
    )


def _window(volume: np.ndarray, tap: Triple, stride: Triple, dilation: Triple, out: Triple):
    return tuple(
        slice(t * d, t * d + s * (o - 1) + 1, s)
        for t, s, d, o in zip(tap, stride, dilation, out)
    )


def _gather(padded: np.ndarray, weights: np.ndarray, stride: Triple, dilation: Triple,
            out: Triple) -> np.ndarray:
    """Sum over taps of ``window(padded) @ weights[tap]``; weights are ``[k..., c_in, c_out]``."""

    result = np.zeros(out + (weights.shape[4],), dtype=np.result_type(padded, weights))
    for tap in np.ndindex(*weights.shape[:3]):
        result += padded[_window(padded, tap, stride, dilation, out)] @ weights[tap]
    return result


def _scatter(values: np.ndarray, weights: np.ndarray, stride: Triple, dilation: Triple,
             padded_shape: Triple) -> np.ndarray:
    """Adjoint of :func:`_gather` with respect to the padded volume."""

    out = values.shape[:3]
    result = np.zeros(padded_shape + (weights.shape[3],), dtype=np.result_type(values, weights))
    for tap in np.ndindex(*weights.shape[:3]):
        result[_window(result, tap, stride, dilation, out)] += values @ weights[tap].T
    return result


def _tap_products(padded: np.ndarray, values: np.ndarray, kernel: Triple, stride: Triple,
                  dilation: Triple) -> np.ndarray:
    """Per-tap ``window(padded)^T · values`` giving ``[k..., c_padded, c_values]``."""

    out = values.shape[:3]
    result = np.zeros(kernel + (padded.shape[3], values.shape[3]), dtype=np.result_type(padded, values))
    for tap in np.ndindex(*kernel):
        result[tap] = np.tensordot(padded[_window(padded, tap, stride, dilation, out)], values,
                                   axes=([0, 1, 2], [0, 1, 2]))
    return result


def _pad(volume: np.ndarray, padding: Triple) -> np.ndarray:
    if not any(padding):
        return volume
    return np.pad(volume, [(p, p) for p in padding] + [(0, 0)])


def _crop(volume: np.ndarray, padding: Triple) -> np.ndarray:
    return volume[tuple(slice(p, volume.shape[i] - p) for i, p in enumerate(padding))]


def conv3d(x: Tensor, p: Conv3DParams) -> Tensor:
    """Cross-correlation of ``x[T, H, W, Cin]`` with *p* plus bias."""

    if x.ndim != 4:
        raise ShapeError(f"conv3d expects [T, H, W, C], got {x.shape}")
    if x.channels != p.in_channels:
        raise ShapeError(f"conv3d: input has {x.channels} channels, kernel expects {p.in_channels}")
    out_shape = conv_output_shape(x.shape[:3], p.kernel_size, p.stride, p.dilation, p.padding)
    if min(out_shape) < 1:
        raise ShapeError(
            f"conv3d: kernel {p.kernel_size} dilation {p.dilation} does not fit input {x.shape[:3]} "
            f"with padding {p.padding}"
        )
    kernel, bias = p.kernel.data, p.bias.data
    padded = _pad(x.data, p.padding)
    out = _gather(padded, kernel, p.stride, p.dilation, out_shape) + bias

    def _backward(g: np.ndarray):
        grad_x = _crop(_scatter(g, kernel, p.stride, p.dilation, padded.shape[:3]), p.padding)
        grad_k = _tap_products(padded, g, p.kernel_size, p.stride, p.dilation)
        grad_b = g.sum(axis=(0, 1, 2))
        return grad_x, grad_k, grad_b

    arithmetic = 2 * int(np.prod(out.shape)) * int(np.prod(p.kernel_size)) * p.in_channels
    return emit("conv3d", out, (x, p.kernel, p.bias), _backward, arithmetic)


def deconv3d(x: Tensor, p: Conv3DParams) -> Tensor:
    """Transposed convolution; ``p.kernel`` is ``[k..., in_ch, out_ch]`` with ``in_ch`` = x channels.

    With the channel axes of the kernel swapped this is the adjoint of
    :func:`conv3d` under the same stride, dilation and padding.
    """

    if x.ndim != 4:
        raise ShapeError(f"deconv3d expects [T, H, W, C], got {x.shape}")
    if x.channels != p.in_channels:
        raise ShapeError(f"deconv3d: input has {x.channels} channels, kernel expects {p.in_channels}")
    out_shape = deconv_output_shape(x.shape[:3], p.kernel_size, p.stride, p.dilation, p.padding)
    if min(out_shape) < 1:
        raise ShapeError(f"deconv3d: padding {p.padding} removes the whole output for input {x.shape[:3]}")
    full_shape = tuple(o + 2 * q for o, q in zip(out_shape, p.padding))
    kernel, bias = p.kernel.data, p.bias.data
    swapped = kernel.swapaxes(3, 4)
    x_data = x.data
    out = _crop(_scatter(x_data, swapped, p.stride, p.dilation, full_shape), p.padding) + bias

    def _backward(g: np.ndarray):
        g_full = _pad(g, p.padding)
        grad_x = _gather(g_full, swapped, p.stride, p.dilation, x_data.shape[:3])
        grad_k = _tap_products(g_full, x_data, p.kernel_size, p.stride, p.dilation).swapaxes(3, 4)
        grad_b = g.sum(axis=(0, 1, 2))
        return grad_x, grad_k, grad_b

    arithmetic = 2 * x.size * int(np.prod(p.kernel_size)) * p.out_channels
    return emit("deconv3d", out, (x, p.kernel, p.bias), _backward, arithmetic)


def he_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int,
               dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=tuple(shape)).astype(dtype)


class Conv3D(Layer):
    """Convolution layer with He-uniform kernel and zero bias."""

    transposed = False

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel_size: IntOrTriple = 3,
        stride: IntOrTriple = 1,
        dilation: IntOrTriple = 1,
        padding: Optional[IntOrTriple] = None,
        seed: int = 0,
    ) -> None:
        super().__init__(name)
        size = as_triple(kernel_size, "kernel_size")
        dil = as_triple(dilation, "dilation")
        if padding is None:
            # "same" padding for odd kernels at stride 1
            padding = tuple(d * (k - 1) // 2 for k, d in zip(size, dil))
        rng = layer_rng(seed, name)
        fan_in = int(np.prod(size)) * in_channels
        kernel = Tensor(he_uniform(rng, size + (in_channels, out_channels), fan_in))
        bias = Tensor(np.zeros(out_channels, dtype=np.float32))
        self.params = Conv3DParams(
            kernel=self.add_param("kernel", kernel),
            bias=self.add_param("bias", bias),
            stride=as_triple(stride, "stride"),
            dilation=dil,
            padding=as_triple(padding, "padding"),
        )

    @property
    def in_channels(self) -> int:
        return self.params.in_channels

    @property
    def out_channels(self) -> int:
        return self.params.out_channels

    def forward(self, x: Tensor) -> Tensor:
        return conv3d(x, self.params)


class Deconv3D(Conv3D):
    """Transposed convolution layer; defaults to no padding."""

    transposed = True

    def __init__(self, name: str, in_channels: int, out_channels: int,
                 kernel_size: IntOrTriple = 2, stride: IntOrTriple = 2,
                 padding: IntOrTriple = 0, seed: int = 0) -> None:
        super().__init__(name, in_channels, out_channels, kernel_size, stride=stride,
                         padding=padding, seed=seed)

    def forward(self, x: Tensor) -> Tensor:
        return deconv3d(x, self.params)


class ConvBlock(Layer):
    """``relu(conv3d(x))`` with same padding."""

    def __init__(self, name: str, in_channels: int, out_channels: int,
                 kernel_size: IntOrTriple = 3, seed: int = 0) -> None:
        super().__init__(name)
        self.conv = self.add_child("conv", Conv3D(f"{name}.conv", in_channels, out_channels,
                                                  kernel_size, seed=seed))

    @property
    def out_channels(self) -> int:
        return self.conv.out_channels

    def forward(self, x: Tensor) -> Tensor:
        return relu(conv3d(x, self.conv.params))
