"""Base layer abstractions for the spatio-temporal network."""

from __future__ import annotations

import zlib
from abc import ABC, abstractmethod
from typing import Any, Dict, Iterator, List, Mapping, Tuple, TypeVar

import numpy as np

from ..tensor import ContractError, Tensor


def layer_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by the run seed and the layer's hierarchical name.

    Initialisation of one layer never depends on which other layers exist,
    so toggling a feature leaves every shared layer's weights unchanged.
    """

    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])


L = TypeVar("L", bound="Layer")


class Layer(ABC):
    """Common interface implemented by all network layers.

    Parameters are registered by short name and exposed under a stable
    dotted path built from the chain of child names.
    """

    def __init__(self, name: str) -> None:
        self.name = name
        self._params: Dict[str, Tensor] = {}
        self._children: Dict[str, Layer] = {}

    def add_param(self, key: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = True
        tensor.name = f"{self.name}.{key}"
        self._params[key] = tensor
        return tensor

    def add_child(self, key: str, layer: "L") -> "L":
        self._children[key] = layer
        return layer

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, tensor in self._params.items():
            yield f"{prefix}{key}", tensor
        for key, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Copy parameter values from *state*; names and shapes must match exactly."""

        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ContractError(
                f"State does not match layer {self.name!r}: missing={missing} unexpected={unexpected}"
            )
        for name, tensor in own.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise ContractError(
                    f"Parameter {name!r} has shape {tensor.shape}, state holds {value.shape}"
                )
            tensor.data = value.astype(tensor.dtype, copy=True)

    def astype(self, dtype: Any) -> "Layer":
        """Cast every parameter in place (float64 mode for gradient checks)."""

        for tensor in self.parameters():
            tensor.data = tensor.data.astype(dtype)
            tensor.grad = None
        return self

    @abstractmethod
    def forward(self, x: Tensor) -> Tensor:
        """Apply the layer to *x*."""

    def __call__(self, x: Tensor, **kwargs: Any) -> Any:
        return self.forward(x, **kwargs)
