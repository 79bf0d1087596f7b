"""Dense N-D tensors with reverse-mode automatic differentiation.

Operations executed while a :class:`Tape` is active are recorded on it
together with a closure that maps the output gradient back to the inputs.
:func:`backward` replays the tape in exact reverse order. Without an active
tape (or inside :func:`no_grad`) nothing is recorded, which is how inference
runs.

All numeric work is done with numpy. Float32 is the working precision; any
operation whose inputs are float64 stays in float64, which is what the
gradient checks rely on.
"""

from __future__ import annotations

import logging
import threading
import weakref
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

LOGGER = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32

ArrayLike = Union[np.ndarray, Sequence[float], float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


class ContractError(RuntimeError):
    """Raised when an API precondition is not met."""


def _contiguous(array: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray promotes 0-d arrays to 1-d; scalars must stay 0-d.
    return array if array.flags.c_contiguous else np.ascontiguousarray(array)


class Tensor:
    """Dense row-major array with an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[np.dtype] = None,
        name: Optional[str] = None,
    ) -> None:
        array = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        self.data: np.ndarray = _contiguous(array)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = _contiguous(np.asarray(data))
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        return out

    # Introspection ------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def channels(self) -> int:
        if self.ndim == 0:
            raise ShapeError("Scalar tensor has no channel dimension")
        return self.shape[-1]

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, tape: Optional["Tape"] = None) -> None:
        """Backpropagate from this scalar over *tape* (default: innermost active tape)."""

        target = tape if tape is not None else current_tape()
        if target is None:
            raise ContractError("backward() needs a tape; run the forward pass inside 'with Tape()'")
        backward(self, target)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Operator sugar -----------------------------------------------------

    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return add(self, other)
        return affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return sub(self, other)
        return affine(self, 1.0, -float(other))

    def __rsub__(self, other: float) -> "Tensor":
        return affine(self, -1.0, float(other))

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return elementwise_mul(self, other)
        return affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return affine(self, -1.0, 0.0)

    def __truediv__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return div(self, other)
        return affine(self, 1.0 / float(other), 0.0)


def as_tensor(value: Union[Tensor, ArrayLike], dtype: Optional[np.dtype] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


# ---------------------------------------------------------------------------
# Recording state
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class TapeEntry:
    """One executed operation and the closure that reverses it."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class _RecorderState(threading.local):
    def __init__(self) -> None:
        self.tapes: List["Tape"] = []
        self.grad_enabled = True
        self.counters: List["OpCounter"] = []


_STATE = _RecorderState()


class Tape:
    """Ordered record of the differentiable operations of one forward pass.

    A tape belongs to the thread that entered it.
    """

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _STATE.tapes.append(self)
        return self

    def __exit__(self, *_exc: object) -> None:
        if _STATE.tapes and _STATE.tapes[-1] is self:
            _STATE.tapes.pop()
        else:  # pragma: no cover - mismatched nesting
            LOGGER.warning("Tape exited out of order; removing it anyway")
            _STATE.tapes.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def ops(self) -> List[str]:
        return [entry.op for entry in self.entries]

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)

    def clear(self) -> None:
        self.entries.clear()


def current_tape() -> Optional[Tape]:
    if not _STATE.grad_enabled or not _STATE.tapes:
        return None
    return _STATE.tapes[-1]


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on every tape of the current thread."""

    previous = _STATE.grad_enabled
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = previous


@dataclass(slots=True)
class OpStats:
    """Content-independent cost figures gathered by :class:`OpCounter`."""

    ops: int = 0
    arithmetic: int = 0
    allocated_bytes: int = 0
    live_bytes: int = 0
    peak_bytes: int = 0
    by_op: Dict[str, int] = field(default_factory=dict)


class OpCounter:
    """Count operations, arithmetic and tensor allocations inside a ``with`` block.

    Live bytes drop when an output tensor is garbage collected, so
    ``peak_bytes`` is the largest transient footprint of the block.
    """

    def __init__(self) -> None:
        self.stats = OpStats()
        self._lock = threading.Lock()

    def __enter__(self) -> "OpCounter":
        _STATE.counters.append(self)
        return self

    def __exit__(self, *_exc: object) -> None:
        _STATE.counters.remove(self)

    def _observe(self, op: str, out: Tensor, arithmetic: int) -> None:
        nbytes = int(out.data.nbytes)
        with self._lock:
            stats = self.stats
            stats.ops += 1
            stats.arithmetic += int(arithmetic)
            stats.allocated_bytes += nbytes
            stats.live_bytes += nbytes
            stats.peak_bytes = max(stats.peak_bytes, stats.live_bytes)
            stats.by_op[op] = stats.by_op.get(op, 0) + 1
        weakref.finalize(out, self._release, nbytes)

    def _release(self, nbytes: int) -> None:
        with self._lock:
            self.stats.live_bytes -= nbytes


def emit(
    op: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Optional[BackwardFn],
    arithmetic: Optional[int] = None,
) -> Tensor:
    """Wrap *data* as the output of *op*, recording it when gradients are needed.

    Layer modules build their differentiable operations on top of this.
    """

    tape = current_tape()
    needs_grad = (
        tape is not None
        and backward_fn is not None
        and any(tensor.requires_grad for tensor in inputs)
    )
    out = Tensor._wrap(data, needs_grad)
    if needs_grad:
        assert tape is not None and backward_fn is not None
        tape.entries.append(TapeEntry(op, tuple(inputs), out, backward_fn))
    for counter in _STATE.counters:
        counter._observe(op, out, out.size if arithmetic is None else arithmetic)
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    grad = np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad = tensor.grad + grad


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor reachable on *tape*."""

    if loss.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("Loss was not produced by a recorded operation on this tape")

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: Dict[int, Tensor] = {id(loss): loss}

    for entry in reversed(tape.entries):
        key = id(entry.output)
        grad = pending.pop(key, None)
        if grad is None:
            continue
        _accumulate(entry.output, grad)
        input_grads = entry.backward(grad)
        for tensor, input_grad in zip(entry.inputs, input_grads):
            if input_grad is None or not tensor.requires_grad:
                continue
            slot = id(tensor)
            if slot in pending:
                pending[slot] = pending[slot] + input_grad
            else:
                pending[slot] = input_grad
                owners[slot] = tensor

    # Leaves (parameters, inputs) never appear as an entry output.
    for slot, grad in pending.items():
        _accumulate(owners[slot], grad)


def zero_grad(tensors: Sequence[Tensor]) -> None:
    for tensor in tensors:
        tensor.zero_grad()


# ---------------------------------------------------------------------------
# Element operations
# ---------------------------------------------------------------------------


def _result_dtype(*tensors: Tensor) -> np.dtype:
    return np.result_type(*(tensor.dtype for tensor in tensors))


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """``scale * x + shift`` with constant *scale* and *shift*."""

    s = x.dtype.type(scale)
    data = x.data * s
    if shift:
        data = data + x.dtype.type(shift)
    return emit("affine", data, (x,), lambda g: (g * s,))


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """Product ``a ⊙ b``; *b* may carry a channel dimension of 1 broadcast over *a*."""

    broadcast = False
    if a.shape != b.shape:
        if a.ndim >= 1 and b.shape == a.shape[:-1] + (1,):
            broadcast = True
        else:
            raise ShapeError(f"elementwise_mul: cannot broadcast {b.shape} onto {a.shape}")
    a_data, b_data = a.data, b.data

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_a = g * b_data
        grad_b = g * a_data
        if broadcast:
            grad_b = grad_b.sum(axis=-1, keepdims=True)
        return grad_a, grad_b

    return emit("mul", a_data * b_data, (a, b), _backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    """``a / b`` for equal shapes or a single-element *b*."""

    scalar = b.size == 1 and a.shape != b.shape
    if not scalar:
        _require_same_shape("div", a, b)
    a_data = a.data
    b_data = b.data.reshape(()) if scalar else b.data
    out = a_data / b_data

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_a = g / b_data
        grad_b = -g * a_data / (b_data * b_data)
        if scalar:
            grad_b = np.asarray(grad_b.sum(dtype=np.float64), dtype=b.dtype).reshape(b.shape)
        return grad_a, grad_b

    return emit("div", out, (a, b), _backward)


def square(x: Tensor) -> Tensor:
    data = x.data
    return emit("square", data * data, (x,), lambda g: (2 * g * data,))


def log(x: Tensor) -> Tensor:
    data = x.data
    return emit("log", np.log(data), (x,), lambda g: (g / data,))


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    """Clip into ``[low, high]``; the gradient passes only where no clipping happened."""

    data = x.data
    inside = (data >= low) & (data <= high)
    out = np.clip(data, x.dtype.type(low), x.dtype.type(high))
    return emit("clamp", out, (x,), lambda g: (g * inside,))


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return emit("relu", np.where(positive, x.data, 0).astype(x.dtype), (x,), lambda g: (g * positive,))


def sigmoid(x: Tensor) -> Tensor:
    data = x.data
    # Two-branch form avoids overflow in exp for large |x|.
    exp_neg = np.exp(-np.abs(data))
    out = np.where(data >= 0, 1.0 / (1.0 + exp_neg), exp_neg / (1.0 + exp_neg)).astype(x.dtype)
    return emit("sigmoid", out, (x,), lambda g: (g * out * (1 - out),), arithmetic=4 * x.size)


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over the last (channel) axis, stabilised by max subtraction."""

    if x.ndim == 0 or x.channels < 1:
        raise ShapeError(f"softmax_channels needs at least one channel, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return emit("softmax", out, (x,), _backward, arithmetic=5 * x.size)


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor (accumulated in float64)."""

    value = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)
    shape = x.shape
    return emit("sum", value, (x,), lambda g: (np.broadcast_to(g, shape),))


def mean(x: Tensor) -> Tensor:
    count = max(x.size, 1)
    value = np.asarray(x.data.sum(dtype=np.float64) / count, dtype=x.dtype)
    shape = x.shape
    return emit("mean", value, (x,), lambda g: (np.broadcast_to(g / count, shape),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {original} as {tuple(shape)}") from exc
    return emit("reshape", data, (x,), lambda g: (g.reshape(original),), arithmetic=0)


# ---------------------------------------------------------------------------
# Channel operations
# ---------------------------------------------------------------------------


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """``<a, b>``: join along the channel axis, *a* first."""

    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_channels: non-channel dims differ {a.shape} vs {b.shape}")
    split = a.channels

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g[..., :split], g[..., split:]

    out = np.concatenate([a.data, b.data.astype(a.dtype, copy=False)], axis=-1)
    return emit("concat", out, (a, b), _backward, arithmetic=0)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    channels = x.channels
    if not 0 <= start <= stop <= channels:
        raise ShapeError(f"slice_channels: [{start}, {stop}) outside {channels} channels")
    shape = x.shape

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros(shape, dtype=g.dtype)
        grad[..., start:stop] = g
        return (grad,)

    return emit("slice", x.data[..., start:stop], (x,), _backward, arithmetic=0)
