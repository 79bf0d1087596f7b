"""Named-tensor container files (``STC1``).

Layout, all integers little-endian::

    "STC1" | u32 count | count x tensor
    tensor = u16 name_len | name (utf-8) | u8 dtype | u8 rank | rank x u64 dim | payload

dtype codes: 0 = float32, 1 = int32, 2 = uint8. Payloads are row-major.
"""

from __future__ import annotations

import logging
import struct
from functools import wraps
from io import BytesIO
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Mapping, Optional

import numpy as np

LOGGER = logging.getLogger(__name__)

MAGIC = b"STC1"

DTYPE_CODES: Dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("<i4"),
    2: np.dtype("u1"),
}
_CODE_BY_KIND = {("f", 4): 0, ("i", 4): 1, ("u", 1): 2}


class ContainerFormatError(RuntimeError):
    """Raised when container bytes are malformed; ``offset`` locates the problem."""

    def __init__(self, msg: str, offset: int = 0) -> None:
        super().__init__(f"{msg} (at byte {offset})")
        self.msg = msg
        self.offset = offset


def raise_format_error(function: Callable[..., Any]) -> Callable[..., Any]:
    """Wrap struct.error and convert to ContainerFormatError."""

    @wraps(function)
    def result(self: Any, *args: Any) -> Any:
        try:
            return function(self, *args)
        except struct.error as exc:
            raise ContainerFormatError(str(exc.args[0]), self.get_position()) from None

    return result


def _storage_array(name: str, value: Any) -> np.ndarray:
    array = np.asarray(value)
    if array.dtype == np.bool_:
        return array.astype(np.uint8)
    if array.dtype.kind == "f":
        if array.dtype != np.float32:
            raise ContainerFormatError(f"Tensor {name!r}: only float32 payloads are stored, got {array.dtype}")
        return array.astype("<f4", copy=False)
    if array.dtype.kind in "iu":
        if array.dtype == np.uint8:
            return array
        if array.size and (array.min() < np.iinfo(np.int32).min or array.max() > np.iinfo(np.int32).max):
            raise ContainerFormatError(f"Tensor {name!r}: integer values exceed int32")
        return array.astype("<i4")
    raise ContainerFormatError(f"Tensor {name!r}: unsupported dtype {array.dtype}")


class Packer:
    """Serialize named tensors into container bytes."""

    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.__buf = BytesIO()

    def get_buffer(self) -> bytes:
        return self.__buf.getvalue()

    def get_position(self) -> int:
        return self.__buf.tell()

    @raise_format_error
    def pack_u8(self, value: int) -> None:
        self.__buf.write(struct.pack("<B", value))

    @raise_format_error
    def pack_u16(self, value: int) -> None:
        self.__buf.write(struct.pack("<H", value))

    @raise_format_error
    def pack_u32(self, value: int) -> None:
        self.__buf.write(struct.pack("<I", value))

    @raise_format_error
    def pack_u64(self, value: int) -> None:
        self.__buf.write(struct.pack("<Q", value))

    def pack_name(self, name: str) -> None:
        data = name.encode("utf-8")
        if not data:
            raise ContainerFormatError("Tensor names must be non-empty", self.get_position())
        self.pack_u16(len(data))
        self.__buf.write(data)

    def pack_tensor(self, name: str, value: Any) -> None:
        array = _storage_array(name, value)
        if array.ndim > 255:
            raise ContainerFormatError(f"Tensor {name!r}: rank {array.ndim} does not fit in u8", self.get_position())
        self.pack_name(name)
        self.pack_u8(_CODE_BY_KIND[(array.dtype.kind, array.dtype.itemsize)])
        self.pack_u8(array.ndim)
        for dim in array.shape:
            self.pack_u64(dim)
        self.__buf.write(np.ascontiguousarray(array).tobytes(order="C"))

    def pack_container(self, tensors: Mapping[str, Any]) -> None:
        self.__buf.write(MAGIC)
        self.pack_u32(len(tensors))
        for name, value in tensors.items():
            self.pack_tensor(name, value)


class Unpacker:
    """Deserialize container bytes, validating every field against the remaining length."""

    def __init__(self, data: bytes) -> None:
        self.reset(data)

    def reset(self, data: bytes) -> None:
        self.__buf = memoryview(bytes(data))
        self.__pos = 0

    def get_position(self) -> int:
        return self.__pos

    def remaining(self) -> int:
        return len(self.__buf) - self.__pos

    def done(self) -> None:
        if self.__pos < len(self.__buf):
            raise ContainerFormatError(f"{self.remaining()} bytes of trailing data", self.__pos)

    def _take(self, size: int, what: str) -> memoryview:
        start = self.__pos
        if size > len(self.__buf) - start:
            raise ContainerFormatError(f"Truncated {what}: need {size} bytes, {len(self.__buf) - start} left", start)
        self.__pos = start + size
        return self.__buf[start:start + size]

    def unpack_u8(self, what: str) -> int:
        return self._take(1, what)[0]

    def unpack_u16(self, what: str) -> int:
        return struct.unpack("<H", self._take(2, what))[0]

    def unpack_u32(self, what: str) -> int:
        return struct.unpack("<I", self._take(4, what))[0]

    def unpack_u64(self, what: str) -> int:
        return struct.unpack("<Q", self._take(8, what))[0]

    def unpack_name(self) -> str:
        offset = self.__pos
        length = self.unpack_u16("name length")
        if length == 0:
            raise ContainerFormatError("Empty tensor name", offset)
        raw = self._take(length, "name")
        try:
            return bytes(raw).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerFormatError("Tensor name is not valid utf-8", offset + 2 + exc.start) from None

    def unpack_tensor(self) -> tuple:
        name = self.unpack_name()
        offset = self.__pos
        code = self.unpack_u8("dtype")
        dtype = DTYPE_CODES.get(code)
        if dtype is None:
            raise ContainerFormatError(f"Tensor {name!r}: unknown dtype code {code}", offset)
        offset = self.__pos
        rank = self.unpack_u8("rank")
        if rank * 8 > self.remaining():
            raise ContainerFormatError(f"Tensor {name!r}: rank {rank} exceeds remaining data", offset)
        shape = tuple(self.unpack_u64("dimension") for _ in range(rank))
        offset = self.__pos
        count = 1
        for dim in shape:
            count *= dim
        nbytes = count * dtype.itemsize
        if nbytes > self.remaining():
            raise ContainerFormatError(
                f"Tensor {name!r}: shape {shape} needs {nbytes} payload bytes, {self.remaining()} left", offset
            )
        payload = self._take(nbytes, "payload")
        try:
            if count == 0:
                array = np.zeros(shape, dtype=dtype)
            else:
                array = np.frombuffer(payload, dtype=dtype, count=count).reshape(shape).copy()
        except (ValueError, OverflowError, MemoryError) as exc:
            raise ContainerFormatError(f"Tensor {name!r}: unusable shape {shape}", offset) from exc
        return name, array

    def unpack_container(self) -> Dict[str, np.ndarray]:
        magic = bytes(self._take(4, "magic"))
        if magic != MAGIC:
            raise ContainerFormatError(f"Bad magic {magic!r}", 0)
        offset = self.__pos
        count = self.unpack_u32("tensor count")
        # smallest tensor record: u16 + 1 name byte + dtype + rank
        if count * 5 > self.remaining():
            raise ContainerFormatError(f"Tensor count {count} exceeds remaining data", offset)
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            offset = self.__pos
            name, array = self.unpack_tensor()
            if name in tensors:
                raise ContainerFormatError(f"Duplicate tensor name {name!r}", offset)
            tensors[name] = array
        self.done()
        return tensors


def encode_container(tensors: Mapping[str, Any]) -> bytes:
    packer = Packer()
    packer.pack_container(tensors)
    return packer.get_buffer()


def decode_container(data: bytes, expected_names: Optional[Iterable[str]] = None) -> Dict[str, np.ndarray]:
    """Parse container bytes; with *expected_names* the exact name set is enforced."""

    tensors = Unpacker(data).unpack_container()
    if expected_names is not None:
        expected = set(expected_names)
        if set(tensors) != expected:
            raise ContainerFormatError(
                f"Container holds {sorted(tensors)}, expected {sorted(expected)}", 4
            )
    return tensors


def write_container(path: Path, tensors: Mapping[str, Any]) -> None:
    data = encode_container(tensors)
    path = Path(path)
    path.write_bytes(data)
    LOGGER.debug("Wrote %d tensors (%d bytes) to %s", len(tensors), len(data), path)


def read_container(path: Path, expected_names: Optional[Iterable[str]] = None) -> Dict[str, np.ndarray]:
    return decode_container(Path(path).read_bytes(), expected_names)


def text_tensor(text: str) -> np.ndarray:
    """utf-8 text as a uint8 tensor (used to embed configuration in checkpoints)."""

    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def tensor_text(array: np.ndarray) -> str:
    try:
        return np.asarray(array, dtype=np.uint8).tobytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ContainerFormatError("Embedded text is not valid utf-8", exc.start) from exc
