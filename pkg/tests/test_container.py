"""Tests for the named-tensor container format."""

from __future__ import annotations

import struct
import sys
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
SRC_DIR = PROJECT_ROOT / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from ssa2d.container import (  # type: ignore[import]
    MAGIC,
    ContainerFormatError,
    decode_container,
    encode_container,
    read_container,
    tensor_text,
    text_tensor,
    write_container,
)


def sample_tensors():
    rng = np.random.default_rng(0)
    return {
        "video": rng.uniform(size=(2, 3, 4, 3)).astype(np.float32),
        "labels": rng.integers(0, 5, size=(2, 3, 4)).astype(np.int32),
        "mask": rng.integers(0, 2, size=(2, 3, 4)).astype(np.uint8),
        "scalar": np.float32(1.5),
        "empty": np.zeros((0, 3), dtype=np.float32),
    }


class RoundTripTests(unittest.TestCase):
    def test_values_shapes_and_dtypes_survive(self) -> None:
        tensors = sample_tensors()
        decoded = decode_container(encode_container(tensors))
        self.assertEqual(list(decoded), list(tensors))
        for name, value in tensors.items():
            np.testing.assert_array_equal(decoded[name], value)
            self.assertEqual(decoded[name].shape, np.shape(value))
        self.assertEqual(decoded["video"].dtype, np.float32)
        self.assertEqual(decoded["labels"].dtype, np.int32)
        self.assertEqual(decoded["mask"].dtype, np.uint8)

    def test_layout(self) -> None:
        data = encode_container({"ab": np.array([7], dtype=np.int32)})
        expected = (MAGIC + struct.pack("<I", 1) + struct.pack("<H", 2) + b"ab" + bytes([1, 1])
                    + struct.pack("<Q", 1) + struct.pack("<i", 7))
        self.assertEqual(data, expected)

    def test_empty_container(self) -> None:
        data = encode_container({})
        self.assertEqual(data, MAGIC + b"\x00\x00\x00\x00")
        self.assertEqual(decode_container(data), {})

    def test_storage_conversions(self) -> None:
        decoded = decode_container(encode_container({
            "flags": np.array([True, False]),
            "counts": np.array([1, 2], dtype=np.int64),
        }))
        self.assertEqual(decoded["flags"].dtype, np.uint8)
        self.assertEqual(decoded["counts"].dtype, np.int32)

    def test_unstorable_values_are_rejected(self) -> None:
        with self.assertRaises(ContainerFormatError):
            encode_container({"x": np.zeros(2, dtype=np.float64)})
        with self.assertRaises(ContainerFormatError):
            encode_container({"x": np.array([2**40])})
        with self.assertRaises(ContainerFormatError):
            encode_container({"": np.zeros(1, dtype=np.float32)})

    def test_files_and_expected_names(self) -> None:
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "clip.stc"
            write_container(path, sample_tensors())
            self.assertEqual(set(read_container(path, sample_tensors().keys())), set(sample_tensors()))
            with self.assertRaises(ContainerFormatError):
                read_container(path, ["video", "labels"])
            with self.assertRaises(OSError):
                read_container(Path(tmpdir) / "absent.stc")

    def test_embedded_text(self) -> None:
        text = "network:\n  profile: toy  # ümlaut\n"
        self.assertEqual(tensor_text(text_tensor(text)), text)
        with self.assertRaises(ContainerFormatError):
            tensor_text(np.array([0xFF, 0xFE], dtype=np.uint8))


class MalformedInputTests(unittest.TestCase):
    def setUp(self) -> None:
        self.data = encode_container({"x": np.arange(4, dtype=np.float32)})

    def test_bad_magic(self) -> None:
        with self.assertRaisesRegex(ContainerFormatError, "at byte 0"):
            decode_container(b"STC2" + self.data[4:])

    def test_truncation_anywhere(self) -> None:
        for cut in range(len(self.data)):
            with self.subTest(cut=cut):
                with self.assertRaises(ContainerFormatError):
                    decode_container(self.data[:cut])

    def test_trailing_bytes(self) -> None:
        with self.assertRaisesRegex(ContainerFormatError, "trailing"):
            decode_container(self.data + b"\x00")

    def test_unknown_dtype(self) -> None:
        data = bytearray(self.data)
        data[4 + 4 + 2 + 1] = 9
        with self.assertRaisesRegex(ContainerFormatError, "dtype code 9"):
            decode_container(bytes(data))

    def test_huge_count_and_dims(self) -> None:
        with self.assertRaises(ContainerFormatError):
            decode_container(MAGIC + struct.pack("<I", 0xFFFFFFFF))
        data = bytearray(self.data)
        data[13:21] = struct.pack("<Q", 2**63)
        with self.assertRaises(ContainerFormatError):
            decode_container(bytes(data))

    def test_duplicate_names(self) -> None:
        record = self.data[8:]
        with self.assertRaisesRegex(ContainerFormatError, "Duplicate"):
            decode_container(MAGIC + struct.pack("<I", 2) + record + record)

    def test_invalid_name_bytes(self) -> None:
        data = bytearray(self.data)
        data[10] = 0xFF
        with self.assertRaises(ContainerFormatError):
            decode_container(bytes(data))
        data = bytearray(self.data)
        data[8:10] = struct.pack("<H", 0)
        with self.assertRaisesRegex(ContainerFormatError, "Empty tensor name"):
            decode_container(bytes(data))


@pytest.mark.parametrize("seed", range(10))
def test_random_corruption_never_escapes(seed):
    rng = np.random.default_rng(seed)
    original = bytearray(encode_container(sample_tensors()))
    for _ in range(100):
        data = bytearray(original)
        for position in rng.integers(0, len(data), size=int(rng.integers(1, 4))):
            data[position] = int(rng.integers(0, 256))
        try:
            decode_container(bytes(data))
        except ContainerFormatError:
            pass


if __name__ == "__main__":
    unittest.main()
