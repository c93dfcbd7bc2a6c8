"""Packed quantized tensors and the QTNS binary container.

Layout: ``b"QTNS"``, version (u8), encoding (u8), bits (u8), rank (u8),
``rank`` little-endian u32 dims, then the payload. The payload is a dense
little-endian bit stream: element ``i`` occupies stream bits
``[i*bits, (i+1)*bits)`` and stream bit ``j`` is bit ``j % 64`` of the
``j // 64``-th little-endian 64-bit word (equivalently bit ``j % 8`` of byte
``j // 8``). The stream is zero padded to a byte boundary.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import QuantError

MAGIC = b"QTNS"
VERSION = 1


class Encoding(enum.IntEnum):
    UNSIGNED_LEVEL_CODE = 0
    BIPOLAR = 1
    TWOS_COMPLEMENT = 2
    SIGNED_ACCUMULATOR = 3


def pack_codes(codes, bits: int) -> bytes:
    codes = np.asarray(codes, dtype=np.uint64).reshape(-1)
    if codes.size and int(codes.max()) >> bits:
        raise QuantError(f"code does not fit in {bits} bits")
    shifts = np.arange(bits, dtype=np.uint64)
    stream = ((codes[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).reshape(-1)
    return np.packbits(stream, bitorder="little").tobytes()


def unpack_codes(payload: bytes, bits: int, count: int) -> np.ndarray:
    stream = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    if stream.size < count * bits:
        raise QuantError("payload too short")
    mat = stream[: count * bits].reshape(count, bits).astype(np.uint64)
    weights = np.uint64(1) << np.arange(bits, dtype=np.uint64)
    return (mat * weights).sum(axis=1).astype(np.int64)


@dataclass(frozen=True)
class QTensor:
    dims: tuple[int, ...]
    bits: int
    encoding: Encoding
    payload: bytes

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "encoding", Encoding(self.encoding))
        if not 1 <= self.bits <= 64:
            raise QuantError(f"bits must be in 1..64, got {self.bits}")
        if len(self.payload) != (self.size * self.bits + 7) // 8:
            raise QuantError(
                f"payload is {len(self.payload)} bytes, expected {(self.size * self.bits + 7) // 8}"
            )

    @property
    def size(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.dims else 1

    @classmethod
    def from_codes(cls, codes, bits: int, encoding: Encoding) -> "QTensor":
        arr = np.asarray(codes)
        return cls(arr.shape, bits, encoding, pack_codes(arr, bits))

    @classmethod
    def from_values(cls, values, bits: int, encoding: Encoding) -> "QTensor":
        """Build from signed integers (accumulators / two's complement ints)."""
        arr = np.asarray(values, dtype=np.int64)
        lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise QuantError(f"value does not fit in signed {bits} bits")
        return cls.from_codes(arr & ((1 << bits) - 1), bits, encoding)

    def codes(self) -> np.ndarray:
        """Unsigned element codes, shaped ``dims``."""
        return unpack_codes(self.payload, self.bits, self.size).reshape(self.dims)

    def values(self) -> np.ndarray:
        """Codes interpreted per encoding (sign-extended where signed)."""
        c = self.codes()
        if self.encoding in (Encoding.TWOS_COMPLEMENT, Encoding.SIGNED_ACCUMULATOR):
            sign = 1 << (self.bits - 1)
            return (c ^ sign) - sign
        if self.encoding is Encoding.BIPOLAR:
            return 2 * c - 1
        return c

    def to_bytes(self) -> bytes:
        header = MAGIC + struct.pack("<BBBB", VERSION, int(self.encoding), self.bits, len(self.dims))
        return header + struct.pack(f"<{len(self.dims)}I", *self.dims) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "QTensor":
        if data[:4] != MAGIC:
            raise QuantError("bad magic, not a QTNS file")
        version, encoding, bits, rank = struct.unpack_from("<BBBB", data, 4)
        if version != VERSION:
            raise QuantError(f"unsupported QTNS version {version}")
        dims = struct.unpack_from(f"<{rank}I", data, 8)
        start = 8 + 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = (count * bits + 7) // 8
        payload = bytes(data[start : start + nbytes])
        if len(data) != start + nbytes:
            raise QuantError(f"QTNS size mismatch: {len(data)} bytes, expected {start + nbytes}")
        return cls(dims, bits, Encoding(encoding), payload)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "QTensor":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
