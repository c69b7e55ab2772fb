"""Flat little-endian binary blobs: a 4-byte magic, then scalars and length-prefixed arrays."""

from __future__ import annotations

import io
import struct

import numpy as np


class FormatError(ValueError):
    pass


class BlobWriter:
    def __init__(self, magic: bytes):
        if len(magic) != 4:
            raise ValueError("magic must be 4 bytes")
        self._buf = io.BytesIO()
        self._buf.write(magic)

    def u64(self, v: int) -> BlobWriter:
        self._buf.write(struct.pack("<Q", v))
        return self

    def f64(self, v: float) -> BlobWriter:
        self._buf.write(struct.pack("<d", v))
        return self

    def array(self, a: np.ndarray, dtype: str) -> BlobWriter:
        a = np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<"))
        self.u64(a.size)
        self._buf.write(a.tobytes())
        return self

    def getvalue(self) -> bytes:
        return self._buf.getvalue()


class BlobReader:
    def __init__(self, data: bytes, magic: bytes):
        if data[:4] != magic:
            raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}")
        self._data = memoryview(data)
        self._off = 4

    def _take(self, size: int) -> memoryview:
        if self._off + size > len(self._data):
            raise FormatError("truncated blob")
        out = self._data[self._off : self._off + size]
        self._off += size
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def array(self, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        count = self.u64()
        raw = self._take(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).astype(np.dtype(dtype).newbyteorder("="))

    def done(self) -> None:
        if self._off != len(self._data):
            raise FormatError(f"{len(self._data) - self._off} trailing bytes")
