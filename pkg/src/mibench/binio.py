"""Little-endian binary primitives shared by every on-disk blob format.

All container, model, and results files use the same conventions: a 4-byte
ASCII magic, a u32 version, then typed fields.  Arrays are stored as a
1-byte dtype code, u32 ndim, u32 dims, then raw little-endian values.
"""

import struct

import numpy as np

from .errors import BadMagicError, TruncatedError

_DTYPE_CODES = {0: "<f4", 1: "<f8", 2: "<u1", 3: "<i8", 4: "<u4"}
_CODE_FOR = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}


class Reader:
    def __init__(self, data, name="blob"):
        self.data = data
        self.name = name
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedError(
                f"{self.name}: truncated payload (needed {n} bytes at "
                f"offset {self.pos}, have {len(self.data) - self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def magic(self, expected):
        got = self.take(4)
        if got != expected:
            raise BadMagicError(
                f"{self.name}: bad magic {got!r}, expected {expected!r}")

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def i64(self):
        return struct.unpack("<q", self.take(8))[0]

    def f32(self):
        return struct.unpack("<f", self.take(4))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def text(self):
        n = self.u32()
        return self.take(n).decode("utf-8")

    def array(self):
        code = self.take(1)[0]
        if code not in _DTYPE_CODES:
            raise TruncatedError(f"{self.name}: unknown dtype code {code}")
        dtype = np.dtype(_DTYPE_CODES[code])
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    def done(self):
        if self.pos != len(self.data):
            raise TruncatedError(
                f"{self.name}: {len(self.data) - self.pos} trailing bytes")


class Writer:
    def __init__(self):
        self.parts = []

    def magic(self, value):
        assert len(value) == 4
        self.parts.append(value)

    def u32(self, value):
        self.parts.append(struct.pack("<I", value))

    def i64(self, value):
        self.parts.append(struct.pack("<q", value))

    def f32(self, value):
        self.parts.append(struct.pack("<f", value))

    def f64(self, value):
        self.parts.append(struct.pack("<d", value))

    def text(self, value):
        raw = value.encode("utf-8")
        self.u32(len(raw))
        self.parts.append(raw)

    def array(self, value):
        value = np.asarray(value)
        dtype = value.dtype.newbyteorder("<")
        code = _CODE_FOR.get(np.dtype(dtype))
        if code is None:
            raise ValueError(f"unsupported array dtype {value.dtype}")
        self.parts.append(bytes([code]))
        self.u32(value.ndim)
        for dim in value.shape:
            self.u32(dim)
        self.parts.append(np.ascontiguousarray(value, dtype=dtype).tobytes())

    def payload(self):
        return b"".join(self.parts)
