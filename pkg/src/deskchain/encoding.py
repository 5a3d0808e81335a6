"""Little-endian fixed-width integers and length-prefixed fields.

Every canonical serialization in the package (transactions, blocks, account
transactions, snapshots) is built from these helpers so the byte layout is
defined in exactly one place.
"""

import struct


class DecodeError(ValueError):
    """Raised when a byte string does not parse under the canonical layout."""


def u8(n: int) -> bytes:
    return struct.pack("<B", n)


def u32(n: int) -> bytes:
    return struct.pack("<I", n)


def u64(n: int) -> bytes:
    return struct.pack("<Q", n)


def varbytes(data: bytes) -> bytes:
    return u32(len(data)) + data


class Reader:
    """Cursor over a byte string; every read raises DecodeError on underflow."""

    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def varbytes(self, limit: int = 1 << 26) -> bytes:
        n = self.u32()
        if n > limit:
            raise DecodeError(f"length prefix {n} exceeds limit {limit}")
        return self.take(n)

    def done(self) -> bool:
        return self.pos == len(self.data)

    def expect_end(self):
        if not self.done():
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")
