"""Length-prefixed binary encoding used for hashing, signing and storage.

Every field is written as a 4-byte big-endian length followed by its bytes.
Nested structures are encoded the same way and then wrapped as one field.
"""
from __future__ import annotations

from typing import Iterable

from .errors import EncodingError

MAX_FIELD = 2**32 - 1


def lp(data: bytes) -> bytes:
    if len(data) > MAX_FIELD:
        raise EncodingError(f"field of {len(data)} bytes exceeds 2^32-1")
    return len(data).to_bytes(4, "big") + data


def pack(fields: Iterable[bytes]) -> bytes:
    return b"".join(lp(f) for f in fields)


def u64(n: int) -> bytes:
    if not 0 <= n < 2**64:
        raise EncodingError(f"integer {n} out of u64 range")
    return n.to_bytes(8, "big")


def read_u64(data: bytes) -> int:
    if len(data) != 8:
        raise EncodingError("u64 field must be 8 bytes")
    return int.from_bytes(data, "big")


class Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise EncodingError("truncated input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def field(self) -> bytes:
        return self.take(int.from_bytes(self.take(4), "big"))

    def done(self) -> bool:
        return self.pos == len(self.data)

    def expect_end(self) -> None:
        if not self.done():
            raise EncodingError(f"{len(self.data) - self.pos} trailing bytes")


def unpack(data: bytes) -> list[bytes]:
    r = Reader(data)
    out = []
    while not r.done():
        out.append(r.field())
    return out
