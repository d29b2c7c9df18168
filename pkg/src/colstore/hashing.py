"""Canonical hash and fixed-width encodings shared by every structure."""
from __future__ import annotations

import hashlib
import struct

HASH_LEN = 32
ADDR_LEN = 32
VALUE_LEN = 32
MAX_BLK = 2**64 - 1

_U64 = struct.Struct(">Q")


def H(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


EMPTY_HASH = H(b"")


def u64(n: int) -> bytes:
    return _U64.pack(n)


def read_u64(buf, off: int = 0) -> int:
    return _U64.unpack_from(buf, off)[0]


def compound_key(addr: bytes, blk: int) -> bytes:
    """40-byte key ``addr || blk``; byte order equals (addr, blk) order."""
    return addr + _U64.pack(blk)


def split_key(key: bytes) -> tuple[bytes, int]:
    return key[:ADDR_LEN], _U64.unpack_from(key, ADDR_LEN)[0]


def check_addr(addr: bytes) -> None:
    if not isinstance(addr, (bytes, bytearray)) or len(addr) != ADDR_LEN:
        raise ValueError("address must be 32 bytes")


def check_value(value: bytes) -> None:
    if not isinstance(value, (bytes, bytearray)) or len(value) != VALUE_LEN:
        raise ValueError("value must be 32 bytes")
