"""Bloom filter over addresses (10 bits per key, 7 probes)."""
from __future__ import annotations

import struct

from .hashing import H

BITS_PER_KEY = 10
NUM_HASHES = 7


def _probes(addr: bytes, m: int, k: int):
    h = H(addr)
    h1 = int.from_bytes(h[:8], "big")
    h2 = int.from_bytes(h[8:16], "big") | 1
    return [(h1 + i * h2) % m for i in range(k)]


class BloomFilter:
    def __init__(self, m: int, k: int = NUM_HASHES, bits: bytearray | None = None):
        self.m = m
        self.k = k
        self.bits = bits if bits is not None else bytearray((m + 7) // 8)

    @classmethod
    def build(cls, addrs, n: int) -> "BloomFilter":
        bf = cls(max(8, n * BITS_PER_KEY))
        for a in addrs:
            bf.add(a)
        return bf

    def add(self, addr: bytes) -> None:
        for p in _probes(addr, self.m, self.k):
            self.bits[p >> 3] |= 1 << (p & 7)

    def __contains__(self, addr: bytes) -> bool:
        bits = self.bits
        return all(bits[p >> 3] >> (p & 7) & 1 for p in _probes(addr, self.m, self.k))

    def to_bytes(self) -> bytes:
        return struct.pack(">IB", self.m, self.k) + bytes(self.bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        m, k = struct.unpack_from(">IB", data, 0)
        bits = bytearray(data[5:])
        if len(bits) != (m + 7) // 8:
            raise ValueError("bloom filter length mismatch")
        return cls(m, k, bits)
