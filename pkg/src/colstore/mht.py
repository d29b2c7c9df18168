"""Complete f-ary Merkle hash tree stored level by level, leaves first.

A parent hashes the concatenation of its (up to f) children; the last node
of a level may have fewer children. A single leaf is its own root.
"""
from __future__ import annotations

import struct
from typing import Sequence

from .hashing import HASH_LEN, H


class ProofError(ValueError):
    pass


def level_sizes(n_leaves: int, fanout: int) -> list[int]:
    if n_leaves < 1:
        raise ValueError("tree needs at least one leaf")
    sizes = [n_leaves]
    while sizes[-1] > 1:
        sizes.append(-(-sizes[-1] // fanout))
    return sizes


def build_levels(leaves: Sequence[bytes], fanout: int) -> list[list[bytes]]:
    levels = [list(leaves)]
    while len(levels[-1]) > 1:
        cur = levels[-1]
        levels.append([H(b"".join(cur[i:i + fanout])) for i in range(0, len(cur), fanout)])
    return levels


def _walk(sizes: list[int], fanout: int, first: int, last: int):
    """Per level, the known node range [a, b] and its parent range [pa, pb].
    Prover and verifier walk the same sequence, so siblings need no indices."""
    a, b = first, last
    for lvl in range(len(sizes) - 1):
        pa, pb = a // fanout, b // fanout
        yield lvl, a, b, pa, pb
        a, b = pa, pb


def root_from_proof(n_leaves: int, fanout: int, first: int, leaves: Sequence[bytes],
                    siblings: Sequence[bytes]) -> bytes:
    sizes = level_sizes(n_leaves, fanout)
    last = first + len(leaves) - 1
    if not leaves or not 0 <= first <= last < n_leaves:
        raise ProofError("leaf range out of bounds")
    known = list(leaves)
    it = iter(siblings)
    for lvl, a, b, pa, pb in _walk(sizes, fanout, first, last):
        parents = []
        for p in range(pa, pb + 1):
            parts = []
            for c in range(p * fanout, min(p * fanout + fanout, sizes[lvl])):
                if a <= c <= b:
                    parts.append(known[c - a])
                else:
                    s = next(it, None)
                    if s is None:
                        raise ProofError("too few sibling hashes")
                    parts.append(s)
            parents.append(H(b"".join(parts)))
        known = parents
    if next(it, None) is not None:
        raise ProofError("too many sibling hashes")
    return known[0]


class HashFile:
    """Read access to a serialized tree: header u32 n_leaves, u8 fanout, then
    every level's hashes, leaves first."""

    HEADER = struct.Struct(">IB")

    def __init__(self, data):
        self.data = data
        self.n_leaves, self.fanout = self.HEADER.unpack_from(data, 0)
        self.sizes = level_sizes(self.n_leaves, self.fanout)
        self.offsets = []
        off = self.HEADER.size
        for s in self.sizes:
            self.offsets.append(off)
            off += s * HASH_LEN
        if off != len(data):
            raise ValueError("hash file length mismatch")

    @staticmethod
    def encode(leaves: Sequence[bytes], fanout: int) -> bytes:
        levels = build_levels(leaves, fanout)
        return HashFile.HEADER.pack(len(leaves), fanout) + b"".join(h for l in levels for h in l)

    def node(self, level: int, idx: int) -> bytes:
        off = self.offsets[level] + idx * HASH_LEN
        return bytes(self.data[off:off + HASH_LEN])

    @property
    def root(self) -> bytes:
        return self.node(len(self.sizes) - 1, 0)

    def prove(self, first: int, last: int) -> list[bytes]:
        if not 0 <= first <= last < self.n_leaves:
            raise IndexError("leaf range out of bounds")
        f = self.fanout
        sib = []
        for lvl, a, b, pa, pb in _walk(self.sizes, f, first, last):
            for p in range(pa, pb + 1):
                for c in range(p * f, min(p * f + f, self.sizes[lvl])):
                    if not a <= c <= b:
                        sib.append(self.node(lvl, c))
        return sib
