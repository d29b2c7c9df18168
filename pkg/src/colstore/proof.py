"""Provenance proof objects and their wire encoding (docs/proof_format.md)."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Union

from .hashing import ADDR_LEN, HASH_LEN, VALUE_LEN
from .merkle import ProofNode
from .run_store import RevealedLeaf

BARE_ROOT, RS_PATH, RUN_PATH = 0, 1, 2
RS_KEY_LEN = ADDR_LEN + 8
VT_KEY_LEN = 8


class DecodeError(ValueError):
    pass


@dataclass
class BareRoot:
    hash: bytes


@dataclass
class RsPath:
    node: ProofNode


@dataclass
class RunPath:
    fanout: int
    n_leaves: int
    first: int
    leaves: list  # RevealedLeaf
    siblings: list


SubProof = Union[BareRoot, RsPath, RunPath]


@dataclass
class Proof:
    parts: list = field(default_factory=list)

    def encode(self) -> bytes:
        out = [struct.pack(">H", len(self.parts))]
        for part in self.parts:
            body = _encode_part(part)
            out.append(struct.pack(">I", len(body)))
            out.append(body)
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "Proof":
        r = _Reader(data)
        n = r.u16()
        parts = []
        for _ in range(n):
            size = r.u32()
            sub = _Reader(r.take(size))
            parts.append(_decode_part(sub))
            if not sub.done():
                raise DecodeError("trailing bytes in sub-proof")
        if not r.done():
            raise DecodeError("trailing bytes after proof")
        return cls(parts)


# -- encoding ---------------------------------------------------------------

def _encode_node(node: ProofNode, key_len: int) -> bytes:
    out = [struct.pack(">BH", 0 if node.leaf else 1, len(node.entries))]
    for k, v in node.entries:
        if len(k) != key_len:
            raise ValueError("key length does not match tree kind")
        if node.leaf:
            out.append(b"\x01" + k if v is None else b"\x00" + k + v)
        elif isinstance(v, ProofNode):
            out.append(b"\x01" + k + _encode_node(v, key_len))
        else:
            out.append(b"\x00" + k + v)
    return b"".join(out)


def _encode_part(part: SubProof) -> bytes:
    if isinstance(part, BareRoot):
        return bytes([BARE_ROOT]) + part.hash
    if isinstance(part, RsPath):
        return bytes([RS_PATH]) + _encode_node(part.node, RS_KEY_LEN)
    out = [bytes([RUN_PATH]), struct.pack(">BIIH", part.fanout, part.n_leaves, part.first, len(part.leaves))]
    for leaf in part.leaves:
        out.append(leaf.addr + struct.pack(">Q", leaf.blk) + leaf.value)
        if leaf.tree_proof is not None:
            out.append(b"\x01" + _encode_node(leaf.tree_proof, VT_KEY_LEN))
        else:
            out.append(b"\x00" + leaf.tree_root)
    out.append(struct.pack(">H", len(part.siblings)))
    out.extend(part.siblings)
    return b"".join(out)


# -- decoding ---------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise DecodeError("truncated input")
        b = self.data[self.off:self.off + n]
        self.off += n
        return b

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def done(self) -> bool:
        return self.off == len(self.data)


def _decode_node(r: _Reader, key_len: int, depth: int = 0) -> ProofNode:
    if depth > 64:
        raise DecodeError("proof nesting too deep")
    kind = r.u8()
    if kind not in (0, 1):
        raise DecodeError("bad node kind")
    n = r.u16()
    entries = []
    for _ in range(n):
        tag = r.u8()
        k = r.take(key_len)
        if tag == 0:
            entries.append((k, r.take(VALUE_LEN if kind == 0 else HASH_LEN)))
        elif tag == 1:
            entries.append((k, None if kind == 0 else _decode_node(r, key_len, depth + 1)))
        else:
            raise DecodeError("bad entry tag")
    return ProofNode(kind == 0, entries)


def _decode_part(r: _Reader) -> SubProof:
    tag = r.u8()
    if tag == BARE_ROOT:
        return BareRoot(r.take(HASH_LEN))
    if tag == RS_PATH:
        return RsPath(_decode_node(r, RS_KEY_LEN))
    if tag != RUN_PATH:
        raise DecodeError("unknown sub-proof tag")
    fanout = r.u8()
    n_leaves = r.u32()
    first = r.u32()
    count = r.u16()
    leaves = []
    for _ in range(count):
        addr = r.take(ADDR_LEN)
        blk = r.u64()
        value = r.take(VALUE_LEN)
        flag = r.u8()
        if flag == 1:
            leaves.append(RevealedLeaf(addr, blk, value, tree_proof=_decode_node(r, VT_KEY_LEN)))
        elif flag == 0:
            leaves.append(RevealedLeaf(addr, blk, value, tree_root=r.take(HASH_LEN)))
        else:
            raise DecodeError("bad leaf flag")
    nsib = r.u16()
    siblings = [r.take(HASH_LEN) for _ in range(nsib)]
    return RunPath(fanout, n_leaves, first, leaves, siblings)


# -- results file -----------------------------------------------------------

_RES_HEAD = struct.Struct(">32sQQI")


def encode_results(addr: bytes, blk_l: int, blk_u: int, results: list[tuple[int, bytes]]) -> bytes:
    return _RES_HEAD.pack(addr, blk_l, blk_u, len(results)) + b"".join(
        struct.pack(">Q", b) + v for b, v in results)


def decode_results(data: bytes) -> tuple[bytes, int, int, list[tuple[int, bytes]]]:
    if len(data) < _RES_HEAD.size:
        raise DecodeError("truncated results")
    addr, lo, hi, n = _RES_HEAD.unpack_from(data, 0)
    if len(data) != _RES_HEAD.size + n * 40:
        raise DecodeError("results length mismatch")
    base = _RES_HEAD.size
    res = [(struct.unpack_from(">Q", data, base + i * 40)[0], data[base + i * 40 + 8:base + (i + 1) * 40])
           for i in range(n)]
    return addr, lo, hi, res
