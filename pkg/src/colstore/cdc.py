"""Entry-aligned content-defined chunking for tree nodes.

Every entry is fingerprinted on its own with a Gear rolling hash that is
reset before the entry, so whether an entry closes a node depends only on
that entry's bytes and on how many entries the node already holds.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Optional, Sequence

CUT = True
NOCUT = False

_M64 = (1 << 64) - 1
GEAR_SEED = 0x434F4C45  # "COLE"


def _splitmix64(seed: int, n: int) -> tuple[int, ...]:
    state = seed
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & _M64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        out.append(z ^ (z >> 31))
    return tuple(out)


GEAR_TABLE: tuple[int, ...] = _splitmix64(GEAR_SEED, 256)


class InvalidFanout(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


def mask_bits(f_exp: int) -> int:
    return max(1, round(math.log2(f_exp)))


def gear_fingerprint(data: bytes) -> int:
    """Full 64-bit Gear fingerprint of ``data`` starting from zero."""
    fp = 0
    for b in data:
        fp = ((fp << 1) + GEAR_TABLE[b]) & _M64
    return fp


def _low_fingerprint(data: bytes, bits: int) -> int:
    # fp << 1 shifts zeros in, so the low `bits` bits only see the last `bits` bytes.
    fp = 0
    for b in data[-bits:]:
        fp = (fp << 1) + GEAR_TABLE[b]
    return fp & ((1 << bits) - 1)


@dataclass
class CdcParams:
    mask: int
    f_max: int
    entry_size: int
    cnt: int = 0

    @property
    def bits(self) -> int:
        return self.mask.bit_length()


def init_params(f_exp: int, f_max: int, entry_size: int) -> CdcParams:
    if f_exp < 2 or f_max < f_exp:
        raise InvalidFanout(f"need 2 <= f_exp <= f_max, got f_exp={f_exp} f_max={f_max}")
    if entry_size <= 0:
        raise ValueError("entry_size must be positive")
    return CdcParams(mask=(1 << mask_bits(f_exp)) - 1, f_max=f_max, entry_size=entry_size)


def cut_point(params: CdcParams, entry: bytes) -> bool:
    """Decide whether ``entry`` closes the node under construction.

    ``params.cnt`` is the number of entries already in the node. The entry
    that brings the node to ``f_max`` entries is always a cut.
    """
    if len(entry) != params.entry_size:
        raise LengthMismatch(f"entry is {len(entry)} bytes, expected {params.entry_size}")
    if params.cnt + 1 >= params.f_max:
        params.cnt = 0
        return CUT
    if gear_fingerprint(entry) & params.mask == 0:
        params.cnt = 0
        return CUT
    params.cnt += 1
    return NOCUT


@dataclass(frozen=True)
class CdcConfig:
    """Fanout settings shared by a tree; stateless and hashable."""

    f_exp: int = 16
    f_max: int = 64

    def __post_init__(self):
        if self.f_exp < 2 or self.f_max < self.f_exp:
            raise InvalidFanout(f"need 2 <= f_exp <= f_max, got {self.f_exp}, {self.f_max}")

    @cached_property
    def bits(self) -> int:
        return mask_bits(self.f_exp)

    def is_pattern(self, entry: bytes) -> bool:
        return _low_fingerprint(entry, self.bits) == 0

    def chunk(self, entries: Sequence[tuple[bytes, bytes]]) -> list[list[tuple[bytes, bytes]]]:
        """Partition (key, payload) entries into node-sized chunks."""
        return recut(entries, (), self)[0]


@lru_cache(maxsize=None)
def _pair_tables(bits: int) -> tuple[tuple[int, ...], ...]:
    """Lookup tables giving the low ``bits`` of the Gear fingerprint from
    big-endian byte pairs, covering the last ``2*ceil(bits/2)`` bytes."""
    low = (1 << bits) - 1
    npairs = (bits + 1) // 2
    tables = []
    for j in range(npairs):
        d = 2 * (npairs - 1 - j)  # shift of the pair's second byte
        tables.append(tuple(((GEAR_TABLE[x >> 8] << (d + 1)) + (GEAR_TABLE[x & 255] << d)) & low
                            for x in range(65536)))
    return tuple(tables)


def recut(pending: Sequence[tuple[bytes, bytes]], following: Iterable, cfg: CdcConfig,
          check: Optional[Iterable[int]] = None):
    """Chunk ``pending`` and keep absorbing whole following nodes until aligned.

    ``following`` yields the old nodes (objects with ``.entries``) that come
    after the edited region. Chunking restarts at every cut, so once a cut
    lands on the end of an absorbed node the rest of the level is unchanged.

    Only the last entry of an existing node can match the cut pattern. Callers
    that know this pass ``check``, the sorted indices of pending entries whose
    pattern status is unknown; every other pending entry is taken as a
    non-match. Returns (chunks, number of following nodes absorbed).
    """
    bits = cfg.bits
    low = (1 << bits) - 1
    f_max = cfg.f_max
    tables = _pair_tables(bits)
    width = 2 * len(tables)
    chunks: list[list] = []
    cur: list = []

    if len(tables) == 2:
        t0, t1 = tables
        unpack = struct.Struct(">HH").unpack

        def hit(e):
            v = e[1]
            a, b = unpack((e[0] + v)[-4:] if len(v) < 4 else v[-4:])
            return (t0[a] + t1[b]) & low == 0
    else:
        unpack = struct.Struct(">" + "H" * len(tables)).unpack

        def hit(e):
            v = e[1]
            tail = (e[0] + v)[-width:] if len(v) < width else v[-width:]
            return sum(t[x] for t, x in zip(tables, unpack(tail))) & low == 0

    def emit(seq, hits):
        nonlocal cur
        start = 0
        n = len(seq)
        for h in hits:
            end = h + 1
            while start < end:
                take = min(end - start, f_max - len(cur))
                cur.extend(seq[start:start + take])
                start += take
                if len(cur) >= f_max:
                    chunks.append(cur)
                    cur = []
            if cur:
                chunks.append(cur)
                cur = []
        while start < n:
            take = min(n - start, f_max - len(cur))
            cur.extend(seq[start:start + take])
            start += take
            if len(cur) >= f_max:
                chunks.append(cur)
                cur = []

    if check is None:
        emit(pending, [i for i, e in enumerate(pending) if hit(e)])
    else:
        emit(pending, [i for i in check if hit(pending[i])])

    absorbed = 0
    it = iter(following)
    while cur:
        node = next(it, None)
        if node is None:
            break
        ents = node.entries
        emit(ents, [len(ents) - 1] if hit(ents[-1]) else ())
        absorbed += 1
    if cur:
        chunks.append(cur)
    return chunks, absorbed
