"""Per-address version tree: a CDC Merkle tree over (blk, value) pairs.

Keys are block heights encoded as 8-byte big-endian integers. A tree is
stored as one ``{position: node}`` map per level plus the full node count of
that level, so a pruned tree keeps positional navigation over the nodes it
retains. Pruning keeps what a later merge needs: the rightmost node of every
level, the leftmost nodes up to the point where a merge is guaranteed to
realign, and the ancestors of everything kept.
"""
from __future__ import annotations

import struct
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .cdc import CdcConfig, recut
from .hashing import EMPTY_HASH, VALUE_LEN, read_u64, u64
from .merkle import MissingNode, Node, ProofNode, make_node, parent_entries, prove_range

VKEY_LEN = 8
ENTRY_LEN = VKEY_LEN + 32


class UnsortedInput(ValueError):
    pass


class OverlapViolation(ValueError):
    pass


class InsufficientRetention(LookupError):
    pass


class PrunedRange(LookupError):
    """The requested versions were dropped by pruning; ask an archive node."""


class MalformedBytes(ValueError):
    pass


def vkey(blk: int) -> bytes:
    return u64(blk)


@dataclass
class VersionTree:
    cdc: CdcConfig = field(default_factory=CdcConfig)
    levels: list = field(default_factory=list)  # list[dict[int, Node]], leaves first
    counts: list = field(default_factory=list)  # full node count per level
    _index: Optional[list] = field(default=None, repr=False, compare=False)

    # -- construction ----------------------------------------------------

    @classmethod
    def build(cls, pairs: Iterable[tuple[int, bytes]], cdc: Optional[CdcConfig] = None) -> "VersionTree":
        cdc = cdc or CdcConfig()
        entries = []
        prev = -1
        for blk, value in pairs:
            if blk <= prev:
                raise UnsortedInput(f"version {blk} after {prev}")
            if len(value) != VALUE_LEN:
                raise ValueError("value must be 32 bytes")
            prev = blk
            entries.append((u64(blk), bytes(value)))
        tree = cls(cdc)
        level = entries
        while level:
            nodes = [make_node(c) for c in cdc.chunk(level)]
            tree.levels.append(dict(enumerate(nodes)))
            tree.counts.append(len(nodes))
            if len(nodes) == 1:
                break
            level = parent_entries(nodes)
        return tree

    # -- basic accessors -------------------------------------------------

    @property
    def height(self) -> int:
        return len(self.levels)

    @property
    def empty(self) -> bool:
        return not self.levels

    @property
    def root(self) -> Optional[Node]:
        return self.levels[-1][0] if self.levels else None

    @property
    def root_hash(self) -> bytes:
        return self.levels[-1][0].hash if self.levels else EMPTY_HASH

    @property
    def pruned(self) -> bool:
        return any(len(l) < c for l, c in zip(self.levels, self.counts))

    @property
    def node_count(self) -> int:
        """Nodes materialized (retained) in this tree."""
        return sum(len(l) for l in self.levels)

    @property
    def full_node_count(self) -> int:
        return sum(self.counts)

    def _node(self, level: int, pos: int) -> Node:
        try:
            return self.levels[level][pos]
        except KeyError:
            raise InsufficientRetention(f"level {level} position {pos} was pruned") from None

    @property
    def max_version(self) -> int:
        return read_u64(self.root.entries[-1][0])

    @property
    def min_version(self) -> int:
        return read_u64(self._node(0, 0).entries[0][0])

    def latest(self) -> tuple[int, bytes]:
        k, v = self._node(0, self.counts[0] - 1).entries[-1]
        return read_u64(k), v

    def versions(self) -> list[tuple[int, bytes]]:
        """All (blk, value) pairs; only available on an unpruned tree."""
        if self.empty:
            return []
        if self.pruned:
            raise PrunedRange("tree is pruned")
        return [(read_u64(k), v) for p in range(self.counts[0]) for k, v in self.levels[0][p].entries]

    def retained_versions(self) -> list[tuple[int, bytes]]:
        if self.empty:
            return []
        return [(read_u64(k), v) for p in sorted(self.levels[0]) for k, v in self.levels[0][p].entries]

    # -- navigation by key -----------------------------------------------

    def _lookup_tables(self):
        if self._index is None:
            idx = []
            for level in self.levels:
                pos = sorted(level)
                idx.append(([level[p].entries[-1][0] for p in pos], pos))
            self._index = idx
        return self._index

    def _child(self, level: int, key: bytes) -> Node:
        keys, pos = self._lookup_tables()[level]
        i = bisect_left(keys, key)
        if i == len(keys) or keys[i] != key:
            raise MissingNode(key)
        return self.levels[level][pos[i]]

    def _parent_pos(self, level: int, child: Node) -> int:
        """Position of the retained node at ``level`` holding ``child``'s entry."""
        keys, pos = self._lookup_tables()[level]
        i = bisect_left(keys, child.entries[-1][0])
        if i == len(keys):
            raise InsufficientRetention("ancestor missing")
        return pos[i]

    # -- queries ---------------------------------------------------------

    def query_range(self, blk_l: int, blk_u: int) -> tuple[list[tuple[int, bytes]], Optional[ProofNode]]:
        """Versions in [blk_l, blk_u] plus a proof that also reveals the
        nearest version on either side of the range."""
        if blk_l > blk_u:
            raise ValueError("blk_l > blk_u")
        if self.empty:
            return [], None
        try:
            proof, found = prove_range(self.root, self.height, self._child, vkey(blk_l), vkey(blk_u))
        except MissingNode:
            raise PrunedRange(f"versions near [{blk_l}, {blk_u}] were pruned") from None
        return [(read_u64(k), v) for k, v in found], proof

    # -- pruning ---------------------------------------------------------

    def prune(self, keep_recent: int = 0) -> "VersionTree":
        """Drop every node a future merge cannot need; root hash is unchanged.

        ``keep_recent`` additionally keeps the leaves holding the most recent
        ``keep_recent`` versions.
        """
        if self.empty:
            return VersionTree(self.cdc)
        h = self.height
        keep: list[set] = [set() for _ in range(h)]

        # Left prefix. A merge that has this tree on its right re-cuts nodes
        # from the left until a cut lands on an old node end; a node whose
        # last entry matches the cut pattern always ends one.
        def open_end(node: Node) -> bool:
            k, v = node.entries[-1]
            return not self.cdc.is_pattern(k + v)

        p = 0
        keep[0].add(0)
        while open_end(self._node(0, p)) and p + 1 < self.counts[0]:
            p += 1
            keep[0].add(p)
        for i in range(1, h):
            last_child = self._node(i - 1, p)
            q = self._parent_pos(i, last_child)
            keep[i].update(range(q + 1))
            node = self._node(i, q)
            if (open_end(node) or node.entries[-1][0] == last_child.entries[-1][0]) and q + 1 < self.counts[i]:
                q += 1
                keep[i].add(q)
                while open_end(self._node(i, q)) and q + 1 < self.counts[i]:
                    q += 1
                    keep[i].add(q)
            p = q

        # right boundary
        for i in range(h):
            keep[i].add(self.counts[i] - 1)

        # most recent versions
        if keep_recent > 0:
            got = 0
            p = self.counts[0] - 1
            while got < keep_recent and p >= 0 and p in self.levels[0]:
                keep[0].add(p)
                got += len(self.levels[0][p])
                p -= 1

        # ancestors
        for i in range(h - 1):
            for p in list(keep[i]):
                keep[i + 1].add(self._parent_pos(i + 1, self._node(i, p)))

        out = VersionTree(self.cdc, counts=list(self.counts))
        for i in range(h):
            out.levels.append({p: self._node(i, p) for p in sorted(keep[i])})
        return out

    # -- merge -----------------------------------------------------------

    def merge(self, right: "VersionTree") -> "VersionTree":
        """Merge with a tree holding strictly newer versions.

        Only the rightmost nodes of ``self`` and the leftmost nodes of
        ``right`` are re-cut; everything else is shared. The result has the
        root a fresh build over both version lists would have.
        """
        left = self
        if right.empty:
            return left.copy()
        if left.empty:
            return right.copy()
        if left.cdc != right.cdc:
            raise ValueError("trees use different fanout settings")
        if left.max_version >= right.min_version:
            raise OverlapViolation(f"left max {left.max_version} >= right min {right.min_version}")
        cdc = left.cdc
        out = VersionTree(cdc)
        hl, hr = left.height, right.height

        new_parents: list = []
        consumed = 0          # nodes of `right` replaced at the level below
        r_top = right.root    # above its root, right continues as single-entry nodes
        level = 0
        while True:
            # left side: keep all but the rightmost node, re-cut that node
            merged: dict = {}
            if level < hl:
                nl = left.counts[level]
                for p, node in left.levels[level].items():
                    if p < nl - 1:
                        merged[p] = node
                tail = left._node(level, nl - 1).entries
                if level == 0:
                    pending = list(tail)
                    check = [len(pending) - 1]
                else:
                    pending = list(tail[:-1])
                    check = []
            else:
                nl = 1
                pending = []
                check = []
            check.extend(range(len(pending), len(pending) + len(new_parents)))
            pending.extend(new_parents)

            # right side: skip entries whose children were replaced below
            if level < hr:
                nr = right.counts[level]
                get_r = right.levels[level]
            else:
                r_top = make_node([(r_top.entries[-1][0], r_top.hash)])
                nr = 1
                get_r = {0: r_top}

            def rnode(p, get_r=get_r, level=level):
                try:
                    return get_r[p]
                except KeyError:
                    raise InsufficientRetention(f"right tree level {level} position {p} was pruned") from None

            drop = consumed
            pos = 0
            while drop and drop >= len(rnode(pos).entries):
                drop -= len(rnode(pos).entries)
                pos += 1
            used = pos
            if drop:
                part = rnode(pos).entries[drop:]
                pending.extend(part)
                check.append(len(pending) - 1)
                pos += 1
                used += 1

            def following(pos=pos, nr=nr, rnode=rnode):
                for p in range(pos, nr):
                    yield rnode(p)

            try:
                chunks, absorbed = recut(pending, following(), cdc, sorted(check))
            except MissingNode as exc:  # pragma: no cover - rnode raises directly
                raise InsufficientRetention(str(exc)) from None
            used += absorbed
            new = [make_node(c) for c in chunks]
            base = nl - 1
            for k, node in enumerate(new):
                merged[base + k] = node
            shift = base + len(new) - used
            for p, node in get_r.items():
                if p >= used:
                    merged[p + shift] = node
            total = base + len(new) + (nr - used)
            out.levels.append(merged)
            out.counts.append(total)
            if total == 1:
                return out
            new_parents = parent_entries(new)
            consumed = used
            level += 1

    def copy(self) -> "VersionTree":
        return VersionTree(self.cdc, [dict(l) for l in self.levels], list(self.counts))

    # -- serialization ---------------------------------------------------

    def serialize(self) -> bytes:
        """Breadth-first encoding, root level first. See docs/version_file.md."""
        h = self.height
        out = [struct.pack(">B", h)]
        order = list(range(h - 1, -1, -1))
        for i in order:
            out.append(struct.pack(">I", self.counts[i]))
        bits = []
        for i in order:
            level = self.levels[i]
            bits.extend(p in level for p in range(self.counts[i]))
        bitmap = bytearray((len(bits) + 7) // 8)
        for n, b in enumerate(bits):
            if b:
                bitmap[n >> 3] |= 0x80 >> (n & 7)
        out.append(bytes(bitmap))
        for i in order:
            level = self.levels[i]
            for p in sorted(level):
                node = level[p]
                out.append(struct.pack(">H", len(node.entries)))
                out.extend(k + v for k, v in node.entries)
        return b"".join(out)

    @classmethod
    def deserialize(cls, data: bytes, cdc: Optional[CdcConfig] = None) -> "VersionTree":
        tree, end = cls.decode(data, 0, cdc)
        if end != len(data):
            raise MalformedBytes("trailing bytes")
        return tree

    @classmethod
    def decode(cls, data, off: int = 0, cdc: Optional[CdcConfig] = None) -> tuple["VersionTree", int]:
        """Decode one tree starting at ``off``; returns (tree, end offset)."""
        tree = cls(cdc or CdcConfig())
        try:
            (h,) = struct.unpack_from(">B", data, off)
            off += 1
            counts = list(struct.unpack_from(f">{h}I", data, off))
            off += 4 * h
            total = sum(counts)
            nbytes = (total + 7) // 8
            if off + nbytes > len(data):
                raise MalformedBytes("truncated bitmap")
            bitmap = bytes(data[off:off + nbytes])
            off += nbytes
            levels = []
            n = 0
            for c in counts:
                level = {}
                for p in range(c):
                    if bitmap[n >> 3] & (0x80 >> (n & 7)):
                        (m,) = struct.unpack_from(">H", data, off)
                        off += 2
                        if m == 0 or off + m * ENTRY_LEN > len(data):
                            raise MalformedBytes("bad node length")
                        raw = bytes(data[off:off + m * ENTRY_LEN])
                        off += m * ENTRY_LEN
                        level[p] = make_node([(raw[j:j + 8], raw[j + 8:j + ENTRY_LEN])
                                              for j in range(0, len(raw), ENTRY_LEN)])
                    n += 1
                levels.append(level)
        except struct.error as exc:
            raise MalformedBytes(str(exc)) from None
        if h and (counts[0] != 1 or 0 not in levels[0]):
            raise MalformedBytes("root level must hold one retained node")
        tree.levels = levels[::-1]
        tree.counts = counts[::-1]
        return tree, off
