"""Rewind-supported tree: an in-memory Merkle tree whose node boundaries are
content defined, so its shape and root hash depend only on the key set.

Nodes live in per-level arrays; a parent entry is keyed by the last key of its
child, which is how children are located. Nodes are immutable, so ``copy()``
is a cheap snapshot that shares all nodes with the original.
"""
from __future__ import annotations

from bisect import bisect_left
from itertools import islice
from operator import itemgetter
from typing import Iterator, Optional

from .cdc import CdcConfig, recut
from .hashing import ADDR_LEN, EMPTY_HASH, MAX_BLK, VALUE_LEN, read_u64, u64
from .merkle import MissingNode, Node, ProofNode, make_node, parent_entries, prove_range

KEY_LEN = ADDR_LEN + 8
_first = itemgetter(0)
_MAX_SUFFIX = u64(MAX_BLK)


class DuplicateKey(KeyError):
    pass


class KeyNotFound(KeyError):
    pass


class RSTree:
    def __init__(self, cdc: Optional[CdcConfig] = None):
        self.cdc = cdc or CdcConfig()
        self._levels: list[list[Node]] = []
        self._lastkeys: list[list[bytes]] = []
        self._size = 0

    @classmethod
    def build(cls, items, cdc: Optional[CdcConfig] = None) -> "RSTree":
        """Bottom-up construction from (key, value) pairs; the reference shape."""
        tree = cls(cdc)
        items = sorted(items, key=_first)
        for a, b in zip(items, items[1:]):
            if a[0] == b[0]:
                raise DuplicateKey(a[0])
        if items:
            tree._levels = [[make_node(c) for c in tree.cdc.chunk(items)]]
            tree._lastkeys = [[n.last_key for n in tree._levels[0]]]
            tree._size = len(items)
            tree._grow(0)
        return tree

    def copy(self) -> "RSTree":
        t = RSTree(self.cdc)
        t._levels = [list(l) for l in self._levels]
        t._lastkeys = [list(l) for l in self._lastkeys]
        t._size = self._size
        return t

    def __len__(self) -> int:
        return self._size

    @property
    def root_hash(self) -> bytes:
        return self._levels[-1][0].hash if self._levels else EMPTY_HASH

    @property
    def height(self) -> int:
        return len(self._levels)

    @property
    def node_count(self) -> int:
        return sum(len(l) for l in self._levels)

    def levels(self) -> list[list[Node]]:
        return [list(l) for l in self._levels]

    def items(self) -> Iterator[tuple[bytes, bytes]]:
        for n in self._levels[0] if self._levels else ():
            yield from n.entries

    # -- lookups ---------------------------------------------------------

    def get(self, key: bytes) -> Optional[bytes]:
        if not self._levels:
            return None
        lk = self._lastkeys[0]
        j = bisect_left(lk, key)
        if j == len(lk):
            return None
        for k, v in self._levels[0][j].entries:
            if k == key:
                return v
        return None

    def __contains__(self, key: bytes) -> bool:
        return self.get(key) is not None

    def search_latest(self, addr: bytes) -> Optional[tuple[int, bytes]]:
        """Latest version of ``addr``: the largest key below ``addr || max_int``."""
        if not self._levels:
            return None
        q = addr + _MAX_SUFFIX
        lk = self._lastkeys[0]
        leaves = self._levels[0]
        j = bisect_left(lk, q)
        if j == len(lk):
            entry = leaves[-1].entries[-1]
        else:
            ents = leaves[j].entries
            idx = bisect_left([k for k, _ in ents], q) - 1
            if idx >= 0:
                entry = ents[idx]
            elif j > 0:
                entry = leaves[j - 1].entries[-1]
            else:
                return None
        k, v = entry
        if k[:ADDR_LEN] != addr:
            return None
        return read_u64(k, ADDR_LEN), v

    def _child(self, level: int, key: bytes) -> Node:
        lk = self._lastkeys[level]
        i = bisect_left(lk, key)
        if i == len(lk) or lk[i] != key:
            raise MissingNode(key)
        return self._levels[level][i]

    def search_range(self, lo: bytes, hi: bytes) -> tuple[list, Optional[ProofNode]]:
        """Entries with lo <= key <= hi plus a proof that also reveals the
        neighbouring entries. The proof is None for an empty tree."""
        if lo > hi:
            raise ValueError("empty key range")
        if not self._levels:
            return [], None
        proof, found = prove_range(self._levels[-1][0], len(self._levels), self._child, lo, hi)
        return found, proof

    # -- updates ---------------------------------------------------------

    def insert(self, key: bytes, value: bytes) -> None:
        if len(key) != KEY_LEN or len(value) != VALUE_LEN:
            raise ValueError("key must be 40 bytes and value 32 bytes")
        if not self._levels:
            node = make_node([(key, value)])
            self._levels = [[node]]
            self._lastkeys = [[key]]
            self._size = 1
            return
        if self.get(key) is not None:
            raise DuplicateKey(key)
        self._update([], [(key, value)])
        self._size += 1

    def delete(self, key: bytes) -> None:
        if self.get(key) is None:
            raise KeyNotFound(key)
        self._update([key], [])
        self._size -= 1

    def _update(self, removed: list, added: list) -> None:
        i = 0
        while True:
            removed, added = self._edit(i, removed, added)
            n = len(self._levels[i])
            if n == 0:
                self._levels.clear()
                self._lastkeys.clear()
                return
            if n == 1:
                del self._levels[i + 1:]
                del self._lastkeys[i + 1:]
                return
            if i + 1 == len(self._levels):
                self._grow(i)
                return
            i += 1

    def _edit(self, i: int, removed: list, added: list):
        """Apply an edit to level ``i`` and re-cut the affected nodes.

        Returns the parent-level edit: keys of replaced nodes and entries of
        the nodes that replace them.
        """
        nodes = self._levels[i]
        lk = self._lastkeys[i]
        if len(removed) == 1 and len(added) == 1 and removed[0] == added[0][0]:
            fast = self._replace_in_place(nodes, lk, added[0])
            if fast is not None:
                return fast
        elif not removed and len(added) == 1:
            fast = self._insert_in_place(nodes, lk, added[0])
            if fast is not None:
                return fast
        bounds = []
        if removed:
            bounds += (removed[0], removed[-1])
        if added:
            bounds += (added[0][0], added[-1][0])
        last = len(lk) - 1
        j = min(bisect_left(lk, min(bounds)), last)
        jb = min(bisect_left(lk, max(bounds)), last)
        seg = nodes[j:jb + 1]
        region = [e for n in seg for e in n.entries]
        # only node-final entries and new entries can match the cut pattern
        ends = {n.entries[-1][0] for n in seg}
        if removed:
            gone = set(removed)
            region = [e for e in region if e[0] not in gone]
            ends -= gone
        keys = [e[0] for e in region]
        for e in added:
            p = bisect_left(keys, e[0])
            keys.insert(p, e[0])
            region.insert(p, e)
            ends.add(e[0])
        pos = sorted([bisect_left(keys, k) for k in ends])
        chunks, absorbed = recut(region, islice(nodes, jb + 1, None), self.cdc, pos)
        end = jb + 1 + absorbed
        old = nodes[j:end]
        new = [make_node(c) for c in chunks]
        nodes[j:end] = new
        lk[j:end] = [n.entries[-1][0] for n in new]
        return [n.entries[-1][0] for n in old], parent_entries(new)

    def _replace_in_place(self, nodes: list, lk: list, entry):
        # A payload change under an existing key keeps every boundary unless
        # the entry's pattern status decides a cut; that case takes the slow path.
        key = entry[0]
        j = bisect_left(lk, key)
        ents = nodes[j].entries
        p = bisect_left(ents, key, key=_first)
        hit = self.cdc.is_pattern(key + entry[1])
        if p < len(ents) - 1:
            if hit:
                return None
        elif not (hit or len(ents) == self.cdc.f_max or j == len(nodes) - 1):
            return None
        new = make_node(ents[:p] + (entry,) + ents[p + 1:])
        nodes[j] = new
        return [lk[j]], [(lk[j], new.hash)]

    def _insert_in_place(self, nodes: list, lk: list, entry):
        # a non-pattern entry landing before a node's last entry moves no boundary
        key = entry[0]
        j = bisect_left(lk, key)
        if j == len(nodes):
            return None
        ents = nodes[j].entries
        if len(ents) >= self.cdc.f_max or self.cdc.is_pattern(key + entry[1]):
            return None
        p = bisect_left(ents, key, key=_first)
        new = make_node(ents[:p] + (entry,) + ents[p:])
        nodes[j] = new
        return [lk[j]], [(lk[j], new.hash)]

    def _grow(self, i: int) -> None:
        while len(self._levels[i]) > 1:
            nodes = [make_node(c) for c in self.cdc.chunk(parent_entries(self._levels[i]))]
            self._levels.append(nodes)
            self._lastkeys.append([n.last_key for n in nodes])
            i += 1


def cdc_create_nodes(entries, cdc: Optional[CdcConfig] = None) -> list[Node]:
    """Partition one level's sorted entries into nodes."""
    cdc = cdc or CdcConfig()
    return [make_node(c) for c in cdc.chunk(list(entries))]
