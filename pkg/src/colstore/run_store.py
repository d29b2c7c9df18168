"""Immutable on-disk runs.

A run is five files named ``L{level}_R{run}.<kind>``:

* ``state``   latest (addr, blk, value, version offset) per address, 80-byte
  entries packed 51 to a 4096-byte page, sorted by address
* ``index``   learned index from address to state page
* ``version`` one serialized version tree per address
* ``hash``    Merkle tree over H(addr || blk || value || tree root)
* ``bloom``   Bloom filter over the addresses

Formats are described in docs/run_formats.md.
"""
from __future__ import annotations

import heapq
import mmap
import os
import struct
from bisect import bisect_left
from dataclasses import dataclass
from itertools import groupby
from typing import Iterable, Iterator, Optional

from .bloom import BloomFilter
from .cdc import CdcConfig
from .config import PrunePolicy
from .fileio import write_durable
from .hashing import ADDR_LEN, H, u64
from .learned_index import PAGE_SIZE, LearnedIndex
from .merkle import ProofNode
from .mht import HashFile
from .version_tree import VersionTree

STATE_ENTRY = struct.Struct(">32sQ32sQ")
ENTRIES_PER_PAGE = PAGE_SIZE // STATE_ENTRY.size  # 51
_REC_HEAD = struct.Struct(">I32s")  # tree byte length, tree root hash
KINDS = ("state", "index", "version", "hash", "bloom")


def run_path(data_dir: str, level: int, run_id: int, kind: str) -> str:
    return os.path.join(data_dir, f"L{level}_R{run_id}.{kind}")


def state_leaf(addr: bytes, blk: int, value: bytes, tree_root: bytes) -> bytes:
    return H(addr + u64(blk) + value + tree_root)


@dataclass(frozen=True)
class StateEntry:
    addr: bytes
    blk: int
    value: bytes
    version_offset: int


@dataclass
class RevealedLeaf:
    """A hash-file leaf opened in a proof. Exactly one of ``tree_root`` and
    ``tree_proof`` is set."""

    addr: bytes
    blk: int
    value: bytes
    tree_root: Optional[bytes] = None
    tree_proof: Optional[ProofNode] = None


@dataclass
class RunOpening:
    """Proof material for one run: contiguous hash-file leaves from ``first``
    plus the sibling hashes that complete the path to the run root."""

    n_leaves: int
    first: int
    leaves: list
    siblings: list
    versions: list  # (blk, value) pairs in the queried range


class Run:
    def __init__(self, data_dir: str, level: int, run_id: int, first_blk: int, last_blk: int,
                 cdc: Optional[CdcConfig] = None):
        self.data_dir = data_dir
        self.level = level
        self.run_id = run_id
        self.first_blk = first_blk
        self.last_blk = last_blk
        self.cdc = cdc or CdcConfig()
        self.page_reads = 0
        self._files = []
        self._state = self._map("state")
        self._version = self._map("version")
        self.hashes = HashFile(self._map("hash"))
        with open(self.path("index"), "rb") as f:
            self.index = LearnedIndex.from_bytes(f.read())
        with open(self.path("bloom"), "rb") as f:
            self.bloom = BloomFilter.from_bytes(f.read())
        self.n_entries = self.hashes.n_leaves
        self.n_pages = -(-self.n_entries // ENTRIES_PER_PAGE)

    def _map(self, kind: str):
        f = open(self.path(kind), "rb")
        self._files.append(f)
        return mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)

    def close(self) -> None:
        for m in (self._state, self._version, self.hashes.data):
            m.close()
        for f in self._files:
            f.close()
        self._files = []

    def path(self, kind: str) -> str:
        return run_path(self.data_dir, self.level, self.run_id, kind)

    def paths(self) -> list[str]:
        return [self.path(k) for k in KINDS]

    def file_sizes(self) -> dict[str, int]:
        return {k: os.path.getsize(self.path(k)) for k in KINDS}

    @property
    def root_hash(self) -> bytes:
        return self.hashes.root

    def __repr__(self) -> str:
        return f"Run(L{self.level}_R{self.run_id}, blocks {self.first_blk}..{self.last_blk}, {self.n_entries} addrs)"

    # -- state file access -------------------------------------------------

    def _entry(self, idx: int) -> StateEntry:
        off = (idx // ENTRIES_PER_PAGE) * PAGE_SIZE + (idx % ENTRIES_PER_PAGE) * STATE_ENTRY.size
        return StateEntry(*STATE_ENTRY.unpack_from(self._state, off))

    def read_page(self, p: int) -> list[StateEntry]:
        self.page_reads += 1
        n = min(ENTRIES_PER_PAGE, self.n_entries - p * ENTRIES_PER_PAGE)
        base = p * PAGE_SIZE
        return [StateEntry(*STATE_ENTRY.unpack_from(self._state, base + i * STATE_ENTRY.size)) for i in range(n)]

    def find(self, addr: bytes) -> tuple[int, Optional[StateEntry]]:
        """(index, entry) for ``addr``, or (insertion index, None) if absent.
        Reads at most two state pages."""
        p = self.index.predict(addr)
        ents = self.read_page(p)
        if addr < ents[0].addr and p > 0:
            p -= 1
            ents = self.read_page(p)
        elif addr > ents[-1].addr and p + 1 < self.n_pages:
            p += 1
            ents = self.read_page(p)
        i = bisect_left([e.addr for e in ents], addr)
        pos = p * ENTRIES_PER_PAGE + i
        if i < len(ents) and ents[i].addr == addr:
            return pos, ents[i]
        return pos, None

    def get_latest(self, addr: bytes) -> Optional[tuple[int, bytes]]:
        if addr not in self.bloom:
            return None
        _, e = self.find(addr)
        return (e.blk, e.value) if e else None

    def iter_states(self) -> Iterator[StateEntry]:
        for i in range(self.n_entries):
            yield self._entry(i)

    # -- version file access -----------------------------------------------

    def tree_root_at(self, offset: int) -> bytes:
        return _REC_HEAD.unpack_from(self._version, offset)[1]

    def tree_at(self, offset: int) -> VersionTree:
        n, _ = _REC_HEAD.unpack_from(self._version, offset)
        start = offset + _REC_HEAD.size
        return VersionTree.deserialize(self._version[start:start + n], self.cdc)

    def iter_trees(self) -> Iterator[tuple[bytes, VersionTree]]:
        for e in self.iter_states():
            yield e.addr, self.tree_at(e.version_offset)

    def iter_versions(self) -> Iterator[tuple[bytes, int, bytes]]:
        """Every retained (addr, blk, value) in the run, in key order."""
        for addr, tree in self.iter_trees():
            for blk, value in tree.retained_versions():
                yield addr, blk, value

    # -- proofs ------------------------------------------------------------

    def get_versions(self, addr: bytes, blk_l: int, blk_u: int) -> RunOpening:
        """Versions of ``addr`` in [blk_l, blk_u] with the proof material
        binding them to the run root. For an absent address the proof opens
        the neighbouring leaves instead."""
        pos, e = self.find(addr)
        if e is not None:
            tree = self.tree_at(e.version_offset)
            versions, tproof = tree.query_range(blk_l, blk_u)
            leaf = RevealedLeaf(e.addr, e.blk, e.value, tree_proof=tproof)
            return RunOpening(self.n_entries, pos, [leaf], self.hashes.prove(pos, pos), versions)
        first = max(pos - 1, 0)
        last = min(pos, self.n_entries - 1)
        leaves = []
        for i in range(first, last + 1):
            s = self._entry(i)
            leaves.append(RevealedLeaf(s.addr, s.blk, s.value, tree_root=self.tree_root_at(s.version_offset)))
        return RunOpening(self.n_entries, first, leaves, self.hashes.prove(first, last), [])


def write_run(data_dir: str, level: int, run_id: int, first_blk: int, last_blk: int,
              trees: Iterable[tuple[bytes, VersionTree]], fanout: int = 4,
              cdc: Optional[CdcConfig] = None) -> Run:
    """Write the five files of a run from (addr, tree) pairs sorted by addr."""
    state = bytearray()
    version = bytearray()
    leaves = []
    addrs = []
    firsts = []
    for addr, tree in trees:
        if len(addr) != ADDR_LEN:
            raise ValueError("address must be 32 bytes")
        if addrs and addr <= addrs[-1]:
            raise ValueError("addresses must be strictly increasing")
        blk, value = tree.latest()
        root = tree.root_hash
        body = tree.serialize()
        if len(addrs) % ENTRIES_PER_PAGE == 0:
            state.extend(bytes(-len(state) % PAGE_SIZE))
            firsts.append(addr)
        state.extend(STATE_ENTRY.pack(addr, blk, value, len(version)))
        version.extend(_REC_HEAD.pack(len(body), root))
        version.extend(body)
        leaves.append(state_leaf(addr, blk, value, root))
        addrs.append(addr)
    if not addrs:
        raise ValueError("a run needs at least one address")
    state.extend(bytes(-len(state) % PAGE_SIZE))
    files = {
        "state": bytes(state),
        "index": LearnedIndex.train(firsts).to_bytes(),
        "version": bytes(version),
        "hash": HashFile.encode(leaves, fanout),
        "bloom": BloomFilter.build(addrs, len(addrs)).to_bytes(),
    }
    for kind in KINDS:
        write_durable(run_path(data_dir, level, run_id, kind), files[kind])
    return Run(data_dir, level, run_id, first_blk, last_blk, cdc)


def build_from_flush(data_dir: str, level: int, run_id: int, entries: Iterable[tuple[bytes, bytes]],
                     first_blk: int, last_blk: int, fanout: int = 4,
                     cdc: Optional[CdcConfig] = None, policy: PrunePolicy = PrunePolicy()) -> Run:
    """Build a run from (compound key, value) pairs sorted by key."""
    cdc = cdc or CdcConfig()

    def trees():
        for addr, group in groupby(entries, key=lambda kv: kv[0][:ADDR_LEN]):
            pairs = [(int.from_bytes(k[ADDR_LEN:], "big"), v) for k, v in group]
            yield addr, policy.apply(VersionTree.build(pairs, cdc))

    return write_run(data_dir, level, run_id, first_blk, last_blk, trees(), fanout, cdc)


def build_from_merge(data_dir: str, level: int, run_id: int, runs: list[Run], fanout: int = 4,
                     cdc: Optional[CdcConfig] = None, policy: PrunePolicy = PrunePolicy()) -> Run:
    """Sort-merge ``runs`` (oldest first) into one run. Version trees of an
    address found in several runs are merged oldest to newest."""
    cdc = cdc or CdcConfig()

    def tagged(age, run):
        for addr, tree in run.iter_trees():
            yield addr, age, tree

    streams = [tagged(age, r) for age, r in enumerate(runs)]

    def trees():
        merged = heapq.merge(*streams, key=lambda t: (t[0], t[1]))
        for addr, group in groupby(merged, key=lambda t: t[0]):
            parts = [t[2] for t in group]
            tree = parts[0]
            for nxt in parts[1:]:
                tree = tree.merge(nxt)
            yield addr, policy.apply(tree)

    first = min(r.first_blk for r in runs)
    last = max(r.last_blk for r in runs)
    return write_run(data_dir, level, run_id, first, last, trees(), fanout, cdc)
