"""The storage engine: two in-memory RS-tree groups over leveled on-disk runs.

Puts for block ``blk`` are buffered until ``commit_block``, which logs the
block and then inserts it into the dynamic group under key ``addr || blk``.
If the dynamic group already holds at least B/2 entries at that point, the
engine first snapshots the root hash list as a checkpoint, writes the waiting
group to a new level-1 run, cascades merges of full levels, and promotes the
dynamic group to waiting. Flushing after the log append means a flush is never
durable without the block that triggered it. The digest of a block is the hash of the root hash
list ``[dyn, wait, level-1 runs newest first, level-2 runs ..., ...]``.

Data directory layout: ``MANIFEST``, ``checkpoints.bin``, ``txlog.bin`` and
the five files of every live run (docs/data_dir.md).
"""
from __future__ import annotations

import os
import re
from typing import Callable, Iterable, Optional

from .config import EngineConfig
from .hashing import ADDR_LEN, EMPTY_HASH, H, check_addr, check_value, compound_key
from .merkle import ProofNode
from .persist import (DYN, RUN, WAIT, Checkpoint, CheckpointStore, CorruptCheckpoint, Manifest,
                      RunRef, TierRef, TxLog)
from .proof import BareRoot, Proof, RsPath, RunPath
from .rs_tree import RSTree
from .run_store import KINDS, Run, build_from_flush, build_from_merge
from .version_tree import vkey

MANIFEST = "MANIFEST"
CHECKPOINTS = "checkpoints.bin"
TXLOG = "txlog.bin"
_RUN_FILE = re.compile(r"^L(\d+)_R(\d+)\.(" + "|".join(KINDS) + r")$")


class DuplicateWrite(ValueError):
    pass


class ReorgBlocked(RuntimeError):
    """Reads are refused while the groups catch up after an in-memory rewind."""


class BlockOrderError(ValueError):
    pass


class Engine:
    def __init__(self, cfg: EngineConfig, durable_log: bool = True,
                 crash_hook: Optional[Callable[[str], None]] = None):
        self.cfg = cfg
        self.cdc = cfg.cdc
        self.dir = cfg.data_dir
        os.makedirs(self.dir, exist_ok=True)
        self.crash_hook = crash_hook
        self.rebuilds = 0  # runs rebuilt by on-disk reorgs
        self._pending: dict[bytes, bytes] = {}
        self.dyn = RSTree(self.cdc)
        self.wait = RSTree(self.cdc)
        self.dyn_from = 1
        self.wait_range: Optional[tuple[int, int]] = None
        self.levels: list[list[Run]] = []  # levels[i] holds level i+1, oldest run first
        self.blocked = False
        self.next_run_id = 1
        self.block = 1
        self.last_digest = H(EMPTY_HASH + EMPTY_HASH)
        self.ckpts = CheckpointStore(self._p(CHECKPOINTS))
        if os.path.exists(self._p(MANIFEST)):
            self.log = TxLog(self._p(TXLOG), durable_log)
            self._recover()
        else:
            # nothing is committed until the first manifest exists
            for name in (TXLOG, CHECKPOINTS):
                if os.path.exists(self._p(name)):
                    os.remove(self._p(name))
            self.log = TxLog(self._p(TXLOG), durable_log)
            self._remove_unreferenced()
            self.ckpts = CheckpointStore(self._p(CHECKPOINTS))
            self.ckpts.append(self._snapshot(0))
            self._save_manifest()

    @classmethod
    def open(cls, cfg: EngineConfig, **kw) -> "Engine":
        return cls(cfg, **kw)

    def _p(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def _hook(self, point: str) -> None:
        if self.crash_hook is not None:
            self.crash_hook(point)

    def close(self) -> None:
        for level in self.levels:
            for r in level:
                r.close()
        self.log.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- root hash list ------------------------------------------------------

    def runs_newest_first(self) -> list[Run]:
        return [r for level in self.levels for r in reversed(level)]

    def root_hash_list(self) -> list[bytes]:
        if self.blocked:
            return [self.dyn.root_hash] + self.ckpts.items[-1].hashes[1:]
        return [self.dyn.root_hash, self.wait.root_hash] + [r.root_hash for r in self.runs_newest_first()]

    def digest(self) -> bytes:
        return H(b"".join(self.root_hash_list()))

    def _snapshot(self, height: int) -> Checkpoint:
        w0, w1 = self.wait_range or (1, 0)
        refs = [TierRef(DYN, 0, 0, self.dyn.root_hash, self.dyn_from, height),
                TierRef(WAIT, 0, 0, self.wait.root_hash, w0, w1)]
        for r in self.runs_newest_first():
            refs.append(TierRef(RUN, r.level, r.run_id, r.root_hash, r.first_blk, r.last_blk))
        return Checkpoint(height, tuple(refs))

    # -- writes ----------------------------------------------------------------

    def put(self, addr: bytes, value: bytes) -> None:
        check_addr(addr)
        check_value(value)
        addr, value = bytes(addr), bytes(value)
        if addr in self._pending:
            raise DuplicateWrite(f"{addr.hex()} already written in block {self.block}")
        self._pending[addr] = value

    def commit_block(self, blk: Optional[int] = None) -> bytes:
        """Seal the current block and return its index digest."""
        if blk is not None and blk != self.block:
            raise BlockOrderError(f"expected block {self.block}, got {blk}")
        puts = list(self._pending.items())
        self.log.append(self.block, puts)
        self._hook("commit:logged")
        self._maybe_flush()
        for a, v in puts:
            self.dyn.insert(compound_key(a, self.block), v)
        self._pending = {}
        return self._finish_block()

    def _finish_block(self) -> bytes:
        self.block += 1
        self.last_digest = self.digest()
        return self.last_digest

    def _maybe_flush(self) -> None:
        """Called before a block enters the dynamic group: a group filled by
        earlier blocks is flushed now, so the last committed digest always
        describes the live tiers and no block is split across groups."""
        if len(self.dyn) >= self.cfg.group_capacity:
            if self.blocked:
                self._catch_up_flush()
            else:
                self._flush()

    def _flush(self) -> None:
        height = self.block - 1
        self.ckpts.append(self._snapshot(height))
        self._hook("flush:checkpoint")
        retired: list[Run] = []
        if len(self.wait):
            w0, w1 = self.wait_range
            run = build_from_flush(self.dir, 1, self._new_run_id(), self.wait.items(), w0, w1,
                                   self.cfg.mht_fanout, self.cdc, self.cfg.prune)
            self._hook("flush:run")
            if not self.levels:
                self.levels.append([])
            self.levels[0].append(run)
            i = 0
            while len(self.levels[i]) >= self.cfg.size_ratio:
                merged = build_from_merge(self.dir, i + 2, self._new_run_id(), self.levels[i],
                                          self.cfg.mht_fanout, self.cdc, self.cfg.prune)
                self._hook("merge:run")
                retired.extend(self.levels[i])
                self.levels[i] = []
                if len(self.levels) == i + 1:
                    self.levels.append([])
                self.levels[i + 1].append(merged)
                i += 1
        self.wait = self.dyn
        self.wait_range = (self.dyn_from, height)
        self.dyn = RSTree(self.cdc)
        self.dyn_from = height + 1
        self._hook("flush:before-manifest")
        self._save_manifest()
        self._hook("flush:after-manifest")
        for r in retired:
            self._delete_run(r)

    def _catch_up_flush(self) -> None:
        """Flush point reached inside the post-rewind window. The disk already
        holds the result of this flush, so only the groups move; the last
        checkpoint is replaced by the one a never-forked node takes here."""
        height = self.block - 1
        old = self.ckpts.items[-1]
        head = TierRef(DYN, 0, 0, self.dyn.root_hash, self.dyn_from, height)
        self.ckpts.replace_from(len(self.ckpts.items) - 1, [Checkpoint(height, (head,) + old.entries[1:])])
        self.wait = self.dyn
        self.wait_range = (self.dyn_from, height)
        self.dyn = RSTree(self.cdc)
        self.dyn_from = height + 1
        self.blocked = False
        self._save_manifest()

    def _new_run_id(self) -> int:
        rid = self.next_run_id
        self.next_run_id += 1
        return rid

    def _delete_run(self, run: Run) -> None:
        run.close()
        for p in run.paths():
            if os.path.exists(p):
                os.remove(p)

    # -- manifest and recovery -------------------------------------------------

    def _manifest(self, log_limit: Optional[int] = None) -> Manifest:
        runs = [RunRef(r.level, r.run_id, r.first_blk, r.last_blk, r.root_hash)
                for level in self.levels for r in level]
        return Manifest(self.dyn_from, self.wait_range, self.blocked, len(self.ckpts.items),
                        self.next_run_id, runs, log_limit)

    def _save_manifest(self, log_limit: Optional[int] = None) -> None:
        self._manifest(log_limit).save(self._p(MANIFEST))

    def _remove_unreferenced(self, keep: Iterable[tuple[int, int]] = ()) -> None:
        keep = set(keep)
        for name in os.listdir(self.dir):
            m = _RUN_FILE.match(name)
            if (m and (int(m.group(1)), int(m.group(2))) not in keep) or name.endswith(".tmp"):
                os.remove(self._p(name))

    def _recover(self) -> None:
        """Reopen from the manifest: discard files of uncommitted flushes and
        rebuild both groups from the transaction log."""
        m = Manifest.load(self._p(MANIFEST))
        self.ckpts.keep(m.n_checkpoints)
        if not self.ckpts.items:
            raise CorruptCheckpoint("no checkpoints")
        if m.log_limit is not None:
            self.log.truncate_after(m.log_limit)
        self._remove_unreferenced((r.level, r.run_id) for r in m.runs)
        self.levels = []
        for ref in m.runs:
            run = Run(self.dir, ref.level, ref.run_id, ref.first_blk, ref.last_blk, self.cdc)
            if run.root_hash != ref.root:
                raise CorruptCheckpoint(f"run L{ref.level}_R{ref.run_id} root mismatch")
            while len(self.levels) < ref.level:
                self.levels.append([])
            self.levels[ref.level - 1].append(run)
        self.dyn_from, self.wait_range = m.dyn_from, m.wait_range
        self.blocked, self.next_run_id = m.blocked, m.next_run_id
        self.wait = RSTree(self.cdc)
        if self.wait_range:
            for blk, puts in self.log.blocks(*self.wait_range):
                for a, v in puts:
                    self.wait.insert(compound_key(a, blk), v)
        self.dyn = RSTree(self.cdc)
        self.block = self.dyn_from
        last = self.ckpts.items[-1]
        self.last_digest = last.digest if last.height == self.dyn_from - 1 else self.digest()
        self._replay(self.log.blocks(self.dyn_from))
        if m.log_limit is not None:
            self._save_manifest()

    def _replay(self, blocks) -> list[bytes]:
        """Apply already-logged blocks without logging them again."""
        out = []
        for blk, puts in blocks:
            if blk != self.block:
                raise CorruptCheckpoint(f"log gap: expected block {self.block}, found {blk}")
            self._maybe_flush()
            for a, v in puts:
                self.dyn.insert(compound_key(a, blk), v)
            out.append(self._finish_block())
        return out

    # -- reads -----------------------------------------------------------------

    def _check_readable(self) -> None:
        if self.blocked:
            raise ReorgBlocked("index is catching up after a rewind")

    def get(self, addr: bytes) -> Optional[tuple[int, bytes]]:
        """Latest (blk, value) of ``addr``, including the current block's puts."""
        self._check_readable()
        if addr in self._pending:
            return self.block, self._pending[addr]
        for tree in (self.dyn, self.wait):
            hit = tree.search_latest(addr)
            if hit is not None:
                return hit
        for run in self.runs_newest_first():
            hit = run.get_latest(addr)
            if hit is not None:
                return hit
        return None

    def prov_query(self, addr: bytes, blk_l: int, blk_u: int) -> tuple[list[tuple[int, bytes]], Proof]:
        """All versions of ``addr`` written in [blk_l, blk_u], with a proof
        against the last committed digest. Tiers are searched newest first and the
        search stops at the first tier that shows an older version."""
        self._check_readable()
        check_addr(addr)
        if blk_l > blk_u:
            raise ValueError("blk_l > blk_u")
        lo, hi = compound_key(addr, blk_l), compound_key(addr, blk_u)
        results: list[tuple[int, bytes]] = []
        parts = []
        done = False
        for tree in (self.dyn, self.wait):
            if done or not len(tree):
                parts.append(BareRoot(tree.root_hash))
                continue
            found, node = tree.search_range(lo, hi)
            results.extend((int.from_bytes(k[ADDR_LEN:], "big"), v) for k, v in found)
            parts.append(RsPath(node))
            done = _reveals(node, lambda k: k[:ADDR_LEN] == addr and k < lo)
        vlo = vkey(blk_l)
        for run in self.runs_newest_first():
            if done:
                parts.append(BareRoot(run.root_hash))
                continue
            op = run.get_versions(addr, blk_l, blk_u)
            results.extend(op.versions)
            parts.append(RunPath(self.cfg.mht_fanout, op.n_leaves, op.first, op.leaves, op.siblings))
            done = any(l.tree_proof is not None and _reveals(l.tree_proof, lambda k: k < vlo)
                       for l in op.leaves)
        results.sort()
        return results, Proof(parts)

    # -- reporting -------------------------------------------------------------

    def storage_bytes(self) -> dict[str, int]:
        sizes = {k: 0 for k in KINDS}
        for r in self.runs_newest_first():
            for k, v in r.file_sizes().items():
                sizes[k] += v
        sizes["txlog"] = os.path.getsize(self._p(TXLOG))
        sizes["checkpoints"] = os.path.getsize(self._p(CHECKPOINTS))
        sizes["manifest"] = os.path.getsize(self._p(MANIFEST))
        return sizes

    def run_count(self) -> int:
        return sum(len(l) for l in self.levels)

    def __repr__(self) -> str:
        shape = "/".join(str(len(l)) for l in self.levels)
        return (f"Engine(block={self.block}, dyn={len(self.dyn)}, wait={len(self.wait)}, runs={shape or 0}"
                f"{', blocked' if self.blocked else ''})")

    # -- reorg entry point -----------------------------------------------------

    def reorg(self, fork) -> list[bytes]:
        from .reorg import apply_fork
        return apply_fork(self, fork)


def _reveals(node: ProofNode, pred) -> bool:
    """True if a revealed leaf entry of the proof satisfies ``pred``."""
    if node.leaf:
        return any(v is not None and pred(k) for k, v in node.entries)
    return any(isinstance(c, ProofNode) and _reveals(c, pred) for _, c in node.entries)
