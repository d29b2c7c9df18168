"""Chain reorganization.

A fork rewinds the engine to the common ancestor ``blk_rew`` and appends the
canonical blocks after it. Shallow forks are undone in memory; forks that
reach below the waiting group restore the newest checkpoint at or before the
ancestor, keeping every run whose hash still matches and rebuilding the rest.
Either way the digests that follow equal those of a node that never saw the
abandoned branch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .hashing import ADDR_LEN, compound_key
from .persist import RUN, CorruptCheckpoint
from .rs_tree import RSTree
from .run_store import Run, build_from_flush

FREQUENT, RARE = "in-memory", "on-disk"


class RewindTooDeep(ValueError):
    pass


class NoCheckpoint(RuntimeError):
    pass


@dataclass
class ForkRequest:
    blk_cur: int
    blk_rew: int
    canonical_suffix: list = field(default_factory=list)  # [(blk, [(addr, value), ...]), ...]

    def __post_init__(self):
        if self.blk_rew > self.blk_cur:
            raise ValueError("blk_rew must not exceed blk_cur")
        for i, (blk, _) in enumerate(self.canonical_suffix):
            if blk != self.blk_rew + 1 + i:
                raise ValueError("canonical suffix must start at blk_rew + 1 and be contiguous")


def _check_request(engine, fork: ForkRequest) -> None:
    if engine._pending:
        raise ValueError("cannot reorg with uncommitted puts")
    if fork.blk_cur != engine.block - 1:
        raise ValueError(f"fork head {fork.blk_cur} is not the engine head {engine.block - 1}")


def _restores_wait(engine, blk_rew: int) -> bool:
    """True when the rewind must bring the waiting group back as the dynamic
    group: the target lies inside it, or is the flush height itself, whose
    header digest predates the flush."""
    return not engine.blocked and engine.wait_range is not None and blk_rew < engine.dyn_from


def classify(engine, blk_rew: int) -> str:
    if blk_rew + 1 > engine.dyn_from:
        return FREQUENT
    if engine.blocked:
        # dyn_from - 1 is an older flush height; its pre-flush layout is on disk
        return RARE
    if engine.wait_range is None:
        return FREQUENT if blk_rew + 1 == engine.dyn_from else RARE
    return FREQUENT if engine.wait_range[0] <= blk_rew else RARE


def _truncate_history(engine, blk_rew: int) -> None:
    # the limit makes a crash between here and the truncation land on blk_rew
    engine._save_manifest(log_limit=blk_rew)
    engine._hook("reorg:manifest")
    engine.log.truncate_after(blk_rew)
    engine.block = blk_rew + 1
    engine._save_manifest()


def rewind_in_memory(engine, fork: ForkRequest):
    _check_request(engine, fork)
    blk_rew = fork.blk_rew
    if classify(engine, blk_rew) != FREQUENT:
        raise RewindTooDeep(f"block {blk_rew} is below the in-memory groups")
    hi = None
    if _restores_wait(engine, blk_rew):
        # the waiting group becomes the dynamic group again and the disk is
        # ahead until the next flush point
        hi = engine.wait_range[1]
        engine.dyn = engine.wait
        engine.dyn_from = engine.wait_range[0]
        engine.wait = RSTree(engine.cdc)
        engine.wait_range = None
        engine.blocked = True
    for blk, puts in engine.log.blocks(blk_rew + 1, hi):
        for addr, _ in puts:
            engine.dyn.delete(compound_key(addr, blk))
    _truncate_history(engine, blk_rew)
    engine.last_digest = engine.digest()
    return engine


def _versions_in_range(engine, lo: int, hi: int) -> list[tuple[bytes, bytes]]:
    """Sorted (compound key, value) pairs written in blocks [lo, hi]. Archive
    indexes hold every version; pruned ones fall back to the block log."""
    if engine.cfg.prune.archive:
        out = []
        for tree in (engine.dyn, engine.wait):
            out.extend((k, v) for k, v in tree.items()
                       if lo <= int.from_bytes(k[ADDR_LEN:], "big") <= hi)
        for run in engine.runs_newest_first():
            if run.last_blk < lo or run.first_blk > hi:
                continue
            out.extend((compound_key(a, b), v) for a, b, v in run.iter_versions() if lo <= b <= hi)
        out.sort()
        return out
    return sorted((compound_key(a, blk), v) for blk, puts in engine.log.blocks(lo, hi) for a, v in puts)


def chain_reorg_on_disk(engine, fork: ForkRequest):
    _check_request(engine, fork)
    blk_rew = fork.blk_rew
    idx = max((i for i, c in enumerate(engine.ckpts.items) if c.height <= blk_rew), default=None)
    if idx is None:
        raise NoCheckpoint(f"no checkpoint at or before block {blk_rew}")
    ck = engine.ckpts.items[idx]
    current = {r.root_hash: r for r in engine.runs_newest_first()}
    # walk oldest to newest: old runs are the ones most likely to survive
    kept: list[Run] = []
    for ref in reversed([e for e in ck.entries if e.kind == RUN]):
        run = current.pop(ref.hash, None)
        if run is None:
            run = build_from_flush(engine.dir, ref.level, engine._new_run_id(),
                                   _versions_in_range(engine, ref.first_blk, ref.last_blk),
                                   ref.first_blk, ref.last_blk, engine.cfg.mht_fanout, engine.cdc,
                                   engine.cfg.prune)
            if run.root_hash != ref.hash:
                raise CorruptCheckpoint(f"rebuilt run for blocks {ref.first_blk}..{ref.last_blk} differs")
            engine.rebuilds += 1
        kept.append(run)
    levels: list[list[Run]] = []
    for run in kept:
        while len(levels) < run.level:
            levels.append([])
        levels[run.level - 1].append(run)
    wait_ref = ck.entries[1]
    engine.levels = levels
    engine.blocked = False
    engine.dyn_from = ck.entries[0].first_blk
    engine.wait_range = (wait_ref.first_blk, wait_ref.last_blk) if wait_ref.first_blk <= wait_ref.last_blk else None
    engine._hook("reorg:rebuilt")
    # the checkpoint's own flush is redone by the replay below
    dropped = engine.ckpts.items[idx:]
    engine.ckpts.items = engine.ckpts.items[:idx]
    engine._save_manifest(log_limit=blk_rew)
    engine._hook("reorg:manifest")
    engine.ckpts.items += dropped
    engine.ckpts.replace_from(idx, [])
    engine.log.truncate_after(blk_rew)
    for run in current.values():
        engine._delete_run(run)
    engine.wait = RSTree(engine.cdc)
    if engine.wait_range:
        for blk, puts in engine.log.blocks(*engine.wait_range):
            for a, v in puts:
                engine.wait.insert(compound_key(a, blk), v)
    engine.dyn = RSTree(engine.cdc)
    engine.block = engine.dyn_from
    engine.last_digest = engine.digest()
    engine._replay(engine.log.blocks(engine.dyn_from, blk_rew))
    engine._save_manifest()
    return engine


def apply_fork(engine, fork: ForkRequest) -> list[bytes]:
    """Rewind to ``fork.blk_rew`` by the cheapest valid path, then commit the
    canonical suffix. Returns the suffix digests."""
    if classify(engine, fork.blk_rew) == FREQUENT:
        rewind_in_memory(engine, fork)
    else:
        chain_reorg_on_disk(engine, fork)
    digests = []
    for blk, puts in fork.canonical_suffix:
        for addr, value in puts:
            engine.put(addr, value)
        digests.append(engine.commit_block(blk))
    return digests
