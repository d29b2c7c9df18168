"""Shared drivers for engine tests."""
from __future__ import annotations

import random

from colstore.config import EngineConfig, PrunePolicy
from colstore.engine import Engine
from colstore.hashing import H

ADDRS = [bytes([i]) * 32 for i in range(40)]


def small_cfg(path, B=16, T=3, prune=None, **kw) -> EngineConfig:
    return EngineConfig(str(path), btree_capacity=B, size_ratio=T, f_exp=4, f_max=8,
                        prune=prune or PrunePolicy(), **kw)


def random_blocks(seed, n, start=1, addrs=ADDRS, max_puts=4):
    rng = random.Random(seed)
    return [(b, [(a, rng.randbytes(32)) for a in rng.sample(addrs, rng.randint(0, max_puts))])
            for b in range(start, start + n)]


def feed(engine: Engine, blocks) -> list[bytes]:
    out = []
    for blk, puts in blocks:
        for a, v in puts:
            engine.put(a, v)
        out.append(engine.commit_block(blk))
    return out


def provenance_example_engine(path):
    """k1 at 8, 10, 11, 12, k2 at 14, k3 at 16 go to disk through two level-1
    runs merged into level 2; k1 at 18 and 19 stay in memory."""
    k1, k2, k3, k4 = (bytes([i]) * 32 for i in (1, 2, 3, 4))
    writes = {8: k1, 10: k1, 11: k1, 12: k1, 14: k2, 16: k3, 18: k1, 19: k1, 20: k4, 21: k1}
    e = Engine(small_cfg(path, B=6, T=2))
    for blk in range(1, 22):
        if blk in writes:
            e.put(writes[blk], H(b"v%d" % blk))
        e.commit_block(blk)
    return e, (k1, k2, k3)
