"""Deterministic key-value workloads packed into blocks.

Each transaction reads or updates one state. Keys are drawn uniformly or from
a Zipfian distribution over the seeded base states; the generator follows the
YCSB construction (Gray et al.'s rejection-free method) with theta 0.99.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterator

from .hashing import H

MIXES = {"ro": 0.0, "rw": 0.5, "wh": 0.75, "wo": 1.0}  # fraction of updates
ZIPF_THETA = 0.99


class ZipfianGenerator:
    """Integers in [0, n) with P(i) proportional to 1 / (i+1)^theta."""

    def __init__(self, n: int, theta: float = ZIPF_THETA, rng: random.Random | None = None):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.theta = theta
        self.rng = rng or random.Random()
        self.zetan = self._zeta(n, theta)
        zeta2 = self._zeta(2, theta)
        self.alpha = 1.0 / (1.0 - theta)
        self.eta = (1 - (2.0 / n) ** (1 - theta)) / (1 - zeta2 / self.zetan) if n > 1 else 1.0

    @staticmethod
    def _zeta(n: int, theta: float) -> float:
        return math.fsum(1.0 / (i + 1) ** theta for i in range(n))

    def next(self) -> int:
        u = self.rng.random()
        uz = u * self.zetan
        if uz < 1.0:
            return 0
        if uz < 1.0 + 0.5 ** self.theta:
            return 1
        return min(self.n - 1, int(self.n * (self.eta * u - self.eta + 1) ** self.alpha))


def address(i: int) -> bytes:
    return H(b"state" + i.to_bytes(8, "big"))


@dataclass(frozen=True)
class WorkloadSpec:
    mix: str = "wo"
    distribution: str = "uniform"
    base_states: int = 20_000
    blocks: int = 20_000
    txs_per_block: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.mix not in MIXES:
            raise ValueError(f"mix must be one of {sorted(MIXES)}")
        if self.distribution not in ("uniform", "zipfian"):
            raise ValueError("distribution must be uniform or zipfian")
        if self.txs_per_block < 1 or self.base_states < 1:
            raise ValueError("txs_per_block and base_states must be >= 1")

    @property
    def write_ratio(self) -> float:
        return MIXES[self.mix]


@dataclass
class Block:
    blk: int
    puts: list   # [(addr, value)], at most one per address
    reads: list  # [addr]


def base_blocks(spec: WorkloadSpec, start: int = 1) -> Iterator[Block]:
    """Blocks inserting the initial states."""
    rng = random.Random(f"{spec.seed}:base")
    blk = start
    for lo in range(0, spec.base_states, spec.txs_per_block):
        hi = min(lo + spec.txs_per_block, spec.base_states)
        yield Block(blk, [(address(i), rng.randbytes(32)) for i in range(lo, hi)], [])
        blk += 1


def op_blocks(spec: WorkloadSpec, start: int) -> Iterator[Block]:
    """``spec.blocks`` blocks of reads and updates over the base states."""
    rng = random.Random(f"{spec.seed}:ops")
    if spec.distribution == "zipfian":
        zipf = ZipfianGenerator(spec.base_states, rng=rng)
        draw = zipf.next
    else:
        draw = lambda: rng.randrange(spec.base_states)  # noqa: E731
    for blk in range(start, start + spec.blocks):
        puts: dict[bytes, bytes] = {}
        reads = []
        for _ in range(spec.txs_per_block):
            i = draw()
            if rng.random() < spec.write_ratio:
                # a block updates each state at most once; a repeat becomes a read
                a = address(i)
                if a in puts:
                    reads.append(a)
                else:
                    puts[a] = rng.randbytes(32)
            else:
                reads.append(address(i))
        yield Block(blk, list(puts.items()), reads)
