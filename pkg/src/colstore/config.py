"""Engine configuration."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .cdc import CdcConfig


@dataclass(frozen=True)
class PrunePolicy:
    """``keep_recent=None`` keeps every version (archive node); otherwise each
    version tree keeps its boundary paths plus the leaves holding its
    ``keep_recent`` most recent versions."""

    keep_recent: Optional[int] = None

    @classmethod
    def parse(cls, text: str) -> "PrunePolicy":
        if text == "archive":
            return cls(None)
        if text.startswith("keep:"):
            k = int(text[5:])
            if k < 0:
                raise ValueError("keep count must be >= 0")
            return cls(k)
        raise ValueError(f"prune policy must be 'archive' or 'keep:<k>', got {text!r}")

    @property
    def archive(self) -> bool:
        return self.keep_recent is None

    def apply(self, tree):
        return tree if self.keep_recent is None else tree.prune(self.keep_recent)

    def __str__(self) -> str:
        return "archive" if self.archive else f"keep:{self.keep_recent}"


ARCHIVE = PrunePolicy()


@dataclass(frozen=True)
class EngineConfig:
    data_dir: str
    btree_capacity: int = 4096  # B: entries held in memory, B/2 per group
    size_ratio: int = 10        # T: runs per level before a merge
    mht_fanout: int = 4
    f_exp: int = 16
    f_max: int = 64
    prune: PrunePolicy = field(default_factory=PrunePolicy)

    def __post_init__(self):
        if self.btree_capacity < 2 or self.btree_capacity % 2:
            raise ValueError("btree_capacity must be an even number >= 2")
        if self.size_ratio < 2:
            raise ValueError("size_ratio must be >= 2")
        if self.mht_fanout < 2:
            raise ValueError("mht_fanout must be >= 2")
        CdcConfig(self.f_exp, self.f_max)

    @property
    def group_capacity(self) -> int:
        return self.btree_capacity // 2

    @property
    def cdc(self) -> CdcConfig:
        return CdcConfig(self.f_exp, self.f_max)
