"""Verifiable, column-oriented blockchain state storage: an LSM engine whose
in-memory groups are content-defined Merkle trees and whose on-disk runs keep
the latest state per address apart from a per-address version tree."""
from .cdc import CdcConfig
from .config import EngineConfig, PrunePolicy
from .engine import BlockOrderError, DuplicateWrite, Engine, ReorgBlocked
from .hashing import EMPTY_HASH, H
from .learned_index import LearnedIndex
from .proof import Proof
from .reorg import ForkRequest, chain_reorg_on_disk, rewind_in_memory
from .rs_tree import RSTree
from .verify import Verdict, verify
from .version_tree import VersionTree

__all__ = [
    "CdcConfig", "EngineConfig", "PrunePolicy", "Engine", "DuplicateWrite", "ReorgBlocked",
    "BlockOrderError", "EMPTY_HASH", "H", "LearnedIndex", "Proof", "ForkRequest",
    "chain_reorg_on_disk", "rewind_in_memory", "RSTree", "Verdict", "verify", "VersionTree",
]
