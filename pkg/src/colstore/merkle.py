"""Node type and range proofs shared by the RS-tree and the version tree.

Both trees hash a node as ``H(k1 || p1 || ... || km || pm)`` where the payload
is the value in a leaf and the child hash in an internal node. Internal
entries are keyed by the largest key in the child subtree.
"""
from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Callable, Optional, Union

from .hashing import H

Entry = tuple[bytes, bytes]


class Node:
    """Immutable tree node: an entry tuple and its hash."""

    __slots__ = ("entries", "hash")

    def __init__(self, entries: tuple, hash: bytes):
        self.entries = entries
        self.hash = hash

    def __repr__(self) -> str:
        return f"Node({len(self.entries)} entries, {self.hash.hex()[:12]})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Node) and self.hash == other.hash and self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.hash)

    @property
    def last_key(self) -> bytes:
        return self.entries[-1][0]

    @property
    def first_key(self) -> bytes:
        return self.entries[0][0]

    def __len__(self) -> int:
        return len(self.entries)


def make_node(entries) -> Node:
    entries = tuple(entries)
    return Node(entries, H(b"".join([k + v for k, v in entries])))


def parent_entries(nodes) -> list[Entry]:
    return [(n.entries[-1][0], n.hash) for n in nodes]


class MissingNode(LookupError):
    """A node needed by the operation is not materialized (pruned)."""


@dataclass
class ProofNode:
    """Revealed node. Leaf entries are ``(key, value)`` or ``(key, None)`` for a
    slot the verifier fills from the claimed results; internal entries are
    ``(key, child_hash)`` or ``(key, ProofNode)``."""

    leaf: bool
    entries: list


def prove_range(root: Node, height: int, child_of: Callable[[int, bytes], Node],
                lo: bytes, hi: bytes):
    """Reveal every leaf holding keys in [lo, hi] plus the neighbouring entries.

    Returns (proof, found) where ``found`` lists the (key, value) pairs in range.
    ``child_of(level, key)`` must return the node at ``level`` whose last key is
    ``key``; it raises ``MissingNode`` for pruned nodes. A pruned predecessor
    is left as a hash: it cannot hold in-range keys.
    """
    found: list[Entry] = []

    def visit(level: int, node: Node) -> tuple[ProofNode, bool]:
        if level == 0:
            ents = []
            lower = False
            for k, v in node.entries:
                if lo <= k <= hi:
                    ents.append((k, None))
                    found.append((k, v))
                else:
                    ents.append((k, v))
                    lower = lower or k < lo
            return ProofNode(True, ents), lower
        keys = [k for k, _ in node.entries]
        first = min(bisect_left(keys, lo), len(keys) - 1)
        last = min(bisect_right(keys, hi), len(keys) - 1)
        out: list = list(node.entries)
        lower = False
        for idx in range(first, last + 1):
            k = keys[idx]
            sub, low = visit(level - 1, child_of(level - 1, k))
            out[idx] = (k, sub)
            if idx == first:
                lower = low
        if not lower and first > 0:
            k = keys[first - 1]
            try:
                # every key below this child is < lo, so nothing is found here
                out[first - 1] = (k, visit(level - 1, child_of(level - 1, k))[0])
                lower = True
            except MissingNode:
                pass
        return ProofNode(False, out), lower

    return visit(height - 1, root)[0], found


class ProofReject(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


DIGEST_MISMATCH = "digest-mismatch"
GAP = "gap-in-versions"
MALFORMED = "malformed"


def reconstruct(proof: ProofNode, lo: bytes, hi: bytes,
                fill: Callable[[bytes], Optional[bytes]]):
    """Recompute the root hash of a revealed tree and check range completeness.

    ``fill(key)`` supplies the value for a slot (None if the caller has no
    result for it). Returns (root_hash, items) where items is the ordered list
    of ``(key, revealed_value_or_None, is_gap)`` at leaf granularity.
    """
    items: list = []

    def rec(node: ProofNode, depth: int) -> bytes:
        if depth > 64:
            raise ProofReject(MALFORMED, "proof too deep")
        if not node.entries:
            raise ProofReject(MALFORMED, "empty node")
        parts = []
        if node.leaf:
            for k, v in node.entries:
                if v is None:
                    if not lo <= k <= hi:
                        raise ProofReject(MALFORMED, "slot outside query range")
                    v = fill(k)
                    if v is None:
                        raise ProofReject(GAP, "result missing for a proven version")
                    items.append((k, None, False))
                else:
                    if lo <= k <= hi:
                        raise ProofReject(GAP, "in-range entry not reported")
                    items.append((k, v, False))
                parts.append(k + v)
        else:
            for k, c in node.entries:
                if isinstance(c, ProofNode):
                    h = rec(c, depth + 1)
                    if items[-1][0] != k:
                        raise ProofReject(MALFORMED, "child key mismatch")
                else:
                    h = c
                    items.append((k, None, True))
                parts.append(k + h)
        return H(b"".join(parts))

    root = rec(proof, 0)
    prev = None
    for k, _, is_gap in items:
        if prev is not None and k <= prev:
            raise ProofReject(MALFORMED, "keys out of order")
        if is_gap and k >= lo and (prev is None or prev < hi):
            raise ProofReject(GAP, "unrevealed subtree may hold in-range versions")
        prev = k
    return root, items


ProofChild = Union[bytes, ProofNode]


def level_lookup(nodes_lastkeys: list, key: bytes) -> int:
    """Index of the first node whose last key is >= key (clamped)."""
    i = bisect_left(nodes_lastkeys, key)
    return min(i, len(nodes_lastkeys) - 1)
