"""Client-side check of a provenance answer against an index digest.

The verifier sees only the digest, the query, the claimed results and the
proof. It recomputes every tier root, hashes the list, and compares with the
digest. Completeness comes from two rules: each opened tree must reveal
every entry inside the queried key range (pruned-away subtrees may not
overlap it), and tiers are opened newest first until one reveals a version
older than the range, after which bare roots are allowed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .hashing import ADDR_LEN, EMPTY_HASH, H, compound_key, u64
from .merkle import DIGEST_MISMATCH, GAP, MALFORMED, ProofReject, reconstruct
from .mht import ProofError, root_from_proof
from .proof import BareRoot, DecodeError, Proof, RsPath, RunPath
from .run_store import state_leaf


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: Optional[str] = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


ACCEPT = Verdict(True)


def verify(digest: bytes, query: tuple[bytes, int, int], results: list[tuple[int, bytes]],
           proof) -> Verdict:
    """Accept, or reject with reason digest-mismatch, gap-in-versions or malformed."""
    try:
        if isinstance(proof, (bytes, bytearray)):
            proof = Proof.decode(proof)
        _check(digest, query, results, proof)
    except ProofReject as exc:
        return Verdict(False, exc.reason, str(exc))
    except (DecodeError, ProofError, ValueError, TypeError, IndexError) as exc:
        return Verdict(False, MALFORMED, str(exc))
    return ACCEPT


def _check(digest, query, results, proof: Proof) -> None:
    addr, blk_l, blk_u = query
    if len(addr) != ADDR_LEN or blk_l > blk_u:
        raise ProofReject(MALFORMED, "bad query")
    claimed: dict[int, bytes] = {}
    prev = -1
    for blk, value in results:
        if blk <= prev:
            raise ProofReject(MALFORMED, "results not strictly increasing")
        if not blk_l <= blk <= blk_u:
            raise ProofReject(MALFORMED, "result outside the queried range")
        claimed[blk] = value
        prev = blk
    used: set[int] = set()

    def fill(blk: int) -> Optional[bytes]:
        v = claimed.get(blk)
        if v is not None:
            if blk in used:
                raise ProofReject(MALFORMED, "version proven twice")
            used.add(blk)
        return v

    rs_lo, rs_hi = compound_key(addr, blk_l), compound_key(addr, blk_u)
    vt_lo, vt_hi = u64(blk_l), u64(blk_u)
    lower_seen = False
    roots = []
    for part in proof.parts:
        if isinstance(part, BareRoot):
            if not lower_seen and part.hash != EMPTY_HASH:
                raise ProofReject(GAP, "tier skipped before an older version was shown")
            roots.append(part.hash)
        elif isinstance(part, RsPath):
            root, items = reconstruct(part.node, rs_lo, rs_hi,
                                      lambda k: fill(int.from_bytes(k[ADDR_LEN:], "big")))
            roots.append(root)
            if any(not gap and k[:ADDR_LEN] == addr and k < rs_lo for k, _, gap in items):
                lower_seen = True
        elif isinstance(part, RunPath):
            root, lower = _run_root(part, addr, vt_lo, vt_hi, fill)
            roots.append(root)
            lower_seen = lower_seen or lower
        else:
            raise ProofReject(MALFORMED, "unknown sub-proof")
    if used != set(claimed):
        raise ProofReject(DIGEST_MISMATCH, "result not covered by the proof")
    if H(b"".join(roots)) != digest:
        raise ProofReject(DIGEST_MISMATCH, "recomputed digest differs")


def _run_root(part: RunPath, addr: bytes, vt_lo: bytes, vt_hi: bytes, fill) -> tuple[bytes, bool]:
    leaves = part.leaves
    if not leaves or part.fanout < 2:
        raise ProofReject(MALFORMED, "empty run opening")
    lower = False
    hashes = []
    opened = [l for l in leaves if l.tree_proof is not None]
    if opened:
        if len(leaves) != 1 or leaves[0].addr != addr:
            raise ProofReject(MALFORMED, "opened leaf is not the queried address")
        leaf = leaves[0]
        t_root, items = reconstruct(leaf.tree_proof, vt_lo, vt_hi,
                                    lambda k: fill(int.from_bytes(k, "big")))
        lower = any(not gap and k < vt_lo for k, _, gap in items)
        hashes.append(state_leaf(leaf.addr, leaf.blk, leaf.value, t_root))
    else:
        # absence: the opened leaves must straddle the address
        last = part.first + len(leaves) - 1
        if len(leaves) == 2:
            ok = leaves[0].addr < addr < leaves[1].addr
        elif len(leaves) == 1:
            a = leaves[0].addr
            ok = (part.first == 0 and addr < a) or (last == part.n_leaves - 1 and addr > a)
        else:
            ok = False
        if not ok:
            raise ProofReject(GAP, "absence not proven")
        for leaf in leaves:
            if leaf.tree_root is None:
                raise ProofReject(MALFORMED, "leaf without tree root")
            hashes.append(state_leaf(leaf.addr, leaf.blk, leaf.value, leaf.tree_root))
    return root_from_proof(part.n_leaves, part.fanout, part.first, hashes, part.siblings), lower
