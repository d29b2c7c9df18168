import os
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from colstore.bloom import BloomFilter
from colstore.cdc import CdcConfig
from colstore.config import PrunePolicy
from colstore.hashing import H, compound_key, u64
from colstore.mht import HashFile, ProofError, root_from_proof
from colstore.run_store import ENTRIES_PER_PAGE, Run, build_from_flush, build_from_merge, state_leaf
from oracle import mht_root, run_root, version_root

CDC = CdcConfig(4, 8)


def make_entries(rng, n_addrs, max_versions, blocks=(1, 1000)):
    versions = {}
    for _ in range(n_addrs):
        a = rng.randbytes(32)
        k = rng.randint(1, max_versions)
        versions[a] = [(b, rng.randbytes(32)) for b in sorted(rng.sample(range(*blocks), k))]
    entries = sorted((compound_key(a, b), v) for a, ps in versions.items() for b, v in ps)
    return versions, entries


def test_single_entry_run(tmp_path):
    a, v = b"a" * 32, b"v" * 32
    run = build_from_flush(str(tmp_path), 1, 1, [(compound_key(a, 3), v)], 3, 3)
    assert run.n_entries == 1
    tree_root = H(u64(3) + v)
    # a one-leaf hash file has the leaf hash as its root
    assert run.root_hash == state_leaf(a, 3, v, tree_root) == H(a + u64(3) + v + tree_root)
    assert run.get_latest(a) == (3, v)


def test_run_root_matches_oracle(tmp_path):
    versions, entries = make_entries(random.Random(2), 700, 6)
    run = build_from_flush(str(tmp_path), 1, 1, entries, 1, 1000, 4, CDC)
    assert run.root_hash == run_root(versions, 4, 4, 8)
    assert os.path.getsize(run.path("state")) % 4096 == 0


def test_get_latest_reads_at_most_two_pages(tmp_path):
    versions, entries = make_entries(random.Random(3), 5000, 2)
    run = build_from_flush(str(tmp_path), 1, 1, entries, 1, 1000, 4, CDC)
    for a, ps in versions.items():
        before = run.page_reads
        assert run.get_latest(a) == ps[-1]
        assert run.page_reads - before <= 2
    misses = [os.urandom(32) for _ in range(2000)]
    reads = run.page_reads
    negatives = [a for a in misses if a not in run.bloom]
    assert len(negatives) > 1900
    for a in negatives:
        assert run.get_latest(a) is None
    assert run.page_reads == reads


def test_state_page_layout(tmp_path):
    versions, entries = make_entries(random.Random(4), ENTRIES_PER_PAGE * 3 + 1, 1)
    run = build_from_flush(str(tmp_path), 1, 1, entries, 1, 1000)
    assert run.n_pages == 4
    assert [e.addr for e in run.iter_states()] == sorted(versions)


def test_merge_of_one_run_is_identical(tmp_path):
    d = str(tmp_path)
    _, entries = make_entries(random.Random(5), 300, 5)
    r1 = build_from_flush(d, 1, 1, entries, 1, 1000, 4, CDC)
    r2 = build_from_merge(d, 2, 2, [r1], 4, CDC)
    for kind in ("state", "index", "version", "hash", "bloom"):
        with open(r1.path(kind), "rb") as f1, open(r2.path(kind), "rb") as f2:
            assert f1.read() == f2.read()


def test_merge_matches_flat_build_and_pruned_root(tmp_path):
    d = str(tmp_path)
    rng = random.Random(6)
    addrs = [rng.randbytes(32) for _ in range(200)]
    versions = {}
    runs, pruned_runs = [], []
    for i in range(4):
        lo = i * 100 + 1
        ents = []
        for a in rng.sample(addrs, 120):
            ps = [(b, rng.randbytes(32)) for b in sorted(rng.sample(range(lo, lo + 100), rng.randint(1, 30)))]
            versions.setdefault(a, []).extend(ps)
            ents += [(compound_key(a, b), v) for b, v in ps]
        ents.sort()
        runs.append(build_from_flush(d, 1, i + 1, ents, lo, lo + 99, 4, CDC))
        pruned_runs.append(build_from_flush(d, 1, i + 11, ents, lo, lo + 99, 4, CDC, PrunePolicy(0)))
    merged = build_from_merge(d, 2, 100, runs, 4, CDC)
    pmerged = build_from_merge(d, 2, 101, pruned_runs, 4, CDC, PrunePolicy(0))
    assert merged.root_hash == pmerged.root_hash == run_root(versions, 4, 4, 8)
    assert (merged.first_blk, merged.last_blk) == (1, 400)
    assert os.path.getsize(pmerged.path("version")) < os.path.getsize(merged.path("version"))


def test_merge_copies_and_merges_trees(tmp_path):
    # two flushed runs: the first holds k1 only, the second k1, k2 and k3
    d = str(tmp_path)
    k1, k2, k3 = (bytes([i]) * 32 for i in (1, 2, 3))
    v = {(k, b): H(k + u64(b)) for k, b in [(k1, 8), (k1, 10), (k1, 11), (k1, 12), (k2, 14), (k3, 16)]}
    r1 = build_from_flush(d, 1, 1, [(compound_key(k1, b), v[k1, b]) for b in (8, 10, 11)], 8, 11, 4, CDC)
    r2 = build_from_flush(d, 1, 2, sorted((compound_key(k, b), v[k, b]) for k, b in [(k1, 12), (k2, 14), (k3, 16)]),
                          12, 16, 4, CDC)
    assert [(e.addr, e.blk) for e in r2.iter_states()] == [(k1, 12), (k2, 14), (k3, 16)]
    m = build_from_merge(d, 2, 3, [r1, r2], 4, CDC)
    assert [(e.addr, e.blk) for e in m.iter_states()] == [(k1, 12), (k2, 14), (k3, 16)]
    trees = dict(m.iter_trees())
    assert trees[k1].root_hash == version_root([(b, v[k1, b]) for b in (8, 10, 11, 12)], 4, 8)
    assert trees[k2].root_hash == dict(r2.iter_trees())[k2].root_hash
    assert m.get_latest(k3) == (16, v[k3, 16])
    leaves = [state_leaf(e.addr, e.blk, e.value, m.tree_root_at(e.version_offset)) for e in m.iter_states()]
    assert m.root_hash == H(b"".join(leaves))


def test_absent_address_opens_neighbours(tmp_path):
    versions, entries = make_entries(random.Random(8), 400, 3)
    run = build_from_flush(str(tmp_path), 1, 1, entries, 1, 1000, 4, CDC)
    for a in [b"\x00" * 32, b"\xff" * 32] + [os.urandom(32) for _ in range(50)]:
        op = run.get_versions(a, 1, 1000)
        assert op.versions == []
        hashes = [state_leaf(l.addr, l.blk, l.value, l.tree_root) for l in op.leaves]
        assert root_from_proof(op.n_leaves, 4, op.first, hashes, op.siblings) == run.root_hash
        addrs = [l.addr for l in op.leaves]
        assert (len(addrs) == 2 and addrs[0] < a < addrs[1]) or len(addrs) == 1


@given(st.integers(1, 200), st.sampled_from([2, 3, 4, 16]), st.data())
def test_hash_file_range_proofs(n, fanout, data):
    leaves = [H(u64(i)) for i in range(n)]
    hf = HashFile(HashFile.encode(leaves, fanout))
    assert hf.root == mht_root(leaves, fanout)
    first = data.draw(st.integers(0, n - 1))
    last = data.draw(st.integers(first, n - 1))
    sib = hf.prove(first, last)
    assert root_from_proof(n, fanout, first, leaves[first:last + 1], sib) == hf.root
    if sib:
        with pytest.raises(ProofError):
            root_from_proof(n, fanout, first, leaves[first:last + 1], sib[:-1])


def test_bloom_filter_round_trip():
    addrs = [os.urandom(32) for _ in range(1000)]
    bf = BloomFilter.build(addrs, len(addrs))
    back = BloomFilter.from_bytes(bf.to_bytes())
    assert all(a in back for a in addrs)
    fp = sum(os.urandom(32) in back for _ in range(20_000))
    assert fp < 20_000 * 0.03


def test_reopen_run(tmp_path):
    versions, entries = make_entries(random.Random(9), 100, 3)
    run = build_from_flush(str(tmp_path), 3, 7, entries, 1, 1000, 4, CDC)
    again = Run(str(tmp_path), 3, 7, 1, 1000, CDC)
    assert again.root_hash == run.root_hash
    assert sorted(again.iter_versions()) == sorted((a, b, v) for a, ps in versions.items() for b, v in ps)
