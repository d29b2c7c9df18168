import random

import pytest
from hypothesis import given, settings, strategies as st

from colstore.engine import Engine
from colstore.merkle import DIGEST_MISMATCH, GAP, MALFORMED
from colstore.proof import DecodeError, Proof, decode_results, encode_results
from colstore.verify import verify
from helpers import ADDRS, feed, random_blocks, small_cfg
from oracle import FlatState


@pytest.fixture(scope="module")
def loaded(tmp_path_factory):
    """An engine with runs on two levels plus both in-memory groups, and a
    flat oracle fed the same blocks."""
    e = Engine(small_cfg(tmp_path_factory.mktemp("verify")))
    flat = FlatState()
    blocks = random_blocks(11, 260)
    feed(e, blocks)
    for blk, puts in blocks:
        for a, v in puts:
            flat.put(a, blk, v)
    assert len(e.levels) >= 2 and len(e.wait) and len(e.dyn)
    yield e, flat
    e.close()


def query(e, addr, lo, hi):
    res, proof = e.prov_query(addr, lo, hi)
    return res, proof.encode()


@settings(max_examples=150)
@given(i=st.integers(0, len(ADDRS) - 1), lo=st.integers(0, 280), span=st.integers(0, 200))
def test_honest_answers_verify_and_match_flat_log(loaded, i, lo, span):
    e, flat = loaded
    q = (ADDRS[i], lo, lo + span)
    res, proof = query(e, *q)
    assert res == flat.versions(*q)
    assert verify(e.last_digest, q, res, proof).ok


def _queries_with_results(e, flat, n, min_results=2):
    rng = random.Random(5)
    out = []
    while len(out) < n:
        q = (rng.choice(ADDRS), rng.randint(1, 200), 0)
        q = (q[0], q[1], q[1] + rng.randint(20, 150))
        if len(flat.versions(*q)) >= min_results:
            out.append(q)
    return out


def test_flipped_value_is_a_digest_mismatch(loaded):
    e, flat = loaded
    for q in _queries_with_results(e, flat, 20):
        res, proof = query(e, *q)
        j = random.Random(q[1]).randrange(len(res))
        bad = list(res)
        bad[j] = (bad[j][0], bytes(b ^ 1 for b in bad[j][1]))
        assert verify(e.last_digest, q, bad, proof).reason == DIGEST_MISMATCH


def test_dropped_version_is_a_gap(loaded):
    e, flat = loaded
    for q in _queries_with_results(e, flat, 20):
        res, proof = query(e, *q)
        for j in range(len(res)):
            v = verify(e.last_digest, q, res[:j] + res[j + 1:], proof)
            assert v.reason == GAP, (q, j, v)


def test_invented_version_is_rejected(loaded):
    e, flat = loaded
    for q in _queries_with_results(e, flat, 10):
        res, proof = query(e, *q)
        taken = {b for b, _ in res}
        extra = next(b for b in range(q[1], q[2] + 1) if b not in taken)
        bad = sorted(res + [(extra, bytes(32))])
        assert not verify(e.last_digest, q, bad, proof).ok


def test_unsorted_or_out_of_range_results_are_malformed(loaded):
    e, flat = loaded
    q = _queries_with_results(e, flat, 1)[0]
    res, proof = query(e, *q)
    assert verify(e.last_digest, q, res[::-1], proof).reason == MALFORMED
    assert verify(e.last_digest, (q[0], q[1], res[-1][0] - 1), res, proof).reason == MALFORMED


def test_wrong_digest_or_address_is_rejected(loaded):
    e, flat = loaded
    q = _queries_with_results(e, flat, 1)[0]
    res, proof = query(e, *q)
    assert verify(bytes(32), q, res, proof).reason == DIGEST_MISMATCH
    other = next(a for a in ADDRS if a != q[0])
    assert not verify(e.last_digest, (other, q[1], q[2]), res, proof).ok


def test_reordered_or_truncated_proofs_are_rejected(loaded):
    e, flat = loaded
    for q in _queries_with_results(e, flat, 10, min_results=1):
        res, raw = query(e, *q)
        p = Proof.decode(raw)
        if len(p.parts) > 1:
            swapped = Proof(p.parts[1:] + p.parts[:1])
            assert not verify(e.last_digest, q, res, swapped).ok
        assert not verify(e.last_digest, q, res, Proof(p.parts[:-1])).ok
        assert verify(e.last_digest, q, res, raw[:-1]).reason == MALFORMED
        assert verify(e.last_digest, q, res, raw + b"\0").reason == MALFORMED


@settings(max_examples=200)
@given(pos=st.integers(0, 10**6), bit=st.integers(0, 7), seed=st.integers(0, 50))
def test_any_single_bit_flip_in_the_proof_is_rejected(loaded, pos, bit, seed):
    e, flat = loaded
    rng = random.Random(seed)
    q = (rng.choice(ADDRS), rng.randint(1, 200), 0)
    q = (q[0], q[1], q[1] + rng.randint(0, 150))
    res, raw = query(e, *q)
    pos %= len(raw)
    bad = raw[:pos] + bytes([raw[pos] ^ (1 << bit)]) + raw[pos + 1:]
    assert not verify(e.last_digest, q, res, bad).ok


def test_proof_encoding_round_trips(loaded):
    e, flat = loaded
    for q in _queries_with_results(e, flat, 10, min_results=0):
        _, raw = query(e, *q)
        assert Proof.decode(raw).encode() == raw


def test_results_encoding_round_trips():
    res = [(3, bytes([1]) * 32), (9, bytes([2]) * 32)]
    data = encode_results(ADDRS[0], 1, 10, res)
    assert decode_results(data) == (ADDRS[0], 1, 10, res)
    with pytest.raises(DecodeError):
        decode_results(data[:-1])


def test_empty_engine_proves_absence(data_dir):
    with Engine(small_cfg(data_dir)) as e:
        res, proof = e.prov_query(ADDRS[0], 0, 10)
        assert res == [] and verify(e.last_digest, (ADDRS[0], 0, 10), res, proof).ok
