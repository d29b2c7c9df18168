"""Benchmark harness: throughput and storage runs, provenance sweeps, reorg drills
and offline proof verification.

    colstore-bench run --mix wo --dist zipfian --blocks 2000 --out metrics.csv
    colstore-bench prov --ranges 2,4,8,16,32,64,128
    colstore-bench reorg --depths 0,1,5,20,200
    colstore-bench verify --proof p.bin --results r.bin --digest <hex>

``COLSTORE_DATA_DIR`` overrides the data directory.
"""
from __future__ import annotations

import argparse
import csv
import os
import random
import shutil
import statistics
import sys
import tempfile
import time
from dataclasses import replace
from typing import Optional

from .config import EngineConfig, PrunePolicy
from .engine import Engine
from .proof import decode_results, encode_results
from .reorg import FREQUENT, ForkRequest, chain_reorg_on_disk, classify, rewind_in_memory
from .verify import verify
from .workload import Block, WorkloadSpec, address, base_blocks, op_blocks

FILE_KINDS = ("state", "index", "version", "hash", "bloom", "txlog", "checkpoints", "manifest")
RUN_FIELDS = ["block", "elapsed_s", "tx_per_s", "p50_ms", "p95_ms", "p99_ms", "reads", "puts",
              *[f"{k}_bytes" for k in FILE_KINDS], "total_bytes", "runs", "digest"]
PROV_FIELDS = ["range", "queries", "versions_avg", "prove_cpu_ms", "verify_ms", "proof_bytes", "rejected"]
REORG_FIELDS = ["depth", "path", "rewind_ms", "suffix_blocks", "rebuilds", "digest_match"]


def apply_block(engine: Engine, block: Block) -> bytes:
    # reads are refused while a rewind is catching up; the writes still land
    if not engine.blocked:
        for a in block.reads:
            engine.get(a)
    for a, v in block.puts:
        engine.put(a, v)
    return engine.commit_block(block.blk)


def _pct(xs: list[float], q: float) -> float:
    if not xs:
        return 0.0
    xs = sorted(xs)
    return xs[min(len(xs) - 1, int(q * len(xs)))]


def seed_engine(engine: Engine, spec: WorkloadSpec) -> int:
    """Insert the base states; returns the next block number."""
    blk = engine.block
    for b in base_blocks(spec, blk):
        apply_block(engine, b)
        blk = b.blk + 1
    return blk


def run_bench(spec: WorkloadSpec, cfg: EngineConfig, interval: int = 100) -> list[dict]:
    """Seed, then execute ``spec.blocks`` blocks, reporting one row per interval."""
    rows = []
    with Engine(cfg) as eng:
        start = seed_engine(eng, spec)
        lat: list[float] = []
        reads = puts = 0
        t0 = time.perf_counter()
        t_int = t0
        txs = 0
        for b in op_blocks(spec, start):
            s = time.perf_counter()
            digest = apply_block(eng, b)
            lat.append((time.perf_counter() - s) * 1000)
            reads += len(b.reads)
            puts += len(b.puts)
            txs += spec.txs_per_block
            if (b.blk - start + 1) % interval == 0 or b.blk == start + spec.blocks - 1:
                now = time.perf_counter()
                sizes = eng.storage_bytes()
                row = {"block": b.blk, "elapsed_s": round(now - t0, 4),
                       "tx_per_s": round(txs / max(now - t_int, 1e-9), 1),
                       "p50_ms": round(_pct(lat, 0.50), 3), "p95_ms": round(_pct(lat, 0.95), 3),
                       "p99_ms": round(_pct(lat, 0.99), 3), "reads": reads, "puts": puts}
                row.update({f"{k}_bytes": sizes[k] for k in FILE_KINDS})
                row["total_bytes"] = sum(sizes[k] for k in FILE_KINDS)
                row["runs"] = eng.run_count()
                row["digest"] = digest.hex()
                rows.append(row)
                lat, txs, t_int = [], 0, now
    return rows


def run_prov(spec: WorkloadSpec, cfg: EngineConfig, ranges: list[int], queries: int = 50,
             dump_dir: Optional[str] = None) -> list[dict]:
    """Build an index with the workload, then time provenance queries whose
    block window covers ``r`` versions of a frequently updated address."""
    rows = []
    rng = random.Random(f"{spec.seed}:prov")
    with Engine(cfg) as eng:
        history: dict[bytes, list[int]] = {}
        start = seed_engine(eng, spec)
        for b in op_blocks(spec, start):
            apply_block(eng, b)
            for a, _ in b.puts:
                history.setdefault(a, []).append(b.blk)
        hot = sorted(history, key=lambda a: -len(history[a]))[:max(1, len(history) // 100)]
        digest = eng.last_digest
        for r in ranges:
            cpu, ver, size, nver, rejected = [], [], [], [], 0
            for q in range(queries):
                addr = rng.choice(hot)
                blks = history[addr]
                if len(blks) >= r:
                    i = rng.randrange(len(blks) - r + 1)
                    lo, hi = blks[i], blks[i + r - 1]
                else:
                    lo, hi = blks[0], blks[-1]
                c0 = time.process_time()
                res, proof = eng.prov_query(addr, lo, hi)
                cpu.append((time.process_time() - c0) * 1000)
                blob = proof.encode()
                v0 = time.perf_counter()
                ok = verify(digest, (addr, lo, hi), res, blob)
                ver.append((time.perf_counter() - v0) * 1000)
                rejected += not ok
                size.append(len(blob))
                nver.append(len(res))
                if dump_dir and q == 0:
                    os.makedirs(dump_dir, exist_ok=True)
                    with open(os.path.join(dump_dir, f"proof_r{r}.bin"), "wb") as f:
                        f.write(blob)
                    with open(os.path.join(dump_dir, f"results_r{r}.bin"), "wb") as f:
                        f.write(encode_results(addr, lo, hi, res))
                    with open(os.path.join(dump_dir, "digest.hex"), "w") as f:
                        f.write(digest.hex() + "\n")
            rows.append({"range": r, "queries": queries, "versions_avg": round(statistics.mean(nver), 2),
                         "prove_cpu_ms": round(statistics.mean(cpu), 4),
                         "verify_ms": round(statistics.mean(ver), 4),
                         "proof_bytes": round(statistics.mean(size)), "rejected": rejected})
    return rows


def run_reorg_drill(spec: WorkloadSpec, cfg: EngineConfig, depths: list[int]) -> list[dict]:
    """For each depth: append ``depth`` blocks of a side branch, fork back to
    the canonical chain, and compare the digests with a node that only ever
    saw the canonical chain."""
    twin_cfg = replace(cfg, data_dir=cfg.data_dir.rstrip("/") + "_twin")
    for d in (cfg.data_dir, twin_cfg.data_dir):
        shutil.rmtree(d, ignore_errors=True)
    rows = []
    side_rng = random.Random(f"{spec.seed}:side")
    with Engine(cfg) as node, Engine(twin_cfg) as twin:
        seed_engine(node, spec)
        seed_engine(twin, spec)
        canon = op_blocks(replace(spec, blocks=10**9), node.block)
        for depth in depths:
            head = node.block - 1
            for blk in range(head + 1, head + 1 + depth):
                keys = side_rng.sample(range(spec.base_states), min(spec.txs_per_block, spec.base_states))
                apply_block(node, Block(blk, [(address(k), side_rng.randbytes(32)) for k in keys], []))
            suffix = [next(canon) for _ in range(depth + 1)]
            expected = [apply_block(twin, b) for b in suffix]
            path = classify(node, head)
            before = node.rebuilds
            t0 = time.perf_counter()
            rewind = rewind_in_memory if path == FREQUENT else chain_reorg_on_disk
            rewind(node, ForkRequest(head + depth, head))
            ms = (time.perf_counter() - t0) * 1000
            got = [apply_block(node, b) for b in suffix]
            rows.append({"depth": depth, "path": path, "rewind_ms": round(ms, 3),
                         "suffix_blocks": len(suffix), "rebuilds": node.rebuilds - before,
                         "digest_match": got == expected})
    return rows


# -- CLI --------------------------------------------------------------------

def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _data_dir(arg: Optional[str]) -> str:
    d = os.environ.get("COLSTORE_DATA_DIR") or arg
    return d or tempfile.mkdtemp(prefix="colstore_")


def _common(p: argparse.ArgumentParser, blocks: int) -> None:
    p.add_argument("--mix", choices=["ro", "rw", "wh", "wo"], default="wo")
    p.add_argument("--dist", choices=["uniform", "zipfian"], default="uniform")
    p.add_argument("--blocks", type=int, default=blocks)
    p.add_argument("--base-states", type=int, default=20_000)
    p.add_argument("--txs-per-block", type=int, default=100)
    p.add_argument("--btree-capacity", type=int, default=4096)
    p.add_argument("--size-ratio", type=int, default=10)
    p.add_argument("--fanout", type=int, default=4)
    p.add_argument("--prune", default="archive", help="archive or keep:<k>")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir")
    p.add_argument("--out", help="CSV output path (default stdout)")


def _spec_cfg(args) -> tuple[WorkloadSpec, EngineConfig]:
    spec = WorkloadSpec(args.mix, args.dist, args.base_states, args.blocks, args.txs_per_block, args.seed)
    cfg = EngineConfig(_data_dir(args.data_dir), btree_capacity=args.btree_capacity,
                       size_ratio=args.size_ratio, mht_fanout=args.fanout,
                       prune=PrunePolicy.parse(args.prune))
    return spec, cfg


def _write_csv(rows: list[dict], fields: list[str], out: Optional[str]) -> None:
    f = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    finally:
        if out:
            f.close()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="colstore-bench", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="throughput and storage over a workload")
    _common(p, 20_000)
    p.add_argument("--interval", type=int, default=100, help="blocks per CSV row")
    p = sub.add_parser("prov", help="provenance query cost versus version range")
    _common(p, 2_000)
    p.add_argument("--ranges", type=_ints, default=[2, 4, 8, 16, 32, 64, 128])
    p.add_argument("--queries", type=int, default=50)
    p.add_argument("--dump-dir", help="write one proof/results pair per range here")
    p = sub.add_parser("reorg", help="rewind latency and digest equality per fork depth")
    _common(p, 0)
    p.add_argument("--depths", type=_ints, default=[0, 1, 5, 20, 100, 500])
    p = sub.add_parser("verify", help="check a proof file against a digest")
    p.add_argument("--proof", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--digest", required=True, help="index digest as hex")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "verify":
        with open(args.proof, "rb") as f:
            proof = f.read()
        with open(args.results, "rb") as f:
            addr, lo, hi, results = decode_results(f.read())
        verdict = verify(bytes.fromhex(args.digest), (addr, lo, hi), results, proof)
        print("accept" if verdict.ok else f"reject: {verdict.reason} ({verdict.detail})")
        return 0 if verdict.ok else 1
    spec, cfg = _spec_cfg(args)
    if args.cmd == "run":
        _write_csv(run_bench(spec, cfg, args.interval), RUN_FIELDS, args.out)
    elif args.cmd == "prov":
        _write_csv(run_prov(spec, cfg, args.ranges, args.queries, args.dump_dir), PROV_FIELDS, args.out)
    else:
        rows = run_reorg_drill(spec, cfg, args.depths)
        _write_csv(rows, REORG_FIELDS, args.out)
        if not all(r["digest_match"] for r in rows):
            print("digest mismatch after reorg", file=sys.stderr)
            return 1
    print(f"data dir: {cfg.data_dir}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
