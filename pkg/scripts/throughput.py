"""Throughput and storage per workload mix.

Runs every mix under uniform and Zipfian keys on one configuration and writes
one CSV per run plus a summary table to the output directory.

    python scripts/throughput.py --blocks 2000 --base-states 20000 --out results/throughput
"""
import argparse
import csv
import os
import tempfile

from colstore.bench import RUN_FIELDS, run_bench
from colstore.config import EngineConfig
from colstore.workload import MIXES, WorkloadSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--blocks", type=int, default=500)
    ap.add_argument("--base-states", type=int, default=20_000)
    ap.add_argument("--btree-capacity", type=int, default=4096)
    ap.add_argument("--size-ratio", type=int, default=10)
    ap.add_argument("--mixes", default=",".join(MIXES))
    ap.add_argument("--out", default="results/throughput")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    summary = []
    for dist in ("uniform", "zipfian"):
        for mix in args.mixes.split(","):
            spec = WorkloadSpec(mix, dist, args.base_states, args.blocks)
            with tempfile.TemporaryDirectory(prefix="colstore_tp_") as d:
                cfg = EngineConfig(d, btree_capacity=args.btree_capacity, size_ratio=args.size_ratio)
                rows = run_bench(spec, cfg, interval=max(1, args.blocks // 10))
            with open(os.path.join(args.out, f"{mix}_{dist}.csv"), "w", newline="") as f:
                w = csv.DictWriter(f, fieldnames=RUN_FIELDS)
                w.writeheader()
                w.writerows(rows)
            last = rows[-1]
            tps = args.blocks * spec.txs_per_block / last["elapsed_s"]
            summary.append((mix, dist, round(tps), last["p99_ms"], last["total_bytes"], last["runs"]))
            print(f"{mix:>2} {dist:<8} {tps:9.0f} tx/s  p99 {last['p99_ms']:7.2f} ms  "
                  f"{last['total_bytes'] / 1e6:8.2f} MB  {last['runs']} runs", flush=True)
    with open(os.path.join(args.out, "summary.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mix", "dist", "tx_per_s", "p99_ms", "total_bytes", "runs"])
        w.writerows(summary)


if __name__ == "__main__":
    main()
