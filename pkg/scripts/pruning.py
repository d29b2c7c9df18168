"""Storage with and without version-tree pruning on a Zipfian write-only load.

    python scripts/pruning.py --blocks 2000 --keep 0,4,16
"""
import argparse
import tempfile

from colstore.bench import FILE_KINDS, run_bench
from colstore.config import EngineConfig, PrunePolicy
from colstore.workload import WorkloadSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--blocks", type=int, default=1000)
    ap.add_argument("--base-states", type=int, default=5000)
    ap.add_argument("--btree-capacity", type=int, default=4096)
    ap.add_argument("--keep", default="0,4,16", help="keep_recent values to compare with archive")
    args = ap.parse_args()
    spec = WorkloadSpec("wo", "zipfian", args.base_states, args.blocks)
    policies = [PrunePolicy()] + [PrunePolicy(int(k)) for k in args.keep.split(",")]
    print("policy     " + " ".join(f"{k:>11}" for k in FILE_KINDS) + "       total")
    base = None
    for policy in policies:
        with tempfile.TemporaryDirectory(prefix="colstore_prune_") as d:
            cfg = EngineConfig(d, btree_capacity=args.btree_capacity, prune=policy)
            last = run_bench(spec, cfg, interval=args.blocks)[-1]
        base = base or last["total_bytes"]
        print(f"{str(policy):<10} " + " ".join(f"{last[k + '_bytes']:>11}" for k in FILE_KINDS)
              + f" {last['total_bytes']:>11}  ({last['total_bytes'] / base:.2f}x)", flush=True)


if __name__ == "__main__":
    main()
