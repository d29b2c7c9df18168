"""Rewind latency by fork depth, checked against a node that never forked.

    python scripts/reorg_drill.py --depths 0,1,5,20,100,500
"""
import argparse
import sys

from colstore.bench import main as bench_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depths", default="0,1,5,20,100,500")
    ap.add_argument("--base-states", type=int, default=20_000)
    ap.add_argument("--btree-capacity", type=int, default=4096)
    ap.add_argument("--prune", default="archive")
    ap.add_argument("--out")
    args = ap.parse_args()
    argv = ["reorg", "--depths", args.depths, "--base-states", str(args.base_states),
            "--btree-capacity", str(args.btree_capacity), "--prune", args.prune]
    if args.out:
        argv += ["--out", args.out]
    sys.exit(bench_main(argv))


if __name__ == "__main__":
    main()
