"""Provenance query cost against the number of versions in the queried window.

Writes the CSV, dumps one proof per range, and re-checks each dump through
the CLI verifier, which only sees the files and the digest.

    python scripts/prov_sweep.py --blocks 2000 --out results/prov
"""
import argparse
import os
import tempfile

from colstore.bench import main as bench_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--blocks", type=int, default=1000)
    ap.add_argument("--base-states", type=int, default=2000)
    ap.add_argument("--dist", default="zipfian")
    ap.add_argument("--queries", type=int, default=100)
    ap.add_argument("--prune", default="archive")
    ap.add_argument("--out", default="results/prov")
    args = ap.parse_args()
    dump = os.path.join(args.out, "proofs")
    os.makedirs(dump, exist_ok=True)
    ranges = [2, 4, 8, 16, 32, 64, 128]
    with tempfile.TemporaryDirectory(prefix="colstore_prov_") as d:
        rc = bench_main(["prov", "--mix", "wo", "--dist", args.dist, "--blocks", str(args.blocks),
                         "--base-states", str(args.base_states), "--queries", str(args.queries),
                         "--prune", args.prune, "--ranges", ",".join(map(str, ranges)),
                         "--data-dir", d, "--dump-dir", dump, "--out", os.path.join(args.out, "prov.csv")])
    with open(os.path.join(dump, "digest.hex")) as f:
        digest = f.read().strip()
    for r in ranges:
        rc |= bench_main(["verify", "--proof", os.path.join(dump, f"proof_r{r}.bin"),
                          "--results", os.path.join(dump, f"results_r{r}.bin"), "--digest", digest])
    with open(os.path.join(args.out, "prov.csv")) as f:
        print(f.read())
    raise SystemExit(rc)


if __name__ == "__main__":
    main()
