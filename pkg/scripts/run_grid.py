#!/usr/bin/env python3
"""Reproduce the simulation-study comparison on a desk-scale synthetic tree.

Runs all four methods over the full signal grid in both generative regimes
and writes plot-ready TSVs (per-replicate rows plus per-cell means). The
full grid with the model-based methods takes a while; trim --replicates or
--methods for a quick look.
"""

import argparse
import sys
import time
from pathlib import Path

from phyloecm import simbench
from phyloecm.tree import TreeSet


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--species", type=int, default=64)
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--methods", default="clime10,hc_hamming,hc_anticorr")
    ap.add_argument("--n-loss", default="4,6,8,10")
    ap.add_argument("--p-loss", default="0.6,0.7,0.8,0.9")
    ap.add_argument("--n-singletons", default="0,10,20,50")
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    treeset = TreeSet((simbench.random_binary_tree(args.species, args.seed),))
    methods = tuple(m for m in args.methods.split(",") if m)
    axes = dict(
        n_loss=tuple(int(v) for v in args.n_loss.split(",")),
        p_loss=tuple(float(v) for v in args.p_loss.split(",")),
        n_singletons=tuple(int(v) for v in args.n_singletons.split(",")),
    )
    for regime in simbench.REGIMES:
        grid = simbench.grid_from_axes(regime, **axes)
        t0 = time.time()
        rows = simbench.run_benchmark(treeset, grid, methods,
                                      replicates=args.replicates, seed=args.seed)
        simbench.write_results(rows, args.out / f"results_{regime}.tsv")
        simbench.write_summary(rows, args.out / f"summary_{regime}.tsv")
        print(f"{regime}: {len(grid)} cells x {args.replicates} replicates "
              f"in {time.time() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
