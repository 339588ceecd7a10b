#!/usr/bin/env python3
"""End-to-end demo: simulate a dataset, then run the full CLI pipeline on it
(preprocess -> partition -> expand) and print a compact summary."""

import json
import sys
import tempfile
from pathlib import Path

from phyloecm import cli, simbench
from phyloecm.profiles import write_profiles
from phyloecm.rng import derive_rng
from phyloecm.tree import TreeSet, render_newick


def main() -> int:
    base = Path(tempfile.mkdtemp(prefix="phyloecm-demo-"))
    print(f"working in {base}")
    tree = simbench.random_binary_tree(32, 1)
    cfg = simbench.SimConfig(ecm_count=3, genes_per_ecm=8, n_loss=5,
                             p_loss=0.9, n_singletons=4)
    ds = simbench.simulate_tree_based(TreeSet((tree,)), cfg, derive_rng(0, "demo"))
    (base / "tree.nwk").write_text(render_newick(tree, with_lengths=False) + "\n")
    write_profiles(ds.profiles, base / "profiles.tsv")

    steps = [
        ["preprocess", "--profiles", str(base / "profiles.tsv"),
         "--tree", str(base / "tree.nwk"), "--out", str(base / "null"),
         "--sweeps", "200", "--seed", "0"],
        ["partition", "--profiles", str(base / "profiles.tsv"),
         "--tree", str(base / "tree.nwk"),
         "--null-model", str(base / "null" / "null_model.json"),
         "--iterations", "200", "--chib-samples", "200",
         "--seed", "0", "--out", str(base / "part")],
        ["expand", "--partition", str(base / "part" / "partition.json"),
         "--profiles", str(base / "profiles.tsv"),
         "--null-model", str(base / "null" / "null_model.json"),
         "--out", str(base / "exp")],
    ]
    for argv in steps:
        print(f"$ phyloecm {' '.join(argv)}")
        code = cli.main(argv)
        if code != 0:
            return code

    part = json.loads((base / "part" / "partition.json").read_text())
    truth = {g: int(k) for g, k in zip(ds.profiles.gene_ids, ds.labels)}
    est = {g: k for g, k in part["labels"].items()}
    ari = simbench.adjusted_rand_index(
        [truth[g] for g in sorted(truth)], [est[g] for g in sorted(est)]
    )
    print(f"\nmodules found: {len(part['ecms'])}  (ARI vs truth: {ari:.3f})")
    for k, entry in sorted(part["ecms"].items(), key=lambda kv: int(kv[0])):
        print(f"  module {k}: strength {entry['strength']:.2f} "
              f"members {', '.join(entry['genes'][:6])}"
              + (" ..." if len(entry["genes"]) > 6 else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
