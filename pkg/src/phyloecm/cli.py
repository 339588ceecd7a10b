"""Command-line front end: preprocess -> partition -> expand, plus the
simulation and benchmark subcommands.

Every run writes its products plus a manifest.json capturing the resolved
flags, input digests, master seed, tool version, and wall clock. Outputs are
a pure function of (inputs, flags, seed): reruns are byte-identical for any
thread count (the manifest's timing field is the sole exception, being a
record of the run rather than a product of it).

Exit codes: 0 success, 2 usage errors, 3 invalid inputs, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

import phyloecm
from phyloecm import dpm, expansion, preprocess, simbench, treeuncertainty
from phyloecm.errors import InputError, NumericalError
from phyloecm.profiles import load_profiles
from phyloecm.tree import TreeSet, parse_newick, parse_tree_set, render_newick

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4


# -- config file + manifest -----------------------------------------------------


def load_config_file(path: str | None) -> dict[str, str]:
    """key=value lines; '#' starts a comment. Flags beat these, these beat
    defaults."""
    if path is None:
        return {}
    out: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{line_no}: expected key=value")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(out_dir: Path, subcommand: str, resolved: dict,
                   inputs: dict[str, str], seed: int, elapsed: float) -> None:
    manifest = {
        "tool": "phyloecm",
        "version": phyloecm.__version__,
        "subcommand": subcommand,
        "flags": {k: resolved[k] for k in sorted(resolved)},
        "input_digests": {k: _file_digest(v) for k, v in sorted(inputs.items())},
        "seed": seed,
        "wall_clock_seconds": round(elapsed, 3),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def make_map_fn(threads: int):
    if threads <= 1:
        return map

    def threaded_map(fn, items):
        items = list(items)
        if not items:
            return []
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))

    return threaded_map


def _resolve(args: argparse.Namespace, key: str, cast, default):
    """flags > config file > default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    cfg = getattr(args, "_config_values", {})
    if key in cfg:
        return cast(cfg[key])
    return default


def _load_tree_inputs(args):
    if getattr(args, "tree", None):
        text = Path(args.tree).read_text(encoding="utf-8")
        tree = parse_newick(text.strip())
        return TreeSet((tree,)), {"tree": args.tree}
    text = Path(args.tree_set).read_text(encoding="utf-8")
    ts = parse_tree_set(text)
    return ts, {"tree_set": args.tree_set}


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommand implementations ---------------------------------------------------


def cmd_preprocess(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    treeset, tree_inputs = _load_tree_inputs(args)
    seed = _resolve(args, "seed", int, 0)
    sweeps = _resolve(args, "sweeps", int, preprocess.DEFAULT_NULL_SWEEPS)
    burn_in = _resolve(args, "burn_in", float, 0.2)
    q = _resolve(args, "error_rate", float, 0.01)
    models = []
    for i, tree in enumerate(treeset.trees):
        matrix = load_profiles(args.profiles, tree)
        models.append(
            preprocess.estimate_null(
                matrix, tree, sweeps=sweeps, burn_in=burn_in, q=q,
                seed=seed if len(treeset) == 1 else seed + i,
            )
        )
    preprocess.write_null_models(models, out / "null_model.json")
    resolved = {
        "profiles": args.profiles, "out": str(out), "seed": seed,
        "sweeps": sweeps, "burn_in": burn_in, "error_rate": q,
        "threads": args.threads, **tree_inputs,
    }
    write_manifest(out, "preprocess", resolved,
                   {"profiles": args.profiles, **tree_inputs}, seed,
                   time.time() - t0)
    return EXIT_OK


def _sampler_config(args, seed: int) -> dpm.SamplerConfig:
    return dpm.SamplerConfig(
        alpha=_resolve(args, "alpha", float, 1.0),
        iterations=_resolve(args, "iterations", int, 1000),
        burn_in=_resolve(args, "burn_in", float, 0.2),
        chib_samples=_resolve(args, "chib_samples", int, 1000),
        seed=seed,
        error_rate=_resolve(args, "error_rate", float, 0.01),
        tree_chib_samples=_resolve(args, "tree_chib_samples", int, 200),
    )


def _partition_payload(assignment, cfg, treeset, tree_posterior=None):
    ecms = {}
    root = treeset.trees[0].root
    for k in sorted(assignment.phi):
        theta = assignment.theta_hat[k]
        ecms[str(k)] = {
            "genes": assignment.members(k),
            "strength": round(float(assignment.phi[k]), 10),
            "theta_hat": {
                str(s): round(float(theta[s]), 10)
                for s in range(1, len(theta) - 0)
                if s != root and s < len(theta)
            },
        }
    payload = {
        "format": "phyloecm-partition",
        "version": 1,
        "tool_version": phyloecm.__version__,
        "mode": "single_tree" if len(treeset) == 1 else "tree_set",
        "seed": cfg.seed,
        "config": {
            "alpha": cfg.alpha, "beta_prior": list(cfg.beta_prior),
            "iterations": cfg.iterations, "burn_in": cfg.burn_in,
            "chib_samples": cfg.chib_samples, "error_rate": cfg.error_rate,
            "tree_chib_samples": cfg.tree_chib_samples,
        },
        "tree_newicks": [render_newick(t, with_lengths=False) for t in treeset.trees],
        "labels": {g: int(k) for g, k in zip(assignment.gene_ids, assignment.labels)},
        "map_score": round(float(assignment.map_score), 10),
    }
    payload["ecms"] = ecms
    if tree_posterior is not None:
        payload["tree_posterior"] = {
            str(i): round(float(f), 6) for i, f in enumerate(tree_posterior)
        }
    return payload


def cmd_partition(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    treeset, tree_inputs = _load_tree_inputs(args)
    seed = _resolve(args, "seed", int, 0)
    cfg = _sampler_config(args, seed)
    null_models = preprocess.read_null_models(args.null_model)
    if len(null_models) != len(treeset):
        raise InputError(
            f"null model has {len(null_models)} tree entries, input has {len(treeset)}"
        )
    matrix = load_profiles(args.profiles, treeset.trees[0])
    if args.geneset:
        genes = [g for g in Path(args.geneset).read_text(encoding="utf-8").split()
                 if g]
        matrix = matrix.subset(genes)
    tree_posterior = None
    if len(treeset) == 1:
        tree = treeset.trees[0]
        lambdas = null_models[0].lambdas
        trace = dpm.gibbs_partition(matrix, tree, lambdas, cfg)
        assignment = dpm.map_assignment(trace, matrix, tree, lambdas, cfg)
    else:
        lambdas_per_tree = [nm.lambdas for nm in null_models]
        trace = treeuncertainty.gibbs_partition_11(matrix, treeset,
                                                   lambdas_per_tree, cfg)
        result = treeuncertainty.map_assignment_11(trace, matrix, treeset,
                                                   lambdas_per_tree, cfg)
        assignment = result.assignment
        tree_posterior = result.tree_frequencies
        with (out / "tree_posterior.tsv").open("w", encoding="utf-8") as fh:
            fh.write("tree_index\tsampling_frequency\n")
            for i, f in enumerate(tree_posterior):
                fh.write(f"{i}\t{f:.6f}\n")

    with (out / "partition.tsv").open("w", encoding="utf-8") as fh:
        fh.write("gene\tecm\n")
        for g, k in zip(assignment.gene_ids, assignment.labels):
            fh.write(f"{g}\t{int(k)}\n")
    payload = _partition_payload(assignment, cfg, treeset, tree_posterior)
    (out / "partition.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    resolved = {
        "profiles": args.profiles, "null_model": args.null_model,
        "geneset": args.geneset, "out": str(out), "seed": seed,
        "alpha": cfg.alpha, "iterations": cfg.iterations,
        "burn_in": cfg.burn_in, "chib_samples": cfg.chib_samples,
        "error_rate": cfg.error_rate, "threads": args.threads, **tree_inputs,
    }
    inputs = {"profiles": args.profiles, "null_model": args.null_model, **tree_inputs}
    if args.geneset:
        inputs["geneset"] = args.geneset
    write_manifest(out, "partition", resolved, inputs, seed, time.time() - t0)
    return EXIT_OK


def cmd_expand(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    payload = json.loads(Path(args.partition).read_text(encoding="utf-8"))
    if payload.get("format") != "phyloecm-partition":
        raise InputError(f"{args.partition}: not a partition file")
    null_models = preprocess.read_null_models(args.null_model)
    threshold = _resolve(args, "llr_threshold", float, 0.0)
    threads = args.threads
    seed = int(payload["seed"])
    map_fn = make_map_fn(threads)
    trees = [parse_newick(nwk) for nwk in payload["tree_newicks"]]
    if len(null_models) != len(trees):
        raise InputError("null model and partition disagree on the tree count")
    candidates = load_profiles(args.profiles, trees[0])

    gene_ids = tuple(sorted(payload["labels"]))
    labels = np.array([payload["labels"][g] for g in gene_ids], dtype=np.int32)
    cfgd = payload["config"]
    cfg = dpm.SamplerConfig(
        alpha=float(cfgd["alpha"]), beta_prior=tuple(cfgd["beta_prior"]),
        iterations=int(cfgd["iterations"]), burn_in=float(cfgd["burn_in"]),
        chib_samples=int(cfgd["chib_samples"]), seed=seed,
        error_rate=float(cfgd["error_rate"]),
        tree_chib_samples=int(cfgd.get("tree_chib_samples", 200)),
    )

    if payload["mode"] == "single_tree":
        tree = trees[0]
        theta_hat = {}
        n1 = tree.n_nodes + 1
        for k_str, entry in payload["ecms"].items():
            theta = np.zeros(n1)
            for s_str, v in entry["theta_hat"].items():
                theta[int(s_str)] = float(v)
            theta_hat[int(k_str)] = theta
        assignment = dpm.EcmAssignment(
            gene_ids=gene_ids, labels=labels,
            phi={int(k): e["strength"] for k, e in payload["ecms"].items()},
            theta_hat=theta_hat, map_score=payload["map_score"],
        )
        report = expansion.expand_ecm(candidates, assignment, null_models[0],
                                      cfg.error_rate, threshold, map_fn=map_fn)
    else:
        treeset = TreeSet(tuple(trees))
        members = candidates.subset([g for g in gene_ids]) if all(
            g in candidates.gene_ids for g in gene_ids
        ) else None
        if members is None:
            raise InputError("profiles file must contain the partition's genes")
        assignment = dpm.EcmAssignment(gene_ids=gene_ids, labels=labels)
        tlw = np.array([
            payload["tree_posterior"][str(i)] for i in range(len(trees))
        ])
        tlw = np.where(tlw <= 0, 1e-12, tlw)
        partition = treeuncertainty.TreeSetPartition(
            assignment=assignment,
            tree_log_weights=np.log(tlw / tlw.sum()),
            tree_frequencies=tlw / tlw.sum(),
            fingerprint_digest=int(
                dpm.labels_digest(np.asarray(dpm.canonical_labels(labels)))
            ),
        )
        model = treeuncertainty.build_expansion_model(members, partition, treeset,
                                                      null_models, cfg)
        report = treeuncertainty.expand_ecm_11(candidates, model, threshold,
                                               map_fn=map_fn)
    expansion.write_expansion_reports(report, out)
    resolved = {
        "partition": args.partition, "profiles": args.profiles,
        "null_model": args.null_model, "llr_threshold": threshold,
        "out": str(out), "threads": threads,
    }
    write_manifest(out, "expand", resolved,
                   {"partition": args.partition, "profiles": args.profiles,
                    "null_model": args.null_model},
                   seed, time.time() - t0)
    return EXIT_OK


def _parse_grid(text: str | None, regime: str) -> list[simbench.SimConfig]:
    """Grid spec like 'n_loss=4,10 p_loss=0.6,0.9 n_singletons=0,20'."""
    axes = {"n_loss": [10], "p_loss": [0.9], "n_singletons": [0],
            "ecm_count": [5], "genes_per_ecm": [10], "q_sim": [0.02]}
    if text:
        for part in text.replace(";", " ").split():
            if "=" not in part:
                raise InputError(f"grid item {part!r} is not key=value")
            key, vals = part.split("=", 1)
            key = key.strip()
            if key not in axes:
                raise InputError(f"unknown grid axis {key!r}")
            axes[key] = [float(v) if "." in v else int(v)
                         for v in vals.split(",") if v]
    import itertools as it

    cells = []
    for combo in it.product(axes["n_loss"], axes["p_loss"], axes["n_singletons"],
                            axes["ecm_count"], axes["genes_per_ecm"], axes["q_sim"]):
        nl, pl, ns, ec, gpe, qs = combo
        cells.append(simbench.SimConfig(
            ecm_count=int(ec), genes_per_ecm=int(gpe), n_loss=int(nl),
            p_loss=float(pl), n_singletons=int(ns), q_sim=float(qs),
            regime=regime,
        ))
    return cells


def _benchmark_treeset(args, seed: int):
    if getattr(args, "tree", None) or getattr(args, "tree_set", None):
        return _load_tree_inputs(args)
    species = _resolve(args, "species", int, 64)
    tree = simbench.random_binary_tree(species, seed_or_rng=seed)
    return TreeSet((tree,)), {}


def cmd_simulate(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    seed = _resolve(args, "seed", int, 0)
    regime = _resolve(args, "regime", str, "tree_based")
    replicates = _resolve(args, "replicates", int, 1)
    treeset, tree_inputs = _benchmark_treeset(args, seed)
    grid = _parse_grid(args.grid, regime)
    from phyloecm.rng import derive_rng

    for c, cell in enumerate(grid):
        for r in range(replicates):
            rng = derive_rng(seed, "simdata", c, r)
            if cell.regime == "tree_based":
                ds = simbench.simulate_tree_based(treeset, cell, rng)
                gen_tree = treeset.trees[ds.tree_index]
            else:
                idx = int(rng.choice(len(treeset), p=treeset.weights))
                ds = simbench.simulate_tree_independent(treeset.trees[idx], cell, rng)
                gen_tree = treeset.trees[idx]
            simbench.write_dataset(ds, out / f"cell{c:02d}_rep{r:02d}", gen_tree)
    resolved = {
        "grid": args.grid, "regime": regime, "replicates": replicates,
        "seed": seed, "out": str(out), "species": getattr(args, "species", None),
        "threads": args.threads, **tree_inputs,
    }
    write_manifest(out, "simulate", resolved, dict(tree_inputs), seed,
                   time.time() - t0)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    seed = _resolve(args, "seed", int, 0)
    regime = _resolve(args, "regime", str, "tree_based")
    replicates = _resolve(args, "replicates", int, 20)
    methods = tuple(m.strip() for m in
                    _resolve(args, "methods", str, "clime10,hc_hamming").split(",")
                    if m.strip())
    treeset, tree_inputs = _benchmark_treeset(args, seed)
    grid = _parse_grid(args.grid, regime)
    opts = simbench.BenchmarkOptions(
        iterations=_resolve(args, "iterations", int, 150),
        null_sweeps=_resolve(args, "null_sweeps", int, 100),
        chib_samples=_resolve(args, "chib_samples", int, 100),
        tree_chib_samples=_resolve(args, "tree_chib_samples", int, 80),
        error_rate=_resolve(args, "error_rate", float, 0.01),
    )
    rows = simbench.run_benchmark(treeset, grid, methods, replicates=replicates,
                                  seed=seed, opts=opts,
                                  map_fn=make_map_fn(args.threads))
    simbench.write_results(rows, out / "results.tsv")
    simbench.write_summary(rows, out / "summary.tsv")
    resolved = {
        "grid": args.grid, "regime": regime, "replicates": replicates,
        "methods": ",".join(methods), "seed": seed, "out": str(out),
        "species": getattr(args, "species", None),
        "iterations": opts.iterations, "null_sweeps": opts.null_sweeps,
        "chib_samples": opts.chib_samples, "threads": args.threads,
        **tree_inputs,
    }
    write_manifest(out, "benchmark", resolved, dict(tree_inputs), seed,
                   time.time() - t0)
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phyloecm",
        description="Cluster genes into evolutionarily conserved modules from "
                    "binary phylogenetic profiles, and rank candidate members.",
    )
    parser.add_argument("--version", action="version",
                        version=f"phyloecm {phyloecm.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tree_required=True):
        if tree_required:
            grp = p.add_mutually_exclusive_group(required=True)
            grp.add_argument("--tree", help="Newick file with a single tree")
            grp.add_argument("--tree-set", dest="tree_set",
                             help="file with one Newick tree per line")
        else:
            grp = p.add_mutually_exclusive_group()
            grp.add_argument("--tree")
            grp.add_argument("--tree-set", dest="tree_set")
            p.add_argument("--species", type=int,
                           help="leaf count for the default synthetic tree (64)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads (results are thread-count invariant)")

    p = sub.add_parser("preprocess", help="estimate gain nodes and the null model")
    p.add_argument("--profiles", required=True)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=float)
    p.add_argument("--error-rate", dest="error_rate", type=float)
    common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("partition", help="cluster a gene set into modules")
    p.add_argument("--profiles", required=True)
    p.add_argument("--geneset", help="file with one gene name per line")
    p.add_argument("--null-model", dest="null_model", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=float)
    p.add_argument("--chib-samples", dest="chib_samples", type=int)
    p.add_argument("--tree-chib-samples", dest="tree_chib_samples", type=int)
    p.add_argument("--error-rate", dest="error_rate", type=float)
    common(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("expand", help="rank candidate genes against modules")
    p.add_argument("--partition", required=True, help="partition.json from 'partition'")
    p.add_argument("--profiles", required=True, help="candidate profile matrix")
    p.add_argument("--null-model", dest="null_model", required=True)
    p.add_argument("--llr-threshold", dest="llr_threshold", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("simulate", help="write simulated datasets")
    p.add_argument("--grid", help="axes like 'n_loss=4,10 p_loss=0.6,0.9'")
    p.add_argument("--regime", choices=simbench.REGIMES)
    p.add_argument("--replicates", type=int)
    common(p, tree_required=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="run methods over a simulation grid")
    p.add_argument("--grid")
    p.add_argument("--regime", choices=simbench.REGIMES)
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods", help="comma list from: " + ",".join(simbench.METHODS))
    p.add_argument("--iterations", type=int)
    p.add_argument("--null-sweeps", dest="null_sweeps", type=int)
    p.add_argument("--chib-samples", dest="chib_samples", type=int)
    p.add_argument("--error-rate", dest="error_rate", type=float)
    common(p, tree_required=False)
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._config_values = load_config_file(getattr(args, "config", None))
        return args.func(args)
    except InputError as exc:
        print(f"phyloecm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"phyloecm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
