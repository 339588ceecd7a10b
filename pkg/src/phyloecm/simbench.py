"""Synthetic data generation, baseline clusterers, and the benchmark harness.

Two generative regimes: a tree-based one (each module gains at a random
branch and loses along randomly chosen branches of that clade) and a
tree-independent one where losses hit randomly chosen leaf branches without
regard to the topology, which is the adversarial case for tree-aware
methods. Baselines are agglomerative clustering under Hamming or squared
anti-correlation distance with a singleton-fraction dendrogram cut.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist, squareform

from phyloecm import dpm, preprocess, treeuncertainty
from phyloecm.errors import InputError
from phyloecm.profiles import ProfileMatrix, write_profiles
from phyloecm.rng import derive_kernel_seed, derive_rng
from phyloecm.tree import PhyloTree, TreeSet, parse_newick, subtree_nodes
from phyloecm.dpm import EcmAssignment, SamplerConfig

REGIMES = ("tree_based", "tree_independent")
METHODS = ("clime10", "clime11", "hc_hamming", "hc_anticorr")


def random_binary_tree(n_leaves: int, seed_or_rng, label_prefix: str = "sp",
                       side_beta: float = 6.0) -> PhyloTree:
    """A random rooted binary tree built by recursive random splits.

    Split fractions are drawn from Beta(1, side_beta), which peels off small
    side clades and yields the imbalanced, spine-like shapes of real species
    trees (a long backbone of nested clades with small bushes hanging off).
    side_beta=1 recovers uniform splits.
    """
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    if n_leaves < 2:
        raise InputError("need at least 2 leaves")
    width = max(3, len(str(n_leaves)))
    labels = [f"{label_prefix}{i + 1:0{width}d}" for i in range(n_leaves)]
    shuffled = [labels[i] for i in rng.permutation(n_leaves)]

    def build(group: list[str]) -> str:
        if len(group) == 1:
            return group[0]
        if len(group) == 2:
            return f"({group[0]},{group[1]})"
        k = max(1, min(len(group) - 1,
                       round(len(group) * rng.beta(1.0, side_beta))))
        return f"({build(group[:k])},{build(group[k:])})"

    return parse_newick(build(shuffled) + ";")


def random_tree_set(n_leaves: int, n_trees: int, seed: int,
                    label_prefix: str = "sp", side_beta: float = 6.0) -> TreeSet:
    """Independent random topologies over one species set, leaf ids aligned."""
    from phyloecm.tree import parse_tree_set, render_newick

    lines = []
    for i in range(n_trees):
        t = random_binary_tree(n_leaves, derive_rng(seed, "tree", i),
                               label_prefix, side_beta)
        lines.append(render_newick(t, with_lengths=False))
    return parse_tree_set("\n".join(lines))


@dataclass(frozen=True)
class SimConfig:
    """One cell of the simulation grid.

    The two clade-size knobs keep the generated signal in the regime the
    model targets: gain clades must be large (most genes of a reference
    genome are anciently gained, so clades overlap and carry information),
    and each loss branch must root a bounded patch (losses act as repeated
    independent events rather than one clade-wide extinction). Defaults are
    resolved from the tree size as min_gain_leaves=3S/4 and
    max_loss_leaves=3S/16.
    """

    ecm_count: int = 5
    genes_per_ecm: int = 10
    n_loss: int = 10
    p_loss: float = 0.9
    n_singletons: int = 0
    q_sim: float = 0.02
    regime: str = "tree_based"
    min_gain_leaves: int | None = None
    max_loss_leaves: int | None = None

    def __post_init__(self):
        if self.ecm_count < 1 or self.genes_per_ecm < 1 or self.n_loss < 1:
            raise InputError("counts must be positive")
        if self.n_singletons < 0:
            raise InputError("singleton count cannot be negative")
        if not 0.0 < self.p_loss <= 1.0:
            raise InputError("loss probability must be in (0, 1]")
        if not 0.0 <= self.q_sim < 0.5:
            raise InputError("simulation error rate must be in [0, 0.5)")
        if self.regime not in REGIMES:
            raise InputError(f"unknown regime {self.regime!r}")

    def resolved_min_gain_leaves(self, n_leaves: int) -> int:
        if self.min_gain_leaves is not None:
            return self.min_gain_leaves
        return max(2, (3 * n_leaves) // 4)

    def resolved_max_loss_leaves(self, n_leaves: int) -> int:
        if self.max_loss_leaves is not None:
            return self.max_loss_leaves
        return max(1, (3 * n_leaves) // 16)


@dataclass
class LabeledDataset:
    """A simulated profile matrix with its generating truth attached."""

    profiles: ProfileMatrix
    labels: np.ndarray  # int32 true module ids, aligned to profile rows
    tree_index: int
    gain_nodes: tuple[int, ...] = ()
    loss_branches: tuple[tuple[int, ...], ...] = ()

    @property
    def all_zero_genes(self) -> tuple[str, ...]:
        mask = self.profiles.cells.sum(axis=1) == 0
        return tuple(g for g, z in zip(self.profiles.gene_ids, mask) if z)


def _simulate_gene(tree: PhyloTree, theta: np.ndarray, gain: int,
                   q_sim: float, rng: np.random.Generator) -> np.ndarray:
    """One profile row: presence propagated down the gain clade with losses,
    then observation flips at rate q_sim."""
    from phyloecm.treehmm import tree_data

    td = tree_data(tree)
    n1 = tree.n_nodes + 1
    h = np.zeros(n1, dtype=np.uint8)
    h[gain] = 1
    lo = td.sub_start[gain]
    hi = td.post_pos[gain]
    for p in range(hi - 1, lo - 1, -1):
        s = int(td.post[p])
        if h[td.parent[s]] == 1:
            h[s] = 0 if rng.random() < theta[s] else 1
    x = h[1 : tree.n_leaves + 1].copy()
    flips = rng.random(tree.n_leaves) < q_sim
    x[flips] ^= 1
    return x


def _clade_leaf_counts(tree: PhyloTree) -> np.ndarray:
    counts = np.zeros(tree.n_nodes + 1, dtype=np.int64)
    from phyloecm.treehmm import tree_data

    td = tree_data(tree)
    for s in td.post:
        if s <= tree.n_leaves:
            counts[s] = 1
        else:
            counts[s] = sum(counts[c] for c in tree.children[s])
    return counts


def _module_params(tree: PhyloTree, cfg: SimConfig, rng: np.random.Generator,
                   leaf_losses_only: bool) -> tuple[int, tuple[int, ...], np.ndarray]:
    """Draw (gain node, loss branches, loss-prob vector) for one module."""
    n = tree.n_nodes
    leaves_of = _clade_leaf_counts(tree)
    min_gain = cfg.resolved_min_gain_leaves(tree.n_leaves)
    if leaf_losses_only:
        if cfg.n_loss > tree.n_leaves:
            raise InputError(
                f"n_loss={cfg.n_loss} exceeds the {tree.n_leaves} leaf branches"
            )
        eligible = [s for s in range(1, n) if leaves_of[s] >= min_gain]
        if not eligible:
            raise InputError(
                f"no branch roots a clade with at least {min_gain} leaves"
            )
        gain = int(eligible[int(rng.integers(0, len(eligible)))])
        losses = rng.choice(np.arange(1, tree.n_leaves + 1), size=cfg.n_loss,
                            replace=False)
    else:
        max_patch = cfg.resolved_max_loss_leaves(tree.n_leaves)

        def loss_pool(gain):
            return [s for s in subtree_nodes(tree, gain) - {gain}
                    if leaves_of[s] <= max_patch]

        eligible = [s for s in range(1, n)
                    if leaves_of[s] >= min_gain and len(loss_pool(s)) >= cfg.n_loss]
        if not eligible:
            raise InputError(
                f"no clade with >= {min_gain} leaves offers {cfg.n_loss} "
                f"loss branches of <= {max_patch} leaves"
            )
        gain = int(eligible[int(rng.integers(0, len(eligible)))])
        pool = np.asarray(sorted(loss_pool(gain)), dtype=np.int64)
        losses = rng.choice(pool, size=cfg.n_loss, replace=False)
    losses = tuple(int(v) for v in np.sort(losses))
    theta = np.zeros(n + 1)
    theta[list(losses)] = cfg.p_loss
    if leaf_losses_only:
        assert np.all(theta[tree.n_leaves + 1 :] == 0.0)
    return gain, losses, theta


def _simulate(tree: PhyloTree, tree_index: int, cfg: SimConfig,
              rng: np.random.Generator, leaf_losses_only: bool) -> LabeledDataset:
    genes: list[str] = []
    rows: list[np.ndarray] = []
    labels: list[int] = []
    gains: list[int] = []
    losses: list[tuple[int, ...]] = []
    label = 0
    for j in range(cfg.ecm_count):
        label += 1
        gain, loss, theta = _module_params(tree, cfg, rng, leaf_losses_only)
        gains.append(gain)
        losses.append(loss)
        for g in range(cfg.genes_per_ecm):
            genes.append(f"ecm{j + 1:02d}_g{g + 1:02d}")
            rows.append(_simulate_gene(tree, theta, gain, cfg.q_sim, rng))
            labels.append(label)
    for j in range(cfg.n_singletons):
        label += 1
        gain, loss, theta = _module_params(tree, cfg, rng, leaf_losses_only)
        gains.append(gain)
        losses.append(loss)
        genes.append(f"noise{j + 1:03d}")
        rows.append(_simulate_gene(tree, theta, gain, cfg.q_sim, rng))
        labels.append(label)
    matrix = ProfileMatrix(tuple(genes), tree.leaf_labels,
                           np.vstack(rows).astype(np.uint8))
    return LabeledDataset(
        profiles=matrix,
        labels=np.asarray(labels, dtype=np.int32),
        tree_index=tree_index,
        gain_nodes=tuple(gains),
        loss_branches=tuple(losses),
    )


def simulate_tree_based(treeset: TreeSet, cfg: SimConfig,
                        rng: np.random.Generator) -> LabeledDataset:
    """Pick a generating tree from the set, then per module gain somewhere and
    lose along its clade with probability p_loss on n_loss branches."""
    idx = int(rng.choice(len(treeset), p=treeset.weights))
    return _simulate(treeset.trees[idx], idx, cfg, rng, leaf_losses_only=False)


def simulate_tree_independent(tree: PhyloTree, cfg: SimConfig,
                              rng: np.random.Generator) -> LabeledDataset:
    """Losses restricted to leaf branches chosen without regard to topology."""
    return _simulate(tree, 0, cfg, rng, leaf_losses_only=True)


# -- baselines ----------------------------------------------------------------------


def _pairwise_distance(cells: np.ndarray, metric: str) -> np.ndarray:
    if metric == "hamming":
        return pdist(cells, metric="hamming")
    if metric == "anticorrelation":
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.corrcoef(cells.astype(np.float64))
        d = 1.0 - corr * corr
        d[~np.isfinite(d)] = 1.0  # constant rows have no defined correlation
        np.fill_diagonal(d, 0.0)
        return squareform(d, checks=False)
    raise InputError(f"unknown metric {metric!r}")


def hierarchical_cluster(cells: np.ndarray, gene_ids, metric: str = "hamming",
                         singleton_fraction: float = 0.10) -> EcmAssignment:
    """Average-linkage clustering cut at the lowest merge height where the
    fraction of singleton clusters drops to the given level."""
    cells = np.asarray(cells)
    n = cells.shape[0]
    if n < 2:
        raise InputError("need at least 2 genes to cluster")
    Z = linkage(_pairwise_distance(cells, metric), method="average")
    heights = np.unique(Z[:, 2])
    chosen = None
    for h in heights:
        labels = fcluster(Z, t=h, criterion="distance")
        _, sizes = np.unique(labels, return_counts=True)
        if (sizes == 1).sum() <= singleton_fraction * n:
            chosen = labels
            break
    if chosen is None:
        chosen = np.ones(n, dtype=int)
    dense = np.asarray(dpm.canonical_labels(np.asarray(chosen)), dtype=np.int32)
    return EcmAssignment(gene_ids=tuple(gene_ids), labels=dense)


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Hubert-Arabie chance-corrected agreement between two partitions."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError("label vectors must be 1-D and of equal length")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


# -- benchmark harness ---------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkOptions:
    """Budget knobs for the model-based methods inside the benchmark.

    alpha=None resolves to sqrt(n_genes) per dataset, one of the
    concentration choices the method is reported to be insensitive to; it
    keeps unrelated noise genes in their own modules at desk scale.
    """

    iterations: int = 150
    null_sweeps: int = 100
    chib_samples: int = 100
    tree_chib_samples: int = 80
    alpha: float | None = None
    error_rate: float = 0.01

    def resolved_alpha(self, n_genes: int) -> float:
        if self.alpha is not None:
            return self.alpha
        return float(np.sqrt(n_genes))


def grid_from_axes(regime: str, n_loss=(4, 10), p_loss=(0.6, 0.9),
                   n_singletons=(0, 20), ecm_count: int = 5,
                   genes_per_ecm: int = 10, q_sim: float = 0.02) -> list[SimConfig]:
    return [
        SimConfig(ecm_count=ecm_count, genes_per_ecm=genes_per_ecm,
                  n_loss=int(nl), p_loss=float(pl), n_singletons=int(ns),
                  q_sim=q_sim, regime=regime)
        for nl, pl, ns in itertools.product(n_loss, p_loss, n_singletons)
    ]


def run_clime10(dataset: LabeledDataset, tree: PhyloTree, seed: int,
                opts: BenchmarkOptions) -> EcmAssignment:
    """Preprocess (gain nodes) and partition on a single fixed tree."""
    null = preprocess.estimate_null(
        dataset.profiles, tree, sweeps=opts.null_sweeps, seed=seed,
        q=opts.error_rate,
    )
    cfg = SamplerConfig(
        alpha=opts.resolved_alpha(dataset.profiles.n_genes),
        iterations=opts.iterations,
        chib_samples=opts.chib_samples, seed=seed, error_rate=opts.error_rate,
        tree_chib_samples=opts.tree_chib_samples,
    )
    trace = dpm.gibbs_partition(dataset.profiles, tree, null.lambdas, cfg)
    return dpm.map_assignment(trace, dataset.profiles, tree, null.lambdas, cfg)


def run_clime11(dataset: LabeledDataset, treeset: TreeSet, seed: int,
                opts: BenchmarkOptions) -> EcmAssignment:
    """Preprocess per tree, then partition with the tree-resampling move."""
    lambdas_per_tree = []
    for i, tree in enumerate(treeset.trees):
        null = preprocess.estimate_null(
            dataset.profiles, tree, sweeps=opts.null_sweeps,
            seed=derive_kernel_seed(seed, "null", i), q=opts.error_rate,
        )
        lambdas_per_tree.append(null.lambdas)
    cfg = SamplerConfig(
        alpha=opts.resolved_alpha(dataset.profiles.n_genes),
        iterations=opts.iterations,
        chib_samples=opts.chib_samples, seed=seed, error_rate=opts.error_rate,
        tree_chib_samples=opts.tree_chib_samples,
    )
    trace = treeuncertainty.gibbs_partition_11(dataset.profiles, treeset,
                                               lambdas_per_tree, cfg)
    result = treeuncertainty.map_assignment_11(trace, dataset.profiles, treeset,
                                               lambdas_per_tree, cfg)
    return result.assignment


def run_benchmark(treeset: TreeSet, grid: list[SimConfig], methods,
                  replicates: int = 20, seed: int = 0,
                  opts: BenchmarkOptions = BenchmarkOptions(),
                  map_fn=map) -> list[dict]:
    """ARI of every method on every (grid cell, replicate) dataset.

    The first tree of the set plays the consensus role: it is the only tree
    shown to the single-tree method, while the tree-set method sees them all.
    """
    for m in methods:
        if m not in METHODS:
            raise InputError(f"unknown method {m!r}")
    tasks = [(c, cfg, r) for c, cfg in enumerate(grid) for r in range(replicates)]

    def one(task):
        c, sim_cfg, r = task
        rng = derive_rng(seed, "simdata", c, r)
        if sim_cfg.regime == "tree_based":
            dataset = simulate_tree_based(treeset, sim_cfg, rng)
        else:
            gen_idx = int(rng.choice(len(treeset), p=treeset.weights))
            dataset = simulate_tree_independent(treeset.trees[gen_idx], sim_cfg, rng)
        out = []
        for method in methods:
            mseed = derive_kernel_seed(seed, "chain", method, c, r)
            if method == "clime10":
                est = run_clime10(dataset, treeset.trees[0], mseed, opts)
            elif method == "clime11":
                est = run_clime11(dataset, treeset, mseed, opts)
            elif method == "hc_hamming":
                est = hierarchical_cluster(dataset.profiles.cells,
                                           dataset.profiles.gene_ids, "hamming")
            else:
                est = hierarchical_cluster(dataset.profiles.cells,
                                           dataset.profiles.gene_ids,
                                           "anticorrelation")
            ari = adjusted_rand_index(dataset.labels, est.labels)
            row = {
                "regime": sim_cfg.regime,
                "ecm_count": sim_cfg.ecm_count,
                "genes_per_ecm": sim_cfg.genes_per_ecm,
                "n_loss": sim_cfg.n_loss,
                "p_loss": sim_cfg.p_loss,
                "n_singletons": sim_cfg.n_singletons,
                "q_sim": sim_cfg.q_sim,
                "method": method,
                "replicate": r,
                "tree_index": dataset.tree_index,
                "ari": round(float(ari), 6),
            }
            out.append(row)
        return out

    nested = list(map_fn(one, tasks))
    return [row for chunk in nested for row in chunk]


RESULT_COLUMNS = ("regime", "ecm_count", "genes_per_ecm", "n_loss", "p_loss",
                  "n_singletons", "q_sim", "method", "replicate", "tree_index",
                  "ari")


def write_results(rows: list[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("\t".join(RESULT_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(str(row[c]) for c in RESULT_COLUMNS) + "\n")


def summarize_results(rows: list[dict]) -> list[dict]:
    """Mean ARI per (grid cell, method), plot-ready."""
    keys = ("regime", "ecm_count", "genes_per_ecm", "n_loss", "p_loss",
            "n_singletons", "q_sim", "method")
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row["ari"])
    out = []
    for key in sorted(groups, key=str):
        vals = groups[key]
        rec = dict(zip(keys, key))
        rec["replicates"] = len(vals)
        rec["mean_ari"] = round(float(np.mean(vals)), 6)
        out.append(rec)
    return out


def write_summary(rows: list[dict], path: str | Path) -> None:
    cols = ("regime", "ecm_count", "genes_per_ecm", "n_loss", "p_loss",
            "n_singletons", "q_sim", "method", "replicates", "mean_ari")
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for row in summarize_results(rows):
            fh.write("\t".join(str(row[c]) for c in cols) + "\n")


def write_dataset(dataset: LabeledDataset, out_dir: str | Path,
                  tree: PhyloTree | None = None) -> None:
    """Profiles TSV + truth labels TSV (+ generating-truth JSON)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_profiles(dataset.profiles, out_dir / "profiles.tsv")
    with (out_dir / "truth.tsv").open("w", encoding="utf-8") as fh:
        fh.write("gene\tecm\n")
        for gene, lab in zip(dataset.profiles.gene_ids, dataset.labels):
            fh.write(f"{gene}\t{int(lab)}\n")
    meta = {
        "tree_index": dataset.tree_index,
        "gain_nodes": list(dataset.gain_nodes),
        "loss_branches": [list(v) for v in dataset.loss_branches],
        "all_zero_genes": list(dataset.all_zero_genes),
    }
    (out_dir / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if tree is not None:
        from phyloecm.tree import render_newick

        (out_dir / "tree.nwk").write_text(
            render_newick(tree, with_lengths=False) + "\n", encoding="utf-8"
        )
