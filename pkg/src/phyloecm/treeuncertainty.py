"""Partitioning and expansion under an empirical prior over tree structures.

Instead of one fixed tree, the chain carries a finite set of candidate trees
(bootstrap or posterior samples from tree building). Each sweep runs the
usual history/label updates conditioned on the current tree, then resamples
the tree with probability proportional to prior weight times the marginal
likelihood of the whole gene set under that tree (estimated by the Chib
method and cached by partition fingerprint, so unchanged partitions pay
nothing). MAP extraction and candidate scoring average over the tree set.

With a single tree in the set everything here reduces bit-for-bit to the
fixed-tree sampler: the tree move is skipped, and all stream/seed
derivations coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from phyloecm import _kernels
from phyloecm.dpm import (
    ChainTrace,
    EcmAssignment,
    GeneContext,
    PartitionChain,
    SamplerConfig,
    SnapshotScorer,
    build_context,
    canonical_labels,
    conditioned_count_draws,
    crp_log_prior,
)
from phyloecm.errors import InputError
from phyloecm.expansion import ExpansionEntry, ExpansionReport
from phyloecm.profiles import ProfileMatrix
from phyloecm.rng import derive_rng, labels_digest
from phyloecm.tree import TreeSet, tree_digest
from phyloecm.treehmm import pack_profile, tree_data


def build_tree_contexts(matrix: ProfileMatrix, treeset: TreeSet,
                        lambdas_per_tree, cfg: SamplerConfig) -> list[GeneContext]:
    """Pack the gene set against every candidate tree.

    ``lambdas_per_tree`` holds one gain-node map per tree: gain nodes are
    tree-dependent objects, so each tree needs its own preprocessed set.
    """
    if len(lambdas_per_tree) != len(treeset):
        raise InputError("need one gain-node map per tree")
    return [
        build_context(matrix, tree, lams, cfg)
        for tree, lams in zip(treeset.trees, lambdas_per_tree)
    ]


def gibbs_partition_11(matrix: ProfileMatrix, treeset: TreeSet,
                       lambdas_per_tree, cfg: SamplerConfig) -> ChainTrace:
    """The three-move sweep: histories, labels, then the tree index."""
    contexts = build_tree_contexts(matrix, treeset, lambdas_per_tree, cfg)
    chain = PartitionChain(contexts, cfg, tree_index=0)
    n_trees = len(treeset)
    scorers = [
        SnapshotScorer(ctx, cfg, m_samples=cfg.tree_chib_samples)
        for ctx in contexts
    ]
    log_prior_w = np.log(treeset.weights)
    tree_rng = derive_rng(cfg.seed, "tree-step")
    snaps = np.zeros((cfg.iterations, chain.n), dtype=np.int32)
    tree_idx = np.zeros(cfg.iterations, dtype=np.int32)
    for it in range(cfg.iterations):
        chain.sweep()
        if n_trees > 1:
            fp = canonical_labels(chain.labels)
            logw = np.array(
                [log_prior_w[i] + scorers[i].data_score(fp) for i in range(n_trees)]
            )
            logw -= logw.max()
            w = np.exp(logw)
            w /= w.sum()
            u = tree_rng.random()
            new_tree = int(min(np.searchsorted(np.cumsum(w), u, side="right"),
                               n_trees - 1))
            chain.switch_tree(new_tree)
        snaps[it] = chain.snapshot()
        tree_idx[it] = chain.tree_index
    return ChainTrace(
        gene_ids=contexts[0].gene_ids,
        labels=snaps,
        log_post=np.full(cfg.iterations, np.nan),
        tree_indices=tree_idx,
    )


@dataclass
class TreeSetPartition:
    """MAP partition under the tree set, plus the per-tree evidence at it."""

    assignment: EcmAssignment
    tree_log_weights: np.ndarray  # normalized log posterior weight per tree
    tree_frequencies: np.ndarray  # sampling frequency per tree over kept sweeps
    fingerprint_digest: int


def map_assignment_11(trace: ChainTrace, matrix: ProfileMatrix,
                      treeset: TreeSet, lambdas_per_tree,
                      cfg: SamplerConfig) -> TreeSetPartition:
    """Best kept snapshot under the tree-averaged score
    CRP prior + log sum_i w_i Pr(profiles | partition, tree_i)."""
    if trace.iterations == 0:
        raise InputError("empty chain trace")
    contexts = build_tree_contexts(matrix, treeset, lambdas_per_tree, cfg)
    n_trees = len(treeset)
    scorers = [SnapshotScorer(ctx, cfg) for ctx in contexts]
    log_prior_w = np.log(treeset.weights)

    def tree_scores(fp):
        return np.array(
            [log_prior_w[i] + scorers[i].data_score(fp) for i in range(n_trees)]
        )

    start = min(cfg.kept_from, trace.iterations - 1)
    best_idx = -1
    best_score = -np.inf
    for it in range(start, trace.iterations):
        fp = canonical_labels(trace.labels[it])
        s = float(logsumexp(tree_scores(fp))) + crp_log_prior(
            np.asarray(fp), cfg.alpha
        )
        trace.log_post[it] = s
        if s > best_score:
            best_score = s
            best_idx = it
    trace.map_index = best_idx
    winner = np.asarray(canonical_labels(trace.labels[best_idx]), dtype=np.int32)
    digest = labels_digest(winner)
    per_tree = tree_scores(canonical_labels(trace.labels[best_idx]))
    tree_log_w = per_tree - logsumexp(per_tree)

    # module summaries: strength averages evidence over the tree prior;
    # loss-prob estimates are reported under the highest-posterior tree
    best_tree = int(np.argmax(tree_log_w))
    phi: dict[int, float] = {}
    theta_hat: dict[int, np.ndarray] = {}
    K = int(winner.max())
    a, b = cfg.beta_prior
    from phyloecm.rng import derive_kernel_seed

    for k in range(1, K + 1):
        idx = np.flatnonzero(winner == k)
        if idx.size == 1:
            phi[k] = 0.0
        else:
            num = logsumexp([
                log_prior_w[i] + scorers[i].block_logml(digest, k, idx)
                for i in range(n_trees)
            ])
            den = sum(
                float(logsumexp([
                    log_prior_w[i] + contexts[i].eq9[int(g)] for i in range(n_trees)
                ]))
                for g in idx
            )
            phi[k] = float((num - den) / idx.size)
        seed = derive_kernel_seed(cfg.seed, "point", digest,
                                  tree_digest(treeset.trees[best_tree]), k)
        kept01, kept11 = conditioned_count_draws(
            contexts[best_tree], idx, cfg, cfg.chib_samples, seed
        )
        theta_hat[k] = ((a + kept01) / (a + b + kept01 + kept11)).mean(axis=0)

    if trace.tree_indices is not None:
        kept_trees = trace.tree_indices[start:]
        freqs = np.bincount(kept_trees, minlength=n_trees) / kept_trees.size
    else:
        freqs = np.full(n_trees, 1.0 / n_trees)
    assignment = EcmAssignment(
        gene_ids=contexts[0].gene_ids,
        labels=winner,
        phi=phi,
        theta_hat=theta_hat,
        map_score=float(best_score),
    )
    return TreeSetPartition(
        assignment=assignment,
        tree_log_weights=tree_log_w,
        tree_frequencies=freqs,
        fingerprint_digest=digest,
    )


# -- expansion under tree uncertainty ---------------------------------------------


@dataclass
class TreeExpansionModel:
    """Precomputed pieces for candidate scoring: per-tree posterior draws of
    each module's loss probs, per-tree null vectors, and tree weights."""

    treeset: TreeSet
    tree_log_weights: np.ndarray
    theta_draws: dict[tuple[int, int], np.ndarray]  # (tree, ecm) -> (M, n1) means
    theta0: list[np.ndarray]
    lambdas_per_tree: list[dict[str, int]]
    ecm_ids: tuple[int, ...]
    member_genes: tuple[str, ...]
    no_signal: frozenset[str]
    q: float


def build_expansion_model(members: ProfileMatrix, partition: TreeSetPartition,
                          treeset: TreeSet, null_models,
                          cfg: SamplerConfig) -> TreeExpansionModel:
    """Draw the per-(tree, module) loss-prob posterior means reused by every
    candidate; weights come from the MAP partition's per-tree evidence."""
    if len(null_models) != len(treeset):
        raise InputError("need one null model per tree")
    labels = partition.assignment.labels
    ecm_ids = tuple(range(1, int(labels.max()) + 1)) if labels.size else ()
    lambdas_per_tree = [nm.lambdas for nm in null_models]
    contexts = build_tree_contexts(members, treeset, lambdas_per_tree, cfg)
    a, b = cfg.beta_prior
    digest = partition.fingerprint_digest
    draws: dict[tuple[int, int], np.ndarray] = {}
    from phyloecm.rng import derive_kernel_seed

    for i, ctx in enumerate(contexts):
        for k in ecm_ids:
            idx = np.flatnonzero(labels == k)
            seed = derive_kernel_seed(cfg.seed, "expand-draws", digest,
                                      tree_digest(treeset.trees[i]), k)
            kept01, kept11 = conditioned_count_draws(ctx, idx, cfg,
                                                     cfg.chib_samples, seed)
            draws[(i, k)] = (a + kept01) / (a + b + kept01 + kept11)
    no_signal: set[str] = set()
    for nm in null_models:
        no_signal.update(nm.no_signal)
    return TreeExpansionModel(
        treeset=treeset,
        tree_log_weights=partition.tree_log_weights,
        theta_draws=draws,
        theta0=[nm.theta0 for nm in null_models],
        lambdas_per_tree=lambdas_per_tree,
        ecm_ids=ecm_ids,
        member_genes=tuple(partition.assignment.gene_ids),
        no_signal=frozenset(no_signal),
        q=cfg.error_rate,
    )


def _tree_marginals(model: TreeExpansionModel, x_row, gene: str, k: int):
    """Per-tree (module predictive, null) log-likelihood pair for one gene."""
    mod = np.empty(len(model.treeset))
    nul = np.empty(len(model.treeset))
    for i, tree in enumerate(model.treeset.trees):
        td = tree_data(tree)
        x, ones_cum = pack_profile(tree, x_row)
        lam = model.lambdas_per_tree[i][gene]
        args = (x, lam, model.q, td.post, td.post_pos, td.sub_start,
                td.child_ptr, td.child_list, td.is_leaf, ones_cum,
                td.leaves_cum, int(ones_cum[-1]), tree.n_leaves)
        lls = _kernels.gain_loglik_multi(model.theta_draws[(i, k)], *args)
        mod[i] = float(logsumexp(lls) - np.log(len(lls)))
        nul[i] = float(_kernels.gain_loglik(model.theta0[i], *args))
    return mod, nul


def llr_11(model: TreeExpansionModel, x_row, gene: str, k: int) -> float:
    """Tree-averaged predictive log-likelihood ratio of module k vs the null:
    both sides integrate loss probs (Monte Carlo over conditioned draws) and
    the tree (weights renormalized over the candidate set)."""
    if k not in model.ecm_ids:
        raise InputError(f"unknown module {k}")
    mod, nul = _tree_marginals(model, x_row, gene, k)
    lw = model.tree_log_weights
    return float(logsumexp(lw + mod) - logsumexp(lw + nul))


def expand_ecm_11(candidates: ProfileMatrix, model: TreeExpansionModel,
                  threshold: float = 0.0, map_fn=map) -> ExpansionReport:
    """Tree-averaged analogue of the fixed-tree expansion report."""
    for tree in model.treeset.trees:
        if candidates.species_ids != tree.leaf_labels:
            raise InputError("candidate species order does not match the trees")
    member_genes = set(model.member_genes)
    skipped: dict[str, str] = {}
    todo: list[tuple[str, np.ndarray]] = []
    for gene, row in zip(candidates.gene_ids, candidates.cells):
        if gene in member_genes:
            skipped[gene] = "input-set gene"
        elif gene in model.no_signal:
            skipped[gene] = "no signal (all-absent profile)"
        else:
            todo.append((gene, row))

    def score_gene(item):
        gene, row = item
        return [llr_11(model, row, gene, k) for k in model.ecm_ids]

    all_scores = list(map_fn(score_gene, todo))
    scores: dict[tuple[str, int], float] = {}
    for (gene, _), per_ecm in zip(todo, all_scores):
        for k, val in zip(model.ecm_ids, per_ecm):
            scores[(gene, k)] = float(val)
    positives: dict[int, list[ExpansionEntry]] = {}
    for k in model.ecm_ids:
        hits = [(gene, scores[(gene, k)]) for gene, _ in todo
                if scores[(gene, k)] > threshold]
        hits.sort(key=lambda gv: (-gv[1], gv[0]))
        positives[k] = [
            ExpansionEntry(gene=g, ecm=k, llr=v, rank=r + 1)
            for r, (g, v) in enumerate(hits)
        ]
    return ExpansionReport(scores=scores, positives=positives,
                           threshold=threshold, skipped=skipped)
