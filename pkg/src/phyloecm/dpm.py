"""Partitioning genes into modules: collapsed Gibbs sampling under a
Chinese-restaurant prior, MAP extraction via Chib marginal likelihoods,
module strengths, and Rao-Blackwellized loss-probability estimates.

Genes in one module share a vector of per-branch loss probabilities, which
is integrated out analytically everywhere (conjugate Beta counts), so the
chain state is just the hidden histories and the label vector. One sweep
refreshes every gene's history given its module peers, then re-seats every
gene by the leave-one-out predictive rule, refreshing its history right
after the move so later draws in the same sweep never condition on a stale
history.

Determinism: genes are processed in sorted-name order and every draw comes
from a stream keyed by (master seed, gene name), so results are invariant
to the input row order and reproducible bit-for-bit for a fixed seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from phyloecm import _kernels
from phyloecm.errors import InputError, NumericalError
from phyloecm.profiles import ProfileMatrix
from phyloecm.rng import derive_kernel_seed, derive_rng, labels_digest
from phyloecm.tree import PhyloTree
from phyloecm.treehmm import (
    DEFAULT_BETA_PRIOR,
    DEFAULT_ERROR_RATE,
    check_error_rate,
    pack_profiles,
    tree_data,
)

CHIB_PIVOT_RETREAT = 1e-6


@dataclass(frozen=True)
class SamplerConfig:
    """Run-level knobs for the partition chain and its estimators."""

    alpha: float = 1.0
    beta_prior: tuple[float, float] = DEFAULT_BETA_PRIOR
    iterations: int = 1000
    burn_in: float = 0.2
    chib_samples: int = 1000
    seed: int = 0
    error_rate: float = DEFAULT_ERROR_RATE
    tree_chib_samples: int = 200  # reduced budget for in-chain tree moves

    def __post_init__(self):
        if self.alpha <= 0:
            raise InputError("concentration alpha must be positive")
        a, b = self.beta_prior
        if a <= 0 or b <= 0:
            raise InputError("Beta prior parameters must be positive")
        if self.iterations < 1:
            raise InputError("need at least one sweep")
        if not 0.0 <= self.burn_in < 1.0:
            raise InputError("burn_in fraction must be in [0, 1)")
        if self.kept_from >= self.iterations:
            raise InputError("burn-in leaves no kept iterations")
        if self.chib_samples < 1 or self.tree_chib_samples < 1:
            raise InputError("Chib sample counts must be positive")
        check_error_rate(self.error_rate)

    @property
    def kept_from(self) -> int:
        return int(math.floor(self.burn_in * self.iterations))


@dataclass
class EcmAssignment:
    """A partition of the input genes plus per-module summaries."""

    gene_ids: tuple[str, ...]
    labels: np.ndarray  # int32, dense module ids 1..K, aligned to gene_ids
    phi: dict[int, float] | None = None
    theta_hat: dict[int, np.ndarray] | None = None
    map_score: float | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        object.__setattr__(self, "labels", labels)
        ids = set(labels.tolist())
        if labels.size and ids != set(range(1, max(ids) + 1)):
            raise InputError("module labels must be dense 1..K with no empty module")

    @property
    def n_modules(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0

    def members(self, k: int) -> list[str]:
        return [g for g, lab in zip(self.gene_ids, self.labels) if lab == k]


@dataclass
class ChainTrace:
    """Per-sweep label snapshots plus (once scored) posterior scores."""

    gene_ids: tuple[str, ...]
    labels: np.ndarray  # int32, shape (iterations, n)
    log_post: np.ndarray  # float64, NaN until map_assignment scores a sweep
    tree_indices: np.ndarray | None = None  # int32 per sweep, tree-set chains
    map_index: int = -1

    @property
    def iterations(self) -> int:
        return self.labels.shape[0]


# -- CRP prior -----------------------------------------------------------------


def crp_log_prior(labels, alpha: float) -> float:
    """Log prior probability of a partition under the Chinese restaurant
    process: alpha^K * prod (n_k - 1)! / prod_{t<n} (alpha + t)."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    _, sizes = np.unique(labels, return_counts=True)
    n = labels.size
    k = sizes.size
    return float(
        k * math.log(alpha)
        + gammaln(sizes).sum()
        - (gammaln(alpha + n) - gammaln(alpha))
    )


# -- per-problem packed context --------------------------------------------------


@dataclass
class GeneContext:
    """Profiles packed against one tree, ready for the compiled kernels."""

    tree: PhyloTree
    gene_ids: tuple[str, ...]
    xs: np.ndarray  # uint8 (n, n_nodes+1)
    ones_cum: np.ndarray  # int32 (n, n_nodes+1)
    total_ones: np.ndarray  # int32 (n,)
    lambdas: np.ndarray  # int32 (n,)
    eq9: np.ndarray = field(default=None)  # type: ignore[assignment]

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)


def lambda_array(gene_ids, lambdas, tree: PhyloTree) -> np.ndarray:
    """Accept gain nodes as a dict by gene name or an aligned array."""
    if isinstance(lambdas, dict):
        try:
            arr = np.asarray([lambdas[g] for g in gene_ids], dtype=np.int32)
        except KeyError as exc:
            raise InputError(f"no gain node for gene {exc.args[0]!r}") from None
    else:
        arr = np.asarray(lambdas, dtype=np.int32)
        if arr.shape != (len(gene_ids),):
            raise InputError("gain-node array does not match the gene list")
    if arr.size and (arr.min() < 1 or arr.max() > tree.n_nodes):
        raise InputError("gain node out of range")
    return arr


def build_context(matrix: ProfileMatrix, tree: PhyloTree, lambdas,
                  cfg: SamplerConfig) -> GeneContext:
    if matrix.species_ids != tree.leaf_labels:
        raise InputError("profile species order does not match the tree leaves")
    xs, ones_cum = pack_profiles(tree, matrix.cells)
    lam = lambda_array(matrix.gene_ids, lambdas, tree)
    ctx = GeneContext(
        tree=tree,
        gene_ids=matrix.gene_ids,
        xs=xs,
        ones_cum=ones_cum,
        total_ones=ones_cum[:, -1].astype(np.int32),
        lambdas=lam,
    )
    a, b = cfg.beta_prior
    prior_theta = np.full(tree.n_nodes + 1, a / (a + b))
    ctx.eq9 = np.array(
        [_ctx_loglik(ctx, i, prior_theta, cfg.error_rate) for i in range(ctx.n_genes)]
    )
    return ctx


def _ctx_loglik(ctx: GeneContext, i: int, theta: np.ndarray, q: float) -> float:
    td = tree_data(ctx.tree)
    return _kernels.gain_loglik(
        theta, ctx.xs[i], ctx.lambdas[i], q, td.post, td.post_pos, td.sub_start,
        td.child_ptr, td.child_list, td.is_leaf, ctx.ones_cum[i], td.leaves_cum,
        int(ctx.total_ones[i]), ctx.tree.n_leaves,
    )


def _ctx_sample_history(ctx: GeneContext, i: int, theta: np.ndarray, q: float,
                        u: np.ndarray) -> np.ndarray:
    td = tree_data(ctx.tree)
    h, ok = _kernels.sample_history_kernel(
        theta, ctx.xs[i], ctx.lambdas[i], q, u, td.post, td.post_pos,
        td.sub_start, td.child_ptr, td.child_list, td.is_leaf, td.parent,
    )
    if not ok:
        raise NumericalError(
            f"gene {ctx.gene_ids[i]!r} has zero likelihood; cannot sample history"
        )
    return h


# -- chain ----------------------------------------------------------------------


class _Ecm:
    __slots__ = ("size", "c01", "c11")

    def __init__(self, n1: int):
        self.size = 0
        self.c01 = np.zeros(n1, dtype=np.int64)
        self.c11 = np.zeros(n1, dtype=np.int64)


class PartitionChain:
    """Mutable chain state; one instance per run. Shared by the single-tree
    sampler and the tree-set sampler (which adds a tree-resampling move)."""

    def __init__(self, contexts: list[GeneContext], cfg: SamplerConfig,
                 tree_index: int = 0):
        self.contexts = contexts
        self.cfg = cfg
        self.tree_index = tree_index
        ctx = contexts[tree_index]
        self.n = ctx.n_genes
        self.n1 = ctx.tree.n_nodes + 1
        self.a, self.b = cfg.beta_prior
        self.q = cfg.error_rate
        # canonical processing order and per-gene streams are keyed by name
        self.scan = sorted(range(self.n), key=lambda i: ctx.gene_ids[i])
        self.rngs = [derive_rng(cfg.seed, "gene", g) for g in ctx.gene_ids]
        self.g01 = np.zeros((self.n, self.n1), dtype=np.int64)
        self.g11 = np.zeros((self.n, self.n1), dtype=np.int64)
        self.labels = np.zeros(self.n, dtype=np.int32)
        self.ecms: dict[int, _Ecm] = {}
        self.histories = np.zeros((self.n, self.n1), dtype=np.int8)
        self._theta_cache: dict[int, np.ndarray] = {}
        self._init_state()

    # ---- state plumbing

    @property
    def ctx(self) -> GeneContext:
        return self.contexts[self.tree_index]

    def _init_state(self) -> None:
        """Every gene starts in its own module with a fresh history."""
        for rank, i in enumerate(self.scan):
            k = rank + 1
            self.labels[i] = k
            self.ecms[k] = _Ecm(self.n1)
            self._draw_history(i, self._theta_for(k))
            self._attach(i, k)
        self._renumber()

    def _theta_for(self, k: int) -> np.ndarray:
        theta = self._theta_cache.get(k)
        if theta is None:
            ecm = self.ecms[k]
            theta = (self.a + ecm.c01) / (self.a + self.b + ecm.c01 + ecm.c11)
            self._theta_cache[k] = theta
        return theta

    def _prior_theta(self) -> np.ndarray:
        return np.full(self.n1, self.a / (self.a + self.b))

    def _draw_history(self, i: int, theta: np.ndarray) -> None:
        u = self.rngs[i].random(self.n1)
        h = _ctx_sample_history(self.ctx, i, theta, self.q, u)
        self.histories[i] = h
        c01 = np.zeros(self.n1, dtype=np.int64)
        c11 = np.zeros(self.n1, dtype=np.int64)
        _kernels.add_history_counts(h, tree_data(self.ctx.tree).parent, c01, c11, 1)
        self.g01[i] = c01
        self.g11[i] = c11

    def _attach(self, i: int, k: int) -> None:
        ecm = self.ecms[k]
        ecm.size += 1
        ecm.c01 += self.g01[i]
        ecm.c11 += self.g11[i]
        self.labels[i] = k
        self._theta_cache.pop(k, None)

    def _detach(self, i: int) -> int:
        k = int(self.labels[i])
        ecm = self.ecms[k]
        ecm.size -= 1
        ecm.c01 -= self.g01[i]
        ecm.c11 -= self.g11[i]
        self._theta_cache.pop(k, None)
        if ecm.size == 0:
            del self.ecms[k]
        return k

    def _renumber(self) -> None:
        """Relabel modules densely by first occurrence in processing order."""
        mapping: dict[int, int] = {}
        for i in self.scan:
            k = int(self.labels[i])
            if k not in mapping:
                mapping[k] = len(mapping) + 1
        if all(old == new for old, new in mapping.items()):
            return
        self.labels = np.array([mapping[int(k)] for k in self.labels], dtype=np.int32)
        self.ecms = {mapping[k]: e for k, e in self.ecms.items()}
        self._theta_cache = {mapping[k]: v for k, v in self._theta_cache.items()
                             if k in mapping}

    # ---- sweep pieces

    def history_sweep(self) -> None:
        for i in self.scan:
            k = self._detach(i)
            theta = self._theta_for(k) if k in self.ecms else self._prior_theta()
            self._draw_history(i, theta)
            if k not in self.ecms:
                self.ecms[k] = _Ecm(self.n1)
            self._attach(i, k)

    def label_sweep(self) -> None:
        for i in self.scan:
            self._detach(i)
            ids = sorted(self.ecms)
            logw = np.empty(len(ids) + 1)
            for j, k in enumerate(ids):
                logw[j] = math.log(self.ecms[k].size) + _ctx_loglik(
                    self.ctx, i, self._theta_for(k), self.q
                )
            logw[-1] = math.log(self.cfg.alpha) + self.ctx.eq9[i]
            logw -= logw.max()
            w = np.exp(logw)
            w /= w.sum()
            u = self.rngs[i].random()
            choice = int(np.searchsorted(np.cumsum(w), u, side="right"))
            choice = min(choice, len(ids))
            if choice < len(ids):
                k = ids[choice]
            else:
                k = max(self.ecms, default=0) + 1
                self.ecms[k] = _Ecm(self.n1)
            # refresh the history under the new module before re-attaching, so
            # downstream draws in this sweep condition on a coherent state
            self._draw_history(i, self._theta_for(k))
            self._attach(i, k)

    def sweep(self) -> None:
        self.history_sweep()
        self.label_sweep()
        self._renumber()

    def switch_tree(self, new_index: int) -> None:
        """Move the chain onto another tree: histories are re-drawn gene by
        gene, each conditioned on the peers already re-drawn."""
        if new_index == self.tree_index:
            return
        self.tree_index = new_index
        self._theta_cache.clear()
        for ecm in self.ecms.values():
            ecm.c01[:] = 0
            ecm.c11[:] = 0
        self.g01[:] = 0
        self.g11[:] = 0
        for i in self.scan:
            k = int(self.labels[i])
            ecm = self.ecms[k]
            ecm.size -= 1  # _attach will restore it
            self._draw_history(i, self._theta_for(k))
            self._attach(i, k)

    def snapshot(self) -> np.ndarray:
        return self.labels.copy()


def crp_assignment_probs(tree: PhyloTree, x_row, gain_node: int, q: float,
                         ecm_counts: dict[int, "np.ndarray | tuple"],
                         ecm_sizes: dict[int, int], alpha: float,
                         n_total: int, beta_prior=DEFAULT_BETA_PRIOR):
    """Leave-one-out seating probabilities for one gene.

    ``ecm_counts[k]`` holds the (c01, c11) arrays of module k with the gene
    already removed; returns (candidate ids + [0] for a new module,
    normalized probabilities).
    """
    from phyloecm.treehmm import BetaCounts, expected_marginal_loglik

    a, b = beta_prior
    ids = sorted(ecm_sizes)
    logw = np.empty(len(ids) + 1)
    denom_guard = n_total - 1 + alpha
    if denom_guard <= 0:
        raise InputError("need at least one gene")
    for j, k in enumerate(ids):
        c01, c11 = ecm_counts[k]
        counts = BetaCounts(a, b, np.asarray(c01, dtype=np.int64),
                            np.asarray(c11, dtype=np.int64))
        logw[j] = math.log(ecm_sizes[k]) + expected_marginal_loglik(
            tree, x_row, counts, gain_node, q
        )
    empty = BetaCounts.empty(tree, a, b)
    logw[-1] = math.log(alpha) + expected_marginal_loglik(
        tree, x_row, empty, gain_node, q
    )
    logw -= logsumexp(logw)
    return ids + [0], np.exp(logw)


def gibbs_partition(matrix: ProfileMatrix, tree: PhyloTree, lambdas,
                    cfg: SamplerConfig) -> ChainTrace:
    """Run the two-step sweep (histories, then labels) for cfg.iterations."""
    ctx = build_context(matrix, tree, lambdas, cfg)
    chain = PartitionChain([ctx], cfg)
    snaps = np.zeros((cfg.iterations, ctx.n_genes), dtype=np.int32)
    for it in range(cfg.iterations):
        chain.sweep()
        snaps[it] = chain.snapshot()
    return ChainTrace(
        gene_ids=ctx.gene_ids,
        labels=snaps,
        log_post=np.full(cfg.iterations, np.nan),
    )


# -- Chib marginal likelihood and related estimators -----------------------------


def _beta_logpdf(x, a, b):
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - betaln(a, b)


def _chib_warmup(m_samples: int) -> int:
    return min(200, max(10, m_samples // 10))


def conditioned_count_draws(ctx: GeneContext, member_idx, cfg: SamplerConfig,
                            m_samples: int, kernel_seed: int):
    """Pooled per-branch transition counts from M history sweeps with the
    module membership held fixed. Returns (kept01, kept11), shape (M, n1).

    Members are processed in sorted-name order, so the draws (and anything
    estimated from them) are bit-identical under any input permutation."""
    td = tree_data(ctx.tree)
    idx = np.asarray(member_idx, dtype=np.int64)
    idx = idx[np.argsort([ctx.gene_ids[int(i)] for i in idx], kind="stable")]
    xb = ctx.xs[idx]
    lams = ctx.lambdas[idx]
    warm = _chib_warmup(m_samples)
    kept01, kept11 = _kernels.fixed_block_draws(
        xb, lams, float(cfg.beta_prior[0]), float(cfg.beta_prior[1]),
        float(cfg.error_rate), m_samples + warm, warm, kernel_seed,
        td.post, td.post_pos, td.sub_start, td.child_ptr, td.child_list,
        td.is_leaf, td.parent,
    )
    return kept01, kept11


def _branch_slice(tree: PhyloTree) -> np.ndarray:
    ids = np.arange(1, tree.n_nodes + 1)
    return ids[ids != tree.root]


def chib_estimate(ctx: GeneContext, member_idx, cfg: SamplerConfig,
                  m_samples: int, kernel_seed: int):
    """Chib marginal likelihood of a gene block plus the posterior-mean
    loss-prob pivot used to anchor it. Returns (log_ml, theta_hat)."""
    a, b = cfg.beta_prior
    kept01, kept11 = conditioned_count_draws(ctx, member_idx, cfg, m_samples,
                                             kernel_seed)
    post_means = (a + kept01) / (a + b + kept01 + kept11)
    theta_hat = post_means.mean(axis=0)
    branches = _branch_slice(ctx.tree)
    theta_star = theta_hat

    def pieces(theta_pivot):
        tb = theta_pivot[branches]
        log_prior = float(_beta_logpdf(tb, a, b).sum())
        dens_m = _beta_logpdf(tb[None, :], a + kept01[:, branches],
                              b + kept11[:, branches]).sum(axis=1)
        log_dens = float(logsumexp(dens_m) - math.log(len(dens_m)))
        log_lik = float(
            sum(_ctx_loglik(ctx, int(i), theta_pivot, cfg.error_rate)
                for i in member_idx)
        )
        return log_lik, log_prior, log_dens

    log_lik, log_prior, log_dens = pieces(theta_star)
    if not np.isfinite(log_lik + log_prior - log_dens):
        warnings.warn("Chib pivot at a boundary; retreating toward the prior mean")
        prior_mean = a / (a + b)
        theta_star = theta_star * (1 - CHIB_PIVOT_RETREAT) + prior_mean * CHIB_PIVOT_RETREAT
        log_lik, log_prior, log_dens = pieces(theta_star)
        if not np.isfinite(log_lik + log_prior - log_dens):
            raise NumericalError("Chib estimate is not finite even after retreat")
    return log_lik + log_prior - log_dens, theta_hat


def chib_log_marginal(matrix: ProfileMatrix, tree: PhyloTree, lambdas,
                      cfg: SamplerConfig, m_samples: int | None = None,
                      seed_keys: tuple = ("standalone",)) -> float:
    """log Pr(block of profiles | one shared loss-prob vector), estimated at
    the posterior-mean pivot from M conditioned history draws."""
    if matrix.n_genes == 0:
        raise InputError("module is empty")
    ctx = build_context(matrix, tree, lambdas, cfg)
    m = m_samples if m_samples is not None else cfg.chib_samples
    seed = derive_kernel_seed(cfg.seed, "chib", *seed_keys)
    logml, _ = chib_estimate(ctx, np.arange(ctx.n_genes), cfg, m, seed)
    return float(logml)


def point_theta(matrix: ProfileMatrix, labels, k: int, tree: PhyloTree,
                lambdas, cfg: SamplerConfig,
                seed_keys: tuple = ("standalone",)) -> np.ndarray:
    """Rao-Blackwellized loss-probability estimate for module k: the average
    of per-branch Beta posterior means over M conditioned history draws."""
    labels = np.asarray(labels)
    idx = np.flatnonzero(labels == k)
    if idx.size == 0:
        raise InputError(f"module {k} is empty")
    ctx = build_context(matrix, tree, lambdas, cfg)
    a, b = cfg.beta_prior
    seed = derive_kernel_seed(cfg.seed, "point", *seed_keys, k)
    kept01, kept11 = conditioned_count_draws(ctx, idx, cfg, cfg.chib_samples, seed)
    post_means = (a + kept01) / (a + b + kept01 + kept11)
    return post_means.mean(axis=0)


def ecm_strength(matrix: ProfileMatrix, tree: PhyloTree, lambdas,
                 cfg: SamplerConfig, m_samples: int | None = None,
                 seed_keys: tuple = ("standalone",)) -> float:
    """Per-gene-normalized log Bayes factor of a shared-history model against
    independent singleton histories; exactly 0 for singletons (the numerator
    cancels analytically, no sampling involved)."""
    if matrix.n_genes == 0:
        raise InputError("module is empty")
    if matrix.n_genes == 1:
        return 0.0
    ctx = build_context(matrix, tree, lambdas, cfg)
    m = m_samples if m_samples is not None else cfg.chib_samples
    seed = derive_kernel_seed(cfg.seed, "chib", *seed_keys)
    logml, _ = chib_estimate(ctx, np.arange(ctx.n_genes), cfg, m, seed)
    return float((logml - ctx.eq9.sum()) / ctx.n_genes)


# -- MAP extraction ---------------------------------------------------------------


def canonical_labels(labels: np.ndarray) -> tuple[int, ...]:
    """Renumber a label vector by first occurrence; the partition fingerprint."""
    mapping: dict[int, int] = {}
    out = []
    for k in labels.tolist():
        if k not in mapping:
            mapping[k] = len(mapping) + 1
        out.append(mapping[k])
    return tuple(out)


class SnapshotScorer:
    """Scores distinct partitions (CRP prior + per-module Chib marginals) with
    caching; singleton modules use their exact closed-form marginal.

    Kernel seeds are keyed by the tree's topology digest, so identical trees
    reproduce identical estimates wherever they appear."""

    def __init__(self, ctx: GeneContext, cfg: SamplerConfig,
                 m_samples: int | None = None):
        from phyloecm.tree import tree_digest

        self.ctx = ctx
        self.cfg = cfg
        self.m = m_samples if m_samples is not None else cfg.chib_samples
        self.tree_key = tree_digest(ctx.tree)
        self._cache: dict[tuple[int, ...], float] = {}
        self._theta: dict[tuple, np.ndarray] = {}

    def block_logml(self, fp_digest: int, k: int, idx: np.ndarray) -> float:
        if idx.size == 1:
            return float(self.ctx.eq9[int(idx[0])])
        seed = derive_kernel_seed(self.cfg.seed, "chib", fp_digest, self.tree_key,
                                  k, self.m)
        logml, theta_hat = chib_estimate(self.ctx, idx, self.cfg, self.m, seed)
        self._theta[(fp_digest, k)] = theta_hat
        return float(logml)

    def data_score(self, fp: tuple[int, ...]) -> float:
        """log Pr(profiles | partition), summed over modules."""
        if fp in self._cache:
            return self._cache[fp]
        arr = np.asarray(fp, dtype=np.int32)
        digest = labels_digest(arr)
        total = 0.0
        for k in range(1, arr.max() + 1):
            idx = np.flatnonzero(arr == k)
            total += self.block_logml(digest, k, idx)
        self._cache[fp] = total
        return total

    def score(self, fp: tuple[int, ...]) -> float:
        return self.data_score(fp) + crp_log_prior(np.asarray(fp), self.cfg.alpha)


def map_assignment(trace: ChainTrace, matrix: ProfileMatrix, tree: PhyloTree,
                   lambdas, cfg: SamplerConfig,
                   m_samples: int | None = None) -> EcmAssignment:
    """Highest-scoring kept snapshot (earliest on ties), with module strengths
    and loss-probability estimates filled in for the winner."""
    if trace.iterations == 0:
        raise InputError("empty chain trace")
    ctx = build_context(matrix, tree, lambdas, cfg)
    scorer = SnapshotScorer(ctx, cfg, m_samples)
    start = min(cfg.kept_from, trace.iterations - 1)
    best_idx = -1
    best_score = -np.inf
    for it in range(start, trace.iterations):
        fp = canonical_labels(trace.labels[it])
        s = scorer.score(fp)
        trace.log_post[it] = s
        if s > best_score:
            best_score = s
            best_idx = it
    trace.map_index = best_idx
    winner = np.asarray(canonical_labels(trace.labels[best_idx]), dtype=np.int32)
    digest = labels_digest(winner)
    phi: dict[int, float] = {}
    theta_hat: dict[int, np.ndarray] = {}
    for k in range(1, winner.max() + 1):
        idx = np.flatnonzero(winner == k)
        if idx.size == 1:
            phi[k] = 0.0
        else:
            logml = scorer.block_logml(digest, k, idx)
            phi[k] = float((logml - ctx.eq9[idx].sum()) / idx.size)
        theta_hat[k] = point_theta(matrix, winner, k, tree, lambdas, cfg,
                                   seed_keys=(digest, scorer.tree_key))
    return EcmAssignment(
        gene_ids=ctx.gene_ids,
        labels=winner,
        phi=phi,
        theta_hat=theta_hat,
        map_score=float(best_score),
    )
