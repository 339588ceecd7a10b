"""Per-gene likelihood kernels on a fixed tree.

Model: a gene arises once at its gain node and is then inherited along the
tree; on each branch below the gain a present gene is lost with the branch's
loss probability, absence is absorbing (no re-gain). Observed leaf states
flip the true state with error rate q. Branches outside the gain clade emit
their leaves from hidden state 0, so likelihoods are comparable across
different gain nodes.

Loss probabilities are per-branch values indexed by child node id; vectors
here have length n_nodes+1 with slots 0 and root unused. All operations are
pure given their inputs, and sampling takes an explicit Generator, so genes
can be processed concurrently with per-gene streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from phyloecm import _kernels
from phyloecm.errors import InputError
from phyloecm.tree import PhyloTree, subtree_nodes

DEFAULT_ERROR_RATE = 0.01
DEFAULT_BETA_PRIOR = (0.03, 0.97)


def check_error_rate(q: float) -> float:
    """Observation error rates live in [0, 0.5); beyond that the observation
    semantics invert."""
    if not 0.0 <= q < 0.5:
        raise InputError(f"error rate q={q} outside [0, 0.5)")
    return float(q)


def check_loss_probs(tree: PhyloTree, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (tree.n_nodes + 1,):
        raise InputError(
            f"loss-prob vector must have length {tree.n_nodes + 1} (slot per node id)"
        )
    branch = theta[1 : tree.n_nodes]  # root slot is unused
    if np.any(branch < 0) or np.any(branch > 1):
        raise InputError("loss probabilities must lie in [0, 1]")
    return theta


# -- tree data packed for the compiled kernels --------------------------------


@dataclass(frozen=True)
class TreeData:
    """Flat-array view of a PhyloTree consumed by the compiled kernels."""

    n_nodes: int
    n_leaves: int
    parent: np.ndarray
    post: np.ndarray
    post_pos: np.ndarray
    sub_start: np.ndarray
    child_ptr: np.ndarray
    child_list: np.ndarray
    is_leaf: np.ndarray
    leaves_cum: np.ndarray


def tree_data(tree: PhyloTree) -> TreeData:
    """Build (and cache on the tree) the kernel-ready arrays."""
    cached = getattr(tree, "_kernel_data", None)
    if cached is not None:
        return cached
    n = tree.n_nodes
    post = tree.postorder.astype(np.int32)
    post_pos = np.zeros(n + 1, dtype=np.int32)
    for p, s in enumerate(post):
        post_pos[s] = p
    sizes = np.ones(n + 1, dtype=np.int32)
    for s in post:
        for c in tree.children[s]:
            sizes[s] += sizes[c]
    sub_start = np.zeros(n + 1, dtype=np.int32)
    for s in range(1, n + 1):
        sub_start[s] = post_pos[s] - sizes[s] + 1
    child_ptr = np.zeros(n + 2, dtype=np.int32)
    for s in range(1, n + 1):
        child_ptr[s + 1] = child_ptr[s] + len(tree.children[s])
    child_list = np.zeros(child_ptr[n + 1], dtype=np.int32)
    k = 0
    for s in range(1, n + 1):
        for c in tree.children[s]:
            child_list[k] = c
            k += 1
    is_leaf = np.zeros(n + 1, dtype=np.uint8)
    is_leaf[1 : tree.n_leaves + 1] = 1
    leaves_cum = np.zeros(n + 1, dtype=np.int32)
    for p, s in enumerate(post):
        leaves_cum[p + 1] = leaves_cum[p] + (1 if is_leaf[s] else 0)
    data = TreeData(
        n_nodes=n,
        n_leaves=tree.n_leaves,
        parent=tree.parent.astype(np.int32),
        post=post,
        post_pos=post_pos,
        sub_start=sub_start,
        child_ptr=child_ptr,
        child_list=child_list,
        is_leaf=is_leaf,
        leaves_cum=leaves_cum,
    )
    for arr in (data.post, data.post_pos, data.sub_start, data.child_ptr,
                data.child_list, data.is_leaf, data.leaves_cum):
        arr.setflags(write=False)
    object.__setattr__(tree, "_kernel_data", data)
    return data


def pack_profile(tree: PhyloTree, x_row) -> tuple[np.ndarray, np.ndarray]:
    """Spread a length-S leaf profile onto node slots and build the postorder
    prefix count of observed presences (used for outside-clade emissions)."""
    td = tree_data(tree)
    x_row = np.asarray(x_row)
    if x_row.shape != (tree.n_leaves,):
        raise InputError(f"profile row must have length {tree.n_leaves}")
    x = np.zeros(td.n_nodes + 1, dtype=np.uint8)
    x[1 : tree.n_leaves + 1] = x_row
    ones_cum = np.zeros(td.n_nodes + 1, dtype=np.int32)
    for p, s in enumerate(td.post):
        ones_cum[p + 1] = ones_cum[p] + (1 if (td.is_leaf[s] and x[s]) else 0)
    return x, ones_cum


def pack_profiles(tree: PhyloTree, cells: np.ndarray):
    """Vector form of pack_profile for an N x S matrix."""
    td = tree_data(tree)
    n_genes = cells.shape[0]
    xs = np.zeros((n_genes, td.n_nodes + 1), dtype=np.uint8)
    xs[:, 1 : tree.n_leaves + 1] = cells
    leaf_one = (td.is_leaf[td.post] == 1)
    ones_cum = np.zeros((n_genes, td.n_nodes + 1), dtype=np.int32)
    ones_at_post = xs[:, td.post] * leaf_one
    ones_cum[:, 1:] = np.cumsum(ones_at_post, axis=1)
    return xs, ones_cum


# -- domain types --------------------------------------------------------------


@dataclass
class HiddenHistory:
    """Presence states over all nodes, plus the gain node that started them."""

    states: np.ndarray  # int8, length n_nodes+1, slot 0 unused
    gain_node: int

    def validate(self, tree: PhyloTree) -> None:
        h = self.states
        if h.shape != (tree.n_nodes + 1,):
            raise InputError("history has wrong length")
        if h[self.gain_node] != 1:
            raise InputError("history must be present at its gain node")
        inside = subtree_nodes(tree, self.gain_node)
        for s in range(1, tree.n_nodes + 1):
            if s not in inside and h[s] != 0:
                raise InputError(f"presence outside the gain clade at node {s}")
            if s == self.gain_node:
                continue  # the gain itself is the one allowed 0 -> 1 step
            p = tree.parent[s]
            if p != 0 and h[p] == 0 and h[s] == 1:
                raise InputError(f"re-gain on branch {s}")


@dataclass
class BetaCounts:
    """Per-branch loss/keep transition counts plus the shared Beta prior."""

    a: float
    b: float
    c01: np.ndarray  # int64, length n_nodes+1
    c11: np.ndarray

    @classmethod
    def empty(cls, tree: PhyloTree, a: float = DEFAULT_BETA_PRIOR[0],
              b: float = DEFAULT_BETA_PRIOR[1]) -> "BetaCounts":
        n1 = tree.n_nodes + 1
        return cls(a, b, np.zeros(n1, dtype=np.int64), np.zeros(n1, dtype=np.int64))

    def posterior_mean(self) -> np.ndarray:
        return (self.a + self.c01) / (self.a + self.b + self.c01 + self.c11)

    def copy(self) -> "BetaCounts":
        return BetaCounts(self.a, self.b, self.c01.copy(), self.c11.copy())


def history_counts(tree: PhyloTree, states: np.ndarray):
    """(c01, c11) per branch for one history: transitions out of a present
    parent, which confines counting to the gain clade automatically."""
    td = tree_data(tree)
    c01 = np.zeros(td.n_nodes + 1, dtype=np.int64)
    c11 = np.zeros(td.n_nodes + 1, dtype=np.int64)
    _kernels.add_history_counts(states.astype(np.int8), td.parent, c01, c11, 1)
    return c01, c11


def accumulate_counts(tree: PhyloTree, histories: Iterable[HiddenHistory],
                      a: float = DEFAULT_BETA_PRIOR[0],
                      b: float = DEFAULT_BETA_PRIOR[1]) -> BetaCounts:
    """Pool transition counts over a set of histories on the same tree."""
    counts = BetaCounts.empty(tree, a, b)
    for hist in histories:
        c01, c11 = history_counts(tree, hist.states)
        counts.c01 += c01
        counts.c11 += c11
    return counts


@dataclass
class BackwardTable:
    """Subtree likelihoods per node: log-scaled values plus scaling exponents.

    ``log_beta(s, h)`` recovers log Pr(leaves below s | state h at s).
    """

    gain_node: int
    scaled0: np.ndarray
    scaled1: np.ndarray
    log_scale: np.ndarray
    feasible: bool

    def log_beta(self, s: int, h: int) -> float:
        v = self.scaled1[s] if h == 1 else self.scaled0[s]
        if v <= 0.0:
            return -np.inf
        return float(np.log(v) + self.log_scale[s])


# -- operations ----------------------------------------------------------------


def emission_loglik(x_row, h_leaves, q: float) -> float:
    """Sum of per-leaf observation terms: log(1-q) on match, log(q) on flip."""
    q = check_error_rate(q)
    x = np.asarray(x_row)
    h = np.asarray(h_leaves)
    if x.shape != h.shape:
        raise InputError("observed and hidden leaf vectors differ in length")
    mismatches = int(np.count_nonzero(x != h))
    matches = x.size - mismatches
    if mismatches and q == 0.0:
        return float("-inf")
    ll = matches * np.log1p(-q)
    if mismatches:
        ll += mismatches * np.log(q)
    return float(ll)


def complete_loglik(tree: PhyloTree, x_row, history: HiddenHistory,
                    theta, q: float) -> float:
    """Joint log-likelihood of (profile, history); -inf for invalid histories."""
    q = check_error_rate(q)
    theta = check_loss_probs(tree, theta)
    h = np.asarray(history.states, dtype=np.int8)
    if h.shape != (tree.n_nodes + 1,):
        raise InputError("history has wrong length")
    lam = history.gain_node
    if not 1 <= lam <= tree.n_nodes:
        raise InputError(f"gain node {lam} out of range")
    if h[lam] != 1:
        return float("-inf")
    inside = subtree_nodes(tree, lam)
    ll = 0.0
    for s in range(1, tree.n_nodes + 1):
        if s not in inside:
            if h[s] != 0:
                return float("-inf")
            continue
        if s == lam:
            continue
        hp = h[tree.parent[s]]
        if hp == 0:
            if h[s] != 0:
                return float("-inf")
        elif h[s] == 1:
            if theta[s] == 1.0:
                return float("-inf")
            ll += np.log1p(-theta[s])
        else:
            if theta[s] == 0.0:
                return float("-inf")
            ll += np.log(theta[s])
    emit = emission_loglik(np.asarray(x_row), h[1 : tree.n_leaves + 1], q)
    return float(ll + emit)


def marginal_loglik(tree: PhyloTree, x_row, theta, gain_node: int, q: float) -> float:
    """log Pr(profile | loss probs, gain node), histories summed out by the
    bottom-up pruning recursion with per-node rescaling."""
    q = check_error_rate(q)
    theta = check_loss_probs(tree, theta)
    if not 1 <= gain_node <= tree.n_nodes:
        raise InputError(f"gain node {gain_node} out of range")
    td = tree_data(tree)
    x, ones_cum = pack_profile(tree, x_row)
    return float(_kernels.gain_loglik(
        theta, x, gain_node, q, td.post, td.post_pos, td.sub_start,
        td.child_ptr, td.child_list, td.is_leaf, ones_cum, td.leaves_cum,
        int(ones_cum[-1]), tree.n_leaves,
    ))


def expected_marginal_loglik(tree: PhyloTree, x_row, counts: BetaCounts,
                             gain_node: int, q: float) -> float:
    """Marginal likelihood with loss probs integrated out against the Beta
    posterior implied by ``counts``.

    Exact, not an approximation: each branch's loss probability enters a
    single gene's likelihood with degree one, so the expectation of the
    product is the product of per-branch posterior means.
    """
    return marginal_loglik(tree, x_row, counts.posterior_mean(), gain_node, q)


def backward_table(tree: PhyloTree, x_row, theta, gain_node: int, q: float) -> BackwardTable:
    """Materialized backward pass over the gain clade."""
    q = check_error_rate(q)
    theta = check_loss_probs(tree, theta)
    td = tree_data(tree)
    x, _ = pack_profile(tree, x_row)
    n1 = td.n_nodes + 1
    b0 = np.zeros(n1)
    b1 = np.zeros(n1)
    ls = np.zeros(n1)
    ok = _kernels.backward_fill(theta, x, gain_node, q, td.post, td.post_pos,
                                td.sub_start, td.child_ptr, td.child_list,
                                td.is_leaf, b0, b1, ls)
    return BackwardTable(gain_node, b0, b1, ls, bool(ok))


def sample_history(tree: PhyloTree, x_row, loss_probs, gain_node: int,
                   q: float, rng: np.random.Generator) -> HiddenHistory:
    """Exact conditional draw of a hidden history given per-branch loss probs
    (posterior transition means when a gene joins an existing module)."""
    q = check_error_rate(q)
    theta = check_loss_probs(tree, loss_probs)
    td = tree_data(tree)
    x, _ = pack_profile(tree, x_row)
    u = rng.random(td.n_nodes + 1)
    h, ok = _kernels.sample_history_kernel(
        theta, x, gain_node, q, u, td.post, td.post_pos, td.sub_start,
        td.child_ptr, td.child_list, td.is_leaf, td.parent,
    )
    if not ok:
        raise InputError(
            "profile has zero probability under these parameters; "
            "cannot sample a history"
        )
    return HiddenHistory(states=h, gain_node=gain_node)
