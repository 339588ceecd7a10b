"""Independent brute-force oracles used by the test suite.

Everything here avoids the package's dynamic programming paths on purpose:
marginals come from explicit enumeration over hidden histories, integrals
from per-branch quadrature or Beta-function closed forms.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import betaln, logsumexp, roots_jacobi

from phyloecm.tree import PhyloTree, subtree_nodes


def valid_histories(tree: PhyloTree, gain_node: int) -> list[np.ndarray]:
    """All state vectors with presence at the gain node, absence outside its
    clade, and absence absorbing along every path."""
    inside = sorted(subtree_nodes(tree, gain_node))
    free = [s for s in inside if s != gain_node]
    out = []
    for assign in itertools.product([0, 1], repeat=len(free)):
        h = np.zeros(tree.n_nodes + 1, dtype=np.int8)
        h[gain_node] = 1
        for s, v in zip(free, assign):
            h[s] = v
        ok = True
        for s in free:
            if h[s] == 1 and h[tree.parent[s]] == 0:
                ok = False
                break
        if ok:
            out.append(h)
    return out


def emission_prob(x_row, h, q: float) -> float:
    S = len(x_row)
    hl = h[1 : S + 1]
    mism = int(np.count_nonzero(hl != np.asarray(x_row)))
    return (q ** mism) * ((1 - q) ** (S - mism))


def history_prior_prob(tree: PhyloTree, h, gain_node: int, theta) -> float:
    """prod over branches below the gain of the transition probability."""
    p = 1.0
    for s in sorted(subtree_nodes(tree, gain_node)):
        if s == gain_node:
            continue
        hp = h[tree.parent[s]]
        if hp == 0:
            if h[s] != 0:
                return 0.0
            continue
        p *= theta[s] if h[s] == 0 else (1.0 - theta[s])
    return p


def enum_marginal_loglik(tree: PhyloTree, x_row, theta, gain_node: int,
                         q: float) -> float:
    """Marginal likelihood by full enumeration of hidden histories."""
    terms = []
    for h in valid_histories(tree, gain_node):
        p = history_prior_prob(tree, h, gain_node, theta) * emission_prob(x_row, h, q)
        if p > 0:
            terms.append(math.log(p))
    if not terms:
        return -math.inf
    return float(logsumexp(terms))


def branch_transition_counts(tree: PhyloTree, histories) -> tuple[np.ndarray, np.ndarray]:
    n1 = tree.n_nodes + 1
    c01 = np.zeros(n1, dtype=np.int64)
    c11 = np.zeros(n1, dtype=np.int64)
    for h in histories:
        for s in range(1, tree.n_nodes + 1):
            p = tree.parent[s]
            if p != 0 and h[p] == 1:
                if h[s] == 1:
                    c11[s] += 1
                else:
                    c01[s] += 1
    return c01, c11


def beta_moment_quadrature(u: int, v: int, a: float, b: float, n_points: int = 24) -> float:
    """integral of t^u (1-t)^v over a Beta(a, b) density via Gauss-Jacobi.

    The Jacobi weight on [-1,1] with alpha=b-1, beta=a-1 matches the Beta
    density kernel after t = (x+1)/2, so polynomial factors integrate
    exactly.
    """
    nodes, weights = roots_jacobi(n_points, b - 1.0, a - 1.0)
    t = (nodes + 1.0) / 2.0
    vals = (t ** u) * ((1.0 - t) ** v)
    raw = float(np.sum(weights * vals))
    norm = 2.0 ** (a + b - 1.0) * math.exp(betaln(a, b))
    return raw / norm


def enum_expected_marginal_loglik(tree: PhyloTree, x_row, gain_node: int,
                                  q: float, a: float, b: float,
                                  c01=None, c11=None) -> float:
    """Loss probs integrated against their Beta posteriors: enumeration over
    histories with an independent per-branch quadrature for each factor."""
    n1 = tree.n_nodes + 1
    c01 = np.zeros(n1, dtype=np.int64) if c01 is None else c01
    c11 = np.zeros(n1, dtype=np.int64) if c11 is None else c11
    total = 0.0
    for h in valid_histories(tree, gain_node):
        term = emission_prob(x_row, h, q)
        if term == 0.0:
            continue
        for s in sorted(subtree_nodes(tree, gain_node)):
            if s == gain_node:
                continue
            hp = h[tree.parent[s]]
            if hp == 0:
                if h[s] != 0:
                    term = 0.0
                    break
                continue
            u, v = (1, 0) if h[s] == 0 else (0, 1)
            term *= beta_moment_quadrature(
                u, v, a + float(c01[s]), b + float(c11[s])
            )
        total += term
    if total <= 0.0:
        return -math.inf
    return math.log(total)


def enum_joint_block_loglik(tree: PhyloTree, rows, gain_nodes, q: float,
                            a: float, b: float) -> float:
    """Exact log marginal of a gene block sharing one loss-prob vector:
    enumeration over joint histories with per-branch Beta-function integrals."""
    hist_lists = [valid_histories(tree, lam) for lam in gain_nodes]
    log_total = -math.inf
    for combo in itertools.product(*hist_lists):
        w = 0.0
        dead = False
        for x_row, h in zip(rows, combo):
            e = emission_prob(x_row, h, q)
            if e == 0.0:
                dead = True
                break
            w += math.log(e)
        if dead:
            continue
        c01, c11 = branch_transition_counts(tree, combo)
        for s in range(1, tree.n_nodes + 1):
            if s == tree.root:
                continue
            if c01[s] or c11[s]:
                w += betaln(a + c01[s], b + c11[s]) - betaln(a, b)
        log_total = np.logaddexp(log_total, w)
    return float(log_total)


def pair_counting_ari(labels_a, labels_b) -> float:
    """Adjusted Rand index straight from pair agreement counts."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    n = a.size
    n00 = n01 = n10 = n11 = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_a = a[i] == a[j]
            same_b = b[i] == b[j]
            if same_a and same_b:
                n11 += 1
            elif same_a:
                n10 += 1
            elif same_b:
                n01 += 1
            else:
                n00 += 1
    total = n11 + n10 + n01 + n00
    if total == 0:
        return 1.0
    expected = (n11 + n10) * (n11 + n01) / total
    max_index = 0.5 * ((n11 + n10) + (n11 + n01))
    if max_index == expected:
        return 1.0
    return float((n11 - expected) / (max_index - expected))
