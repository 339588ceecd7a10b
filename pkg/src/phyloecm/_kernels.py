"""Compiled inner loops for the tree-HMM dynamic programs.

Everything here operates on flat arrays prepared by ``treehmm.TreeData``:
node ids are 1-based, slot 0 is unused, ``postorder`` lists all nodes with
children before parents, and each clade occupies a contiguous postorder
block ``[sub_start[s], post_pos[s]]``.

The backward pass runs in linear space with per-node max-rescaling and a
separate accumulated log-scale, so likelihoods stay exact while never
underflowing even for hundreds of species. Zero likelihoods (possible when
the observation error rate is 0) are propagated as -inf, never raised.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def backward_fill(theta, x, lam, q, post, post_pos, sub_start,
                  child_ptr, child_list, is_leaf, b0, b1, ls):
    """Scaled subtree likelihoods for every node in the clade of ``lam``.

    After the call, Pr(observed leaves below s | state h at s) equals
    ``bh[s] * exp(ls[s])``. Returns False when both states of some node are
    impossible (total likelihood 0).
    """
    lo = sub_start[lam]
    hi = post_pos[lam]
    for p in range(lo, hi + 1):
        s = post[p]
        if is_leaf[s]:
            if x[s] == 1:
                b0[s] = q
                b1[s] = 1.0 - q
            else:
                b0[s] = 1.0 - q
                b1[s] = q
            ls[s] = 0.0
        else:
            f0 = 1.0
            f1 = 1.0
            acc = 0.0
            for ci in range(child_ptr[s], child_ptr[s + 1]):
                c = child_list[ci]
                t = theta[c]
                f0 *= b0[c]
                f1 *= t * b0[c] + (1.0 - t) * b1[c]
                acc += ls[c]
            m = f0 if f0 >= f1 else f1
            if m <= 0.0:
                return False
            b0[s] = f0 / m
            b1[s] = f1 / m
            ls[s] = acc + np.log(m)
    return True


@njit(cache=True)
def outside_zero_loglik(lam, q, post_pos, sub_start, ones_cum, leaves_cum,
                        total_ones, total_leaves):
    """Log-probability of the observed leaves outside the clade of ``lam``,
    emitted from hidden state 0 (absent everywhere the gene never arose)."""
    lo = sub_start[lam]
    hi = post_pos[lam]
    ones_in = ones_cum[hi + 1] - ones_cum[lo]
    leaves_in = leaves_cum[hi + 1] - leaves_cum[lo]
    ones_out = total_ones - ones_in
    zeros_out = (total_leaves - leaves_in) - ones_out
    out = 0.0
    if ones_out > 0:
        if q <= 0.0:
            return -np.inf
        out += ones_out * np.log(q)
    if zeros_out > 0:
        out += zeros_out * np.log(1.0 - q)
    return out


@njit(cache=True)
def gain_loglik(theta, x, lam, q, post, post_pos, sub_start, child_ptr,
                child_list, is_leaf, ones_cum, leaves_cum, total_ones,
                total_leaves):
    """log Pr(profile | per-branch loss probs, gain at ``lam``)."""
    n1 = theta.shape[0]
    b0 = np.empty(n1)
    b1 = np.empty(n1)
    ls = np.empty(n1)
    ok = backward_fill(theta, x, lam, q, post, post_pos, sub_start,
                       child_ptr, child_list, is_leaf, b0, b1, ls)
    if not ok or b1[lam] <= 0.0:
        return -np.inf
    out = outside_zero_loglik(lam, q, post_pos, sub_start, ones_cum,
                              leaves_cum, total_ones, total_leaves)
    if out == -np.inf:
        return -np.inf
    return np.log(b1[lam]) + ls[lam] + out


@njit(cache=True)
def all_gain_logliks(theta, x, q, post, post_pos, sub_start, child_ptr,
                     child_list, is_leaf, ones_cum, leaves_cum, total_ones,
                     total_leaves):
    """log Pr(profile | gain at s) for every node s, in one bottom-up pass."""
    n1 = theta.shape[0]
    b0 = np.empty(n1)
    b1 = np.empty(n1)
    ls = np.empty(n1)
    out = np.full(n1, -np.inf)
    for p in range(post.shape[0]):
        s = post[p]
        if is_leaf[s]:
            if x[s] == 1:
                b0[s] = q
                b1[s] = 1.0 - q
            else:
                b0[s] = 1.0 - q
                b1[s] = q
            ls[s] = 0.0
        else:
            f0 = 1.0
            f1 = 1.0
            acc = 0.0
            for ci in range(child_ptr[s], child_ptr[s + 1]):
                c = child_list[ci]
                t = theta[c]
                f0 *= b0[c]
                f1 *= t * b0[c] + (1.0 - t) * b1[c]
                acc += ls[c]
            m = f0 if f0 >= f1 else f1
            if m <= 0.0:
                b0[s] = 0.0
                b1[s] = 0.0
                ls[s] = 0.0
                continue
            b0[s] = f0 / m
            b1[s] = f1 / m
            ls[s] = acc + np.log(m)
    for p in range(post.shape[0]):
        s = post[p]
        if b1[s] <= 0.0:
            continue
        Ext = outside_zero_loglik(s, q, post_pos, sub_start, ones_cum,
                                  leaves_cum, total_ones, total_leaves)
        if Ext == -np.inf:
            continue
        out[s] = np.log(b1[s]) + ls[s] + Ext
    return out


@njit(cache=True)
def gain_loglik_multi(thetas, x, lam, q, post, post_pos, sub_start, child_ptr,
                      child_list, is_leaf, ones_cum, leaves_cum, total_ones,
                      total_leaves):
    """gain_loglik evaluated for every row of a (M, n1) loss-prob matrix."""
    m = thetas.shape[0]
    out = np.empty(m)
    for i in range(m):
        out[i] = gain_loglik(thetas[i], x, lam, q, post, post_pos, sub_start,
                             child_ptr, child_list, is_leaf, ones_cum,
                             leaves_cum, total_ones, total_leaves)
    return out


@njit(cache=True)
def draw_history_from_tables(theta, lam, u, post, post_pos, sub_start,
                             parent, b0, b1, h):
    """Top-down conditional draw given filled backward tables.

    ``u`` supplies one uniform per node; the walk is reverse postorder over
    the clade so parents are decided before children. Absence is absorbing.
    """
    lo = sub_start[lam]
    hi = post_pos[lam]
    h[lam] = 1
    for p in range(hi - 1, lo - 1, -1):
        s = post[p]
        if h[parent[s]] == 0:
            h[s] = 0
        else:
            t = theta[s]
            p1 = b1[s] * (1.0 - t)
            tot = b0[s] * t + p1
            if tot <= 0.0:
                h[s] = 0
            else:
                h[s] = 1 if u[s] * tot < p1 else 0


@njit(cache=True)
def sample_history_kernel(theta, x, lam, q, u, post, post_pos, sub_start,
                          child_ptr, child_list, is_leaf, parent):
    """Draw a hidden history given loss probs; returns (states, feasible)."""
    n1 = theta.shape[0]
    b0 = np.empty(n1)
    b1 = np.empty(n1)
    ls = np.empty(n1)
    h = np.zeros(n1, dtype=np.int8)
    ok = backward_fill(theta, x, lam, q, post, post_pos, sub_start,
                       child_ptr, child_list, is_leaf, b0, b1, ls)
    if not ok or b1[lam] <= 0.0:
        return h, False
    draw_history_from_tables(theta, lam, u, post, post_pos, sub_start,
                             parent, b0, b1, h)
    return h, True


@njit(cache=True)
def add_history_counts(h, parent, c01, c11, sign):
    """Accumulate per-branch loss/keep transition counts of one history."""
    for s in range(1, parent.shape[0]):
        ps = parent[s]
        if ps != 0 and h[ps] == 1:
            if h[s] == 1:
                c11[s] += sign
            else:
                c01[s] += sign


@njit(cache=True)
def _theta_posterior_mean(tot01, tot11, a, b, theta):
    for s in range(1, theta.shape[0]):
        theta[s] = (a + tot01[s]) / (a + b + tot01[s] + tot11[s])


@njit(cache=True)
def _resample_gene(g, xb, lams, a, b, q, g01, g11, tot01, tot11,
                   theta, b0, b1, ls, h, post, post_pos, sub_start,
                   child_ptr, child_list, is_leaf, parent):
    """One leave-one-out history refresh inside a fixed gene block.

    The gene's own counts must already be excluded from the totals. Draws
    come from numba's np.random state, seeded once per kernel entry.
    """
    _theta_posterior_mean(tot01, tot11, a, b, theta)
    lam = lams[g]
    x = xb[g]
    ok = backward_fill(theta, x, lam, q, post, post_pos, sub_start,
                       child_ptr, child_list, is_leaf, b0, b1, ls)
    if not ok or b1[lam] <= 0.0:
        # impossible under q=0 corner cases: leave history and counts alone
        return False
    lo = sub_start[lam]
    hi = post_pos[lam]
    for s in range(h.shape[0]):
        h[s] = 0
    h[lam] = 1
    for p in range(hi - 1, lo - 1, -1):
        s = post[p]
        if h[parent[s]] == 0:
            h[s] = 0
        else:
            t = theta[s]
            p1 = b1[s] * (1.0 - t)
            tot = b0[s] * t + p1
            if tot <= 0.0:
                h[s] = 0
            else:
                h[s] = 1 if np.random.random() * tot < p1 else 0
    for s in range(1, parent.shape[0]):
        g01[g, s] = 0
        g11[g, s] = 0
        ps = parent[s]
        if ps != 0 and h[ps] == 1:
            if h[s] == 1:
                g11[g, s] = 1
            else:
                g01[g, s] = 1
        tot01[s] += g01[g, s]
        tot11[s] += g11[g, s]
    return True


@njit(cache=True)
def fixed_block_draws(xb, lams, a, b, q, n_sweeps, keep_from, seed,
                      post, post_pos, sub_start, child_ptr, child_list,
                      is_leaf, parent):
    """Gibbs draws of hidden histories for a gene block with shared loss probs.

    Used with ECM membership held fixed: repeatedly refreshes each gene's
    history conditional on the others (loss probs integrated out against
    their conjugate posterior) and records the pooled per-branch transition
    counts of every kept sweep. Returns (kept01, kept11), each of shape
    (n_sweeps - keep_from, n_nodes + 1).
    """
    np.random.seed(seed)
    m = xb.shape[0]
    n1 = parent.shape[0]
    g01 = np.zeros((m, n1), dtype=np.int64)
    g11 = np.zeros((m, n1), dtype=np.int64)
    tot01 = np.zeros(n1, dtype=np.int64)
    tot11 = np.zeros(n1, dtype=np.int64)
    theta = np.empty(n1)
    b0 = np.empty(n1)
    b1 = np.empty(n1)
    ls = np.empty(n1)
    h = np.zeros(n1, dtype=np.int8)
    n_kept = n_sweeps - keep_from
    kept01 = np.zeros((n_kept, n1), dtype=np.int64)
    kept11 = np.zeros((n_kept, n1), dtype=np.int64)
    hist = np.zeros((m, n1), dtype=np.int8)
    # progressive initialization: each gene conditioned on those drawn so far
    for g in range(m):
        for s in range(n1):
            h[s] = 0
        _resample_gene(g, xb, lams, a, b, q, g01, g11, tot01, tot11,
                       theta, b0, b1, ls, h, post, post_pos, sub_start,
                       child_ptr, child_list, is_leaf, parent)
        for s in range(n1):
            hist[g, s] = h[s]
    for sweep in range(n_sweeps):
        for g in range(m):
            for s in range(1, n1):
                tot01[s] -= g01[g, s]
                tot11[s] -= g11[g, s]
            for s in range(n1):
                h[s] = hist[g, s]
            ok = _resample_gene(g, xb, lams, a, b, q, g01, g11, tot01, tot11,
                                theta, b0, b1, ls, h, post, post_pos,
                                sub_start, child_ptr, child_list, is_leaf,
                                parent)
            if ok:
                for s in range(n1):
                    hist[g, s] = h[s]
            else:
                # restore the previous contribution
                for s in range(1, n1):
                    tot01[s] += g01[g, s]
                    tot11[s] += g11[g, s]
        if sweep >= keep_from:
            k = sweep - keep_from
            for s in range(1, n1):
                kept01[k, s] = tot01[s]
                kept11[k, s] = tot11[s]
    return kept01, kept11
