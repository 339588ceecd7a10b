"""Estimation of per-gene gain nodes and the genome-wide null loss model.

A three-step Gibbs chain alternates (1) drawing each gene's gain node from
its exact discrete posterior under the current null loss vector, (2) drawing
hidden histories, and (3) drawing the shared null loss vector from its
conjugate product-Beta conditional pooled over all genes. The reported gain
nodes are per-gene posterior modes and the null vector is a Rao-Blackwellized
average; both are then frozen and treated as known by partitioning and
expansion, which keeps those steps cheap and is warranted because gain nodes
are typically identified with near certainty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from phyloecm import _kernels
from phyloecm.errors import InputError
from phyloecm.profiles import ProfileMatrix
from phyloecm.rng import derive_rng
from phyloecm.tree import PhyloTree, parse_newick
from phyloecm.treehmm import (
    DEFAULT_BETA_PRIOR,
    DEFAULT_ERROR_RATE,
    check_error_rate,
    check_loss_probs,
    pack_profile,
    pack_profiles,
    tree_data,
)

NULL_THETA_INIT = 0.03
DEFAULT_NULL_SWEEPS = 500


@dataclass
class NullModel:
    """Frozen preprocessing output: null loss vector plus per-gene gain nodes."""

    tree: PhyloTree
    theta0: np.ndarray  # float64, length n_nodes+1
    lambdas: dict[str, int]
    no_signal: tuple[str, ...] = ()
    map_mass: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    sweeps: int = DEFAULT_NULL_SWEEPS
    burn_in: float = 0.2
    q: float = DEFAULT_ERROR_RATE
    beta_prior: tuple[float, float] = DEFAULT_BETA_PRIOR

    def lambda_for(self, gene: str) -> int:
        try:
            return self.lambdas[gene]
        except KeyError:
            raise InputError(f"gene {gene!r} has no estimated gain node") from None


def gain_posterior(tree: PhyloTree, x_row, theta0, q: float) -> np.ndarray:
    """Exact posterior over gain nodes 1..n_nodes given the null loss vector
    (uniform prior over nodes). Entry 0 of the returned vector is unused."""
    q = check_error_rate(q)
    theta0 = check_loss_probs(tree, theta0)
    td = tree_data(tree)
    x, ones_cum = pack_profile(tree, x_row)
    ll = _kernels.all_gain_logliks(
        theta0, x, q, td.post, td.post_pos, td.sub_start, td.child_ptr,
        td.child_list, td.is_leaf, ones_cum, td.leaves_cum,
        int(ones_cum[-1]), tree.n_leaves,
    )
    ll = ll[1:]
    m = ll.max()
    if not np.isfinite(m):
        raise InputError("profile impossible under every gain node")
    w = np.exp(ll - m)
    w /= w.sum()
    out = np.zeros(tree.n_nodes + 1)
    out[1:] = w
    return out


def estimate_null(matrix: ProfileMatrix, tree: PhyloTree, *,
                  beta_prior: tuple[float, float] = DEFAULT_BETA_PRIOR,
                  q: float = DEFAULT_ERROR_RATE,
                  sweeps: int = DEFAULT_NULL_SWEEPS,
                  burn_in: float = 0.2,
                  seed: int = 0) -> NullModel:
    """Run the null-model Gibbs chain over all genes of the matrix."""
    if matrix.n_genes == 0:
        raise InputError("no genes to preprocess")
    if matrix.species_ids != tree.leaf_labels:
        raise InputError("profile species order does not match the tree leaves")
    if sweeps < 1:
        raise InputError("need at least one sweep")
    q = check_error_rate(q)
    a, b = beta_prior
    td = tree_data(tree)
    n1 = tree.n_nodes + 1
    xs, ones_cum = pack_profiles(tree, matrix.cells)
    total_ones = ones_cum[:, -1].astype(int)
    n = matrix.n_genes

    scan = sorted(range(n), key=lambda i: matrix.gene_ids[i])
    rngs = [derive_rng(seed, "null-gene", g) for g in matrix.gene_ids]
    theta_rng = derive_rng(seed, "null-theta")

    theta0 = np.full(n1, NULL_THETA_INIT)
    theta0[0] = 0.0
    lambdas = np.full(n, tree.root, dtype=np.int32)
    g01 = np.zeros((n, n1), dtype=np.int64)
    g11 = np.zeros((n, n1), dtype=np.int64)
    kept_from = int(np.floor(burn_in * sweeps))
    if kept_from >= sweeps:
        kept_from = sweeps - 1
    lam_counts = np.zeros((n, n1), dtype=np.int64)
    theta_hat_acc = np.zeros(n1)
    n_kept = 0
    branch = np.arange(1, n1) != tree.root

    for sweep in range(sweeps):
        # step 1: gain nodes from their exact discrete conditionals
        for i in scan:
            ll = _kernels.all_gain_logliks(
                theta0, xs[i], q, td.post, td.post_pos, td.sub_start,
                td.child_ptr, td.child_list, td.is_leaf, ones_cum[i],
                td.leaves_cum, int(total_ones[i]), tree.n_leaves,
            )[1:]
            m = ll.max()
            w = np.exp(ll - m)
            w /= w.sum()
            u = rngs[i].random()
            lambdas[i] = 1 + int(
                min(np.searchsorted(np.cumsum(w), u, side="right"), n1 - 2)
            )
        # step 2: hidden histories given the gain nodes
        for i in scan:
            u = rngs[i].random(n1)
            h, ok = _kernels.sample_history_kernel(
                theta0, xs[i], int(lambdas[i]), q, u, td.post, td.post_pos,
                td.sub_start, td.child_ptr, td.child_list, td.is_leaf, td.parent,
            )
            if not ok:
                continue  # q=0 corner: keep the previous history
            g01[i] = 0
            g11[i] = 0
            _kernels.add_history_counts(h, td.parent, g01[i], g11[i], 1)
        # step 3: the shared loss vector from its product-Beta conditional
        tot01 = g01.sum(axis=0)
        tot11 = g11.sum(axis=0)
        draws = theta_rng.beta(a + tot01[1:], b + tot11[1:])
        theta0[1:] = draws
        theta0[tree.root] = 0.0
        if sweep >= kept_from:
            n_kept += 1
            lam_counts[np.arange(n), lambdas] += 1
            theta_hat_acc[1:] += (a + tot01[1:]) / (a + b + tot01[1:] + tot11[1:])

    theta_hat = np.zeros(n1)
    theta_hat[1:] = theta_hat_acc[1:] / n_kept
    theta_hat[tree.root] = 0.0
    lam_map: dict[str, int] = {}
    map_mass: dict[str, float] = {}
    no_signal: list[str] = []
    all_zero = matrix.cells.sum(axis=1) == 0
    for i, gene in enumerate(matrix.gene_ids):
        lam_map[gene] = int(np.argmax(lam_counts[i, 1:]) + 1)
        map_mass[gene] = float(lam_counts[i, 1:].max() / n_kept)
        if all_zero[i]:
            lam_map[gene] = tree.root
            no_signal.append(gene)
    # unused root/branch-free slots stay well-defined for downstream consumers
    np.clip(theta_hat, 0.0, 1.0, out=theta_hat)
    return NullModel(
        tree=tree,
        theta0=theta_hat,
        lambdas=lam_map,
        no_signal=tuple(no_signal),
        map_mass=map_mass,
        seed=seed,
        sweeps=sweeps,
        burn_in=burn_in,
        q=q,
        beta_prior=beta_prior,
    )


# -- serialization ----------------------------------------------------------------


def null_model_to_dict(model: NullModel) -> dict:
    from phyloecm.tree import render_newick

    root = model.tree.root
    return {
        "newick": render_newick(model.tree, with_lengths=False),
        "theta0": {
            str(s): float(model.theta0[s])
            for s in range(1, model.tree.n_nodes + 1)
            if s != root
        },
        "lambdas": {g: int(v) for g, v in sorted(model.lambdas.items())},
        "no_signal": sorted(model.no_signal),
        "map_mass": {g: round(float(v), 6) for g, v in sorted(model.map_mass.items())},
        "config": {
            "sweeps": model.sweeps,
            "burn_in": model.burn_in,
            "q": model.q,
            "beta_prior": list(model.beta_prior),
        },
        "seed": model.seed,
    }


def null_model_from_dict(payload: dict) -> NullModel:
    tree = parse_newick(payload["newick"])
    theta0 = np.zeros(tree.n_nodes + 1)
    for key, val in payload["theta0"].items():
        theta0[int(key)] = float(val)
    cfg = payload.get("config", {})
    return NullModel(
        tree=tree,
        theta0=theta0,
        lambdas={g: int(v) for g, v in payload["lambdas"].items()},
        no_signal=tuple(payload.get("no_signal", ())),
        map_mass={g: float(v) for g, v in payload.get("map_mass", {}).items()},
        seed=int(payload.get("seed", 0)),
        sweeps=int(cfg.get("sweeps", DEFAULT_NULL_SWEEPS)),
        burn_in=float(cfg.get("burn_in", 0.2)),
        q=float(cfg.get("q", DEFAULT_ERROR_RATE)),
        beta_prior=tuple(cfg.get("beta_prior", DEFAULT_BETA_PRIOR)),  # type: ignore[arg-type]
    )


def write_null_models(models: list[NullModel], path: str | Path) -> None:
    payload = {
        "format": "phyloecm-null-model",
        "version": 1,
        "trees": [null_model_to_dict(m) for m in models],
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_null_models(path: str | Path) -> list[NullModel]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc
    if payload.get("format") != "phyloecm-null-model":
        raise InputError(f"{path}: not a null-model file")
    return [null_model_from_dict(entry) for entry in payload["trees"]]
