"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The long simulation-study
criteria (7 and 8) dominate the runtime; the whole suite fits well inside
the stated per-criterion budgets on a desktop-class machine.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.special import logsumexp

from phyloecm import dpm, expansion, preprocess, simbench, treehmm, treeuncertainty
from phyloecm.profiles import ProfileMatrix
from phyloecm.rng import derive_rng
from phyloecm.tree import TreeSet, parse_newick
from conftest import rand_tree_newick
import oracles


def _report(num, name, ok, detail, t0, budget_s):
    elapsed = time.time() - t0
    status = "PASS" if ok and elapsed < budget_s else "FAIL"
    print(f"[criterion {num:02d}] {status} {name}: {detail} "
          f"({elapsed:.1f}s / budget {budget_s:.0f}s)")
    assert ok, f"criterion {num} ({name}): {detail}"
    assert elapsed < budget_s, f"criterion {num} exceeded {budget_s}s ({elapsed:.1f}s)"


def make_matrix(rows, species=("A", "B", "C")):
    genes = tuple(f"g{i+1:02d}" for i in range(len(rows)))
    return ProfileMatrix(genes, tuple(species), np.asarray(rows, dtype=np.uint8))


def test_criterion_01_pruning_oracle():
    # warm the compiled kernels so the timing reflects steady-state cost
    t = parse_newick("(A,B);")
    treehmm.marginal_loglik(t, [1, 0], np.zeros(4), 3, 0.01)
    t0 = time.time()
    worst = 0.0
    q_choices = (0.0, 0.01, 0.1)
    for seed in range(200):
        rng = np.random.default_rng(seed)
        S = int(rng.integers(2, 6))
        tree = parse_newick(rand_tree_newick(rng, S))
        theta = np.zeros(tree.n_nodes + 1)
        theta[1:tree.n_nodes] = rng.uniform(0.0, 1.0, tree.n_nodes - 1)
        x = rng.integers(0, 2, S).astype(np.uint8)
        gain = int(rng.integers(1, tree.n_nodes + 1))
        q = float(q_choices[seed % 3])
        got = treehmm.marginal_loglik(tree, x, theta, gain, q)
        want = oracles.enum_marginal_loglik(tree, x, theta, gain, q)
        if math.isinf(want) or math.isinf(got):
            ok_inst = math.isinf(want) and math.isinf(got)
            assert ok_inst, f"seed {seed}: {got} vs {want}"
            continue
        rel = abs(got - want) / max(abs(want), 1e-300)
        worst = max(worst, rel)
    _report(1, "pruning matches enumeration", worst < 1e-12,
            f"200 instances, worst rel err {worst:.2e} < 1e-12", t0, 10)


def test_criterion_02_theta_integration_oracle():
    t0 = time.time()
    worst = 0.0
    checked = 0
    seed = 0
    while checked < 100:
        seed += 1
        rng = np.random.default_rng(10_000 + seed)
        S = int(rng.integers(2, 4))
        tree = parse_newick(rand_tree_newick(rng, S))
        if tree.n_branches > 4:
            continue
        a, b = 0.03, 0.97
        counts = treehmm.BetaCounts.empty(tree, a, b)
        counts.c01[1:tree.n_nodes] = rng.integers(0, 4, tree.n_nodes - 1)
        counts.c11[1:tree.n_nodes] = rng.integers(0, 4, tree.n_nodes - 1)
        x = rng.integers(0, 2, S).astype(np.uint8)
        gain = int(rng.integers(1, tree.n_nodes + 1))
        q = float((0.0, 0.01, 0.1)[seed % 3])
        got = treehmm.expected_marginal_loglik(tree, x, counts, gain, q)
        want = oracles.enum_expected_marginal_loglik(tree, x, gain, q, a, b,
                                                     counts.c01, counts.c11)
        if math.isinf(want) or math.isinf(got):
            assert math.isinf(want) and math.isinf(got)
            checked += 1
            continue
        worst = max(worst, abs(got - want) / max(abs(want), 1e-12))
        checked += 1
    _report(2, "loss-prob integration matches quadrature", worst < 1e-8,
            f"100 instances, worst rel err {worst:.2e} < 1e-8", t0, 30)


def test_criterion_03_history_sampler_law():
    t0 = time.time()
    tree = parse_newick("((A,B),C);")
    theta = np.zeros(tree.n_nodes + 1)
    theta[1:5] = [0.3, 0.2, 0.25, 0.15]
    q = 0.1
    x = np.array([1, 0, 1], dtype=np.uint8)
    exact = {}
    for h in oracles.valid_histories(tree, tree.root):
        p = (oracles.history_prior_prob(tree, h, tree.root, theta)
             * oracles.emission_prob(x, h, q))
        if p > 0:
            exact[tuple(h[1:])] = p
    z = sum(exact.values())
    exact = {k: v / z for k, v in exact.items()}
    n = 200_000
    rng = derive_rng(0, "criterion3")
    freq: dict = {}
    for _ in range(n):
        h = treehmm.sample_history(tree, x, theta, tree.root, q, rng)
        key = tuple(h.states[1:])
        freq[key] = freq.get(key, 0) + 1
    tv = 0.5 * sum(abs(exact.get(k, 0.0) - freq.get(k, 0) / n)
                   for k in set(exact) | set(freq))
    _report(3, "sampler matches exact conditional", tv < 0.01,
            f"TV {tv:.4f} < 0.01 at 200k draws", t0, 30)


def test_criterion_04_chib_estimator():
    t0 = time.time()
    tree = parse_newick("(A,B);")
    x = np.array([1, 0], dtype=np.uint8)
    pm = make_matrix([x, x], species=("A", "B"))
    lam = {g: 3 for g in pm.gene_ids}
    oracle = oracles.enum_joint_block_loglik(tree, [x, x], [3, 3], 0.01,
                                             0.03, 0.97)
    hits = 0
    worst = 0.0
    for rep in range(100):
        cfg = dpm.SamplerConfig(seed=rep, chib_samples=2000)
        got = dpm.chib_log_marginal(pm, tree, lam, cfg, m_samples=2000,
                                    seed_keys=("acc4", rep))
        rel = abs(got - oracle) / abs(oracle)
        worst = max(worst, rel)
        if rel < 0.05:
            hits += 1
    _report(4, "Chib marginal matches closed form", hits >= 95,
            f"{hits}/100 repeats within 5% (worst {worst:.3f})", t0, 120)


def test_criterion_05_chain_posterior():
    t0 = time.time()
    tree = parse_newick("((A,B),C);")
    q, a, b, alpha = 0.05, 0.3, 0.7, 1.0
    x1 = np.array([1, 0, 1], dtype=np.uint8)
    x2 = np.array([1, 0, 0], dtype=np.uint8)
    ml_t = oracles.enum_joint_block_loglik(tree, [x1, x2], [5, 5], q, a, b)
    ml_a = (oracles.enum_joint_block_loglik(tree, [x1], [5], q, a, b)
            + oracles.enum_joint_block_loglik(tree, [x2], [5], q, a, b))
    lw = np.array([math.log(1 / (1 + alpha)) + ml_t,
                   math.log(alpha / (1 + alpha)) + ml_a])
    p_together = float(np.exp(lw[0] - logsumexp(lw)))
    pm = make_matrix([x1, x2])
    cfg = dpm.SamplerConfig(alpha=alpha, beta_prior=(a, b), iterations=50_000,
                            burn_in=0.1, seed=7, error_rate=q)
    trace = dpm.gibbs_partition(pm, tree, {g: 5 for g in pm.gene_ids}, cfg)
    same = trace.labels[cfg.kept_from:, 0] == trace.labels[cfg.kept_from:, 1]
    tv = abs(same.mean() - p_together)
    _report(5, "chain matches enumerated posterior", tv < 0.02,
            f"TV {tv:.4f} < 0.02 (exact P(together)={p_together:.4f})", t0, 120)


def test_criterion_06_crp_normalization():
    t0 = time.time()

    def partitions(n):
        if n == 0:
            yield ()
            return
        for part in partitions(n - 1):
            k = max(part) if part else 0
            for lab in range(1, k + 2):
                yield part + (lab,)

    worst = 0.0
    for alpha in (0.5, 1.0, 2.0):
        total = sum(math.exp(dpm.crp_log_prior(np.array(p), alpha))
                    for p in partitions(4))
        worst = max(worst, abs(total - 1.0))
    _report(6, "CRP prior normalizes", worst < 1e-12,
            f"max |sum-1| = {worst:.2e} over alpha in {{0.5,1,2}}", t0, 10)


@pytest.fixture(scope="module")
def desk_treeset():
    return TreeSet((simbench.random_binary_tree(64, 11),))


def test_criterion_07_simulation_trend(desk_treeset):
    t0 = time.time()
    grid = simbench.grid_from_axes("tree_based", n_loss=(4, 10),
                                   p_loss=(0.6, 0.9), n_singletons=(0, 20))
    rows = simbench.run_benchmark(desk_treeset, grid, ("clime10", "hc_hamming"),
                                  replicates=20, seed=0)
    mean = {}
    for row in simbench.summarize_results(rows):
        mean[(row["n_loss"], row["p_loss"], row["n_singletons"],
              row["method"])] = row["mean_ari"]
    combos = list(itertools.product((4, 10), (0.6, 0.9)))
    dominance = all(
        mean[(nl, pl, ns, "clime10")] >= mean[(nl, pl, ns, "hc_hamming")]
        for nl, pl in combos for ns in (0, 20)
    )
    strong = mean[(10, 0.9, 0, "clime10")]
    # noise response, marginal over the signal axes
    c0 = np.mean([mean[(nl, pl, 0, "clime10")] for nl, pl in combos])
    c20 = np.mean([mean[(nl, pl, 20, "clime10")] for nl, pl in combos])
    h0 = np.mean([mean[(nl, pl, 0, "hc_hamming")] for nl, pl in combos])
    h20 = np.mean([mean[(nl, pl, 20, "hc_hamming")] for nl, pl in combos])
    ok = dominance and strong >= 0.8 and (h0 > h20) and (c0 - c20 < 0.1)
    _report(7, "simulation-study trend", ok,
            f"dominance={dominance}, strong-cell clime={strong:.3f}>=0.8, "
            f"hc noise drop {h0 - h20:+.3f}>0, clime noise drop {c0 - c20:+.3f}<0.1",
            t0, 1800)


def test_criterion_08_tree_uncertainty_benefit():
    t0 = time.time()
    treeset = simbench.random_tree_set(64, 10, seed=77)
    cfg = simbench.SimConfig(n_loss=10, p_loss=0.9, n_singletons=0)
    rows = simbench.run_benchmark(treeset, [cfg], ("clime10", "clime11"),
                                  replicates=20, seed=42)
    by_method: dict = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row["ari"])
    m10 = float(np.mean(by_method["clime10"]))
    m11 = float(np.mean(by_method["clime11"]))
    _report(8, "tree-set variant at least matches fixed tree", m11 >= m10,
            f"mean ARI 1.1={m11:.3f} >= 1.0={m10:.3f} over 20 replicates",
            t0, 2700)


def test_criterion_09_expansion_calibration(desk_treeset):
    t0 = time.time()
    tree = desk_treeset.trees[0]
    # a genome-like input: several modules plus background singletons, so the
    # pooled null is not dominated by any single module's signature
    sim_cfg = simbench.SimConfig(ecm_count=5, genes_per_ecm=10, n_loss=10,
                                 p_loss=0.9, n_singletons=10)
    ds = simbench.simulate_tree_based(desk_treeset, sim_cfg, derive_rng(0, "c9"))
    null = preprocess.estimate_null(ds.profiles, tree, sweeps=150, seed=1)
    cfg = dpm.SamplerConfig(iterations=100, chib_samples=300, seed=1,
                            alpha=float(np.sqrt(ds.profiles.n_genes)))
    trace = dpm.gibbs_partition(ds.profiles, tree, null.lambdas, cfg)
    assignment = dpm.map_assignment(trace, ds.profiles, tree, null.lambdas, cfg)
    sizes = {k: len(assignment.members(k)) for k in assignment.phi}
    k_star = max(sizes, key=lambda k: sizes[k])
    members = set(assignment.members(k_star))
    truth_ids = {ds.labels[i] for i, g in enumerate(ds.profiles.gene_ids)
                 if g in members}
    gain = ds.gain_nodes[sorted(truth_ids)[0] - 1]
    theta_k = np.clip(assignment.theta_hat[k_star], 1e-9, 1 - 1e-9)
    theta_0 = np.clip(null.theta0, 1e-9, 1 - 1e-9)
    q = cfg.error_rate
    rng = derive_rng(1, "c9-trials")

    def llr_of_simulated(theta_gen):
        x = simbench._simulate_gene(tree, theta_gen, gain, q, rng)
        if x.sum() == 0:
            return None  # no-signal profiles are excluded from ranking
        lam_hat = int(np.argmax(preprocess.gain_posterior(tree, x, theta_0, q)[1:]) + 1)
        return expansion.llr_score(tree, x, theta_k, theta_0, lam_hat, q)

    pos_hits = 0
    pos_total = 0
    while pos_total < 500:
        llr = llr_of_simulated(theta_k)
        if llr is None:
            continue
        pos_total += 1
        pos_hits += llr > 0
    null_hits = 0
    null_total = 0
    while null_total < 500:
        llr = llr_of_simulated(theta_0)
        if llr is None:
            continue
        null_total += 1
        null_hits += llr > 0
    ok = pos_hits >= 0.90 * pos_total and null_hits <= 0.20 * null_total
    _report(9, "expansion LLR calibration", ok,
            f"module-simulated positive {pos_hits}/500 (need >=450), "
            f"null-simulated positive {null_hits}/500 (need <=100)", t0, 300)


def test_criterion_10_gain_recovery(desk_treeset):
    t0 = time.time()
    tree = desk_treeset.trees[0]
    leaves_of = simbench._clade_leaf_counts(tree)
    eligible = [s for s in range(1, tree.n_nodes)
                if leaves_of[s] >= 8 and leaves_of[s] <= 48]
    rng = derive_rng(3, "c10")
    genes, rows, truth = [], [], []
    for i in range(200):
        gain = int(eligible[int(rng.integers(0, len(eligible)))])
        from phyloecm.tree import subtree_nodes

        # sparse independent losses: small patches at low probability, never a
        # whole daughter of the gain, so the surviving presences span (and
        # identify) the gain clade
        daughters = set(tree.children[gain])
        clade = sorted(s for s in subtree_nodes(tree, gain) - {gain}
                       if leaves_of[s] <= 4 and s not in daughters)
        n_loss = min(3, len(clade))
        losses = rng.choice(np.asarray(clade), size=n_loss, replace=False)
        theta = np.zeros(tree.n_nodes + 1)
        theta[losses] = 0.25
        genes.append(f"gene{i:03d}")
        rows.append(simbench._simulate_gene(tree, theta, gain, 0.01, rng))
        truth.append(gain)
    # genome-like background: broadly present genes keep the pooled null
    # honest, as the full reference-genome matrix does in practice
    twigs = [s for s in range(1, tree.n_nodes) if leaves_of[s] <= 3]
    for i in range(100):
        losses = rng.choice(np.asarray(twigs), size=4, replace=False)
        theta = np.zeros(tree.n_nodes + 1)
        theta[losses] = 0.15
        genes.append(f"bg{i:03d}")
        rows.append(simbench._simulate_gene(tree, theta, tree.root, 0.01, rng))
    pm = ProfileMatrix(tuple(genes), tree.leaf_labels,
                       np.vstack(rows).astype(np.uint8))
    model = preprocess.estimate_null(pm, tree, sweeps=150, seed=5)
    correct = sum(model.lambdas[g] == t for g, t in zip(genes[:200], truth))
    _report(10, "gain-branch recovery", correct >= 190,
            f"{correct}/200 correct (need >= 190 = 95%)", t0, 120)


def test_criterion_11_cli_determinism(tmp_path):
    t0 = time.time()
    from phyloecm import cli
    from phyloecm.profiles import write_profiles
    from phyloecm.tree import render_newick

    tree = simbench.random_binary_tree(12, 8)
    sim_cfg = simbench.SimConfig(ecm_count=2, genes_per_ecm=4, n_loss=3,
                                 p_loss=0.9, n_singletons=1,
                                 min_gain_leaves=8, max_loss_leaves=3)
    ds = simbench.simulate_tree_based(TreeSet((tree,)), sim_cfg,
                                      derive_rng(0, "c11"))
    (tmp_path / "tree.nwk").write_text(render_newick(tree, with_lengths=False) + "\n")
    write_profiles(ds.profiles, tmp_path / "profiles.tsv")

    def products(out_dir):
        return {
            p.relative_to(out_dir).as_posix(): p.read_bytes()
            for p in sorted(out_dir.rglob("*"))
            if p.is_file() and p.name != "manifest.json"
        }

    def run_everything(tag, threads):
        base = tmp_path / tag
        r = cli.main(["preprocess", "--profiles", str(tmp_path / "profiles.tsv"),
                      "--tree", str(tmp_path / "tree.nwk"),
                      "--out", str(base / "null"), "--sweeps", "25",
                      "--seed", "5", "--threads", str(threads)])
        assert r == 0
        r = cli.main(["partition", "--profiles", str(tmp_path / "profiles.tsv"),
                      "--tree", str(tmp_path / "tree.nwk"),
                      "--null-model", str(base / "null" / "null_model.json"),
                      "--iterations", "25", "--chib-samples", "50",
                      "--seed", "5", "--out", str(base / "part"),
                      "--threads", str(threads)])
        assert r == 0
        r = cli.main(["expand", "--partition", str(base / "part" / "partition.json"),
                      "--profiles", str(tmp_path / "profiles.tsv"),
                      "--null-model", str(base / "null" / "null_model.json"),
                      "--out", str(base / "exp"), "--threads", str(threads)])
        assert r == 0
        r = cli.main(["simulate", "--grid", "n_loss=3 p_loss=0.9 n_singletons=0",
                      "--replicates", "1", "--species", "12",
                      "--out", str(base / "sim"), "--seed", "5",
                      "--threads", str(threads)])
        assert r == 0
        r = cli.main(["benchmark", "--grid", "n_loss=3 p_loss=0.9 n_singletons=0",
                      "--replicates", "1", "--species", "12",
                      "--methods", "hc_hamming,hc_anticorr",
                      "--out", str(base / "bench"), "--seed", "5",
                      "--threads", str(threads)])
        assert r == 0
        return {
            f"{sub}/{name}": blob
            for sub in ("null", "part", "exp", "sim", "bench")
            for name, blob in products(base / sub).items()
        }

    first = run_everything("t1", 1)
    second = run_everything("t8", 8)
    same = first.keys() == second.keys() and all(
        first[k] == second[k] for k in first
    )
    _report(11, "CLI byte-identical across reruns and thread counts", same,
            f"{len(first)} product files compared across threads 1 vs 8",
            t0, 600)
