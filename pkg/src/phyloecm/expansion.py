"""Genome-wide candidate ranking against inferred modules.

Each candidate gene is scored per module by the log-likelihood ratio of the
module's estimated loss-prob vector against the genome-wide null vector,
both evaluated at the candidate's own preprocessed gain node. Positive-LLR
candidates form the module's expansion list.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from phyloecm.dpm import EcmAssignment
from phyloecm.errors import InputError
from phyloecm.preprocess import NullModel
from phyloecm.profiles import ProfileMatrix
from phyloecm.tree import PhyloTree
from phyloecm.treehmm import marginal_loglik


@dataclass(frozen=True)
class ExpansionEntry:
    gene: str
    ecm: int
    llr: float
    rank: int


@dataclass
class ExpansionReport:
    """Full LLR matrix plus the per-module positive lists (sorted, ranked)."""

    scores: dict[tuple[str, int], float]
    positives: dict[int, list[ExpansionEntry]]
    threshold: float
    skipped: dict[str, str]

    def ranked(self, ecm: int) -> list[ExpansionEntry]:
        return self.positives.get(ecm, [])


def llr_score(tree: PhyloTree, x_row, theta_k, theta0, gain_node: int,
              q: float) -> float:
    """log Pr(x | module loss probs) - log Pr(x | null loss probs)."""
    theta_k = np.asarray(theta_k, dtype=np.float64)
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta_k.shape != theta0.shape:
        raise InputError("module and null loss vectors differ in length")
    return marginal_loglik(tree, x_row, theta_k, gain_node, q) - marginal_loglik(
        tree, x_row, theta0, gain_node, q
    )


def expand_ecm(candidates: ProfileMatrix, assignment: EcmAssignment,
               null: NullModel, q: float, threshold: float = 0.0,
               map_fn=map) -> ExpansionReport:
    """Score every candidate against every module and build ranked lists.

    Genes already in the partition are excluded from candidacy, as are
    no-signal (all-absent) genes flagged by preprocessing. ``map_fn`` may be
    a parallel map; scores are reduced in fixed gene order regardless.
    """
    tree = null.tree
    if candidates.species_ids != tree.leaf_labels:
        raise InputError("candidate species order does not match the tree leaves")
    if assignment.theta_hat is None:
        raise InputError("assignment carries no loss-prob estimates")
    member_genes = set(assignment.gene_ids)
    no_signal = set(null.no_signal)
    ecm_ids = sorted(assignment.theta_hat)

    skipped: dict[str, str] = {}
    todo: list[tuple[str, np.ndarray, int]] = []
    for gene, row in zip(candidates.gene_ids, candidates.cells):
        if gene in member_genes:
            skipped[gene] = "input-set gene"
            continue
        if gene in no_signal:
            skipped[gene] = "no signal (all-absent profile)"
            continue
        todo.append((gene, row, null.lambda_for(gene)))

    def score_gene(item):
        gene, row, lam = item
        return [
            llr_score(tree, row, assignment.theta_hat[k], null.theta0, lam, q)
            for k in ecm_ids
        ]

    all_scores = list(map_fn(score_gene, todo))
    scores: dict[tuple[str, int], float] = {}
    for (gene, _, _), per_ecm in zip(todo, all_scores):
        for k, val in zip(ecm_ids, per_ecm):
            scores[(gene, k)] = float(val)

    positives: dict[int, list[ExpansionEntry]] = {}
    for k in ecm_ids:
        hits = [(gene, scores[(gene, k)]) for gene, _, _ in todo
                if scores[(gene, k)] > threshold]
        hits.sort(key=lambda gv: (-gv[1], gv[0]))
        positives[k] = [
            ExpansionEntry(gene=g, ecm=k, llr=v, rank=r + 1)
            for r, (g, v) in enumerate(hits)
        ]
    return ExpansionReport(scores=scores, positives=positives,
                           threshold=threshold, skipped=skipped)


def write_expansion_reports(report: ExpansionReport, out_dir: str | Path) -> None:
    """One combined TSV with the full matrix plus one positives file per module."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ecm_ids = sorted(report.positives)
    rank_of = {
        (e.gene, e.ecm): e.rank for k in ecm_ids for e in report.positives[k]
    }
    with (out_dir / "expansion.tsv").open("w", encoding="utf-8") as fh:
        fh.write("gene\tecm\tllr\trank\n")
        for (gene, k), llr in sorted(report.scores.items(),
                                     key=lambda kv: (kv[0][1], -kv[1], kv[0][0])):
            rank = rank_of.get((gene, k), 0)
            fh.write(f"{gene}\t{k}\t{llr:.10g}\t{rank if rank else 'NA'}\n")
    for k in ecm_ids:
        with (out_dir / f"expansion_ecm{k}.tsv").open("w", encoding="utf-8") as fh:
            fh.write("gene\tecm\tllr\trank\n")
            for e in report.positives[k]:
                fh.write(f"{e.gene}\t{e.ecm}\t{e.llr:.10g}\t{e.rank}\n")
