import numpy as np
import pytest

from phyloecm import dpm, expansion, preprocess
from phyloecm.errors import InputError
from phyloecm.profiles import ProfileMatrix
from phyloecm.tree import parse_newick


def make_matrix(rows, genes=None, species=("A", "B", "C")):
    if genes is None:
        genes = tuple(f"g{i+1:02d}" for i in range(len(rows)))
    return ProfileMatrix(tuple(genes), tuple(species), np.asarray(rows, dtype=np.uint8))


def null_for(tree, lambdas, theta=0.03, no_signal=()):
    n1 = tree.n_nodes + 1
    theta0 = np.full(n1, theta)
    theta0[0] = 0.0
    theta0[tree.root] = 0.0
    return preprocess.NullModel(tree=tree, theta0=theta0, lambdas=dict(lambdas),
                                no_signal=tuple(no_signal))


def assignment_for(tree, gene_ids, labels, theta_by_ecm):
    return dpm.EcmAssignment(
        gene_ids=tuple(gene_ids),
        labels=np.asarray(labels, dtype=np.int32),
        phi={k: 1.0 for k in theta_by_ecm},
        theta_hat=theta_by_ecm,
        map_score=0.0,
    )


class TestLlrScore:
    def test_identical_models_score_zero(self, three_leaf_tree):
        t = three_leaf_tree
        theta = np.full(t.n_nodes + 1, 0.1)
        x = np.array([1, 0, 1], dtype=np.uint8)
        assert expansion.llr_score(t, x, theta, theta, t.root, 0.01) == 0.0

    def test_antisymmetric_in_the_two_models(self, three_leaf_tree):
        t = three_leaf_tree
        theta_k = np.full(t.n_nodes + 1, 0.4)
        theta_0 = np.full(t.n_nodes + 1, 0.05)
        x = np.array([1, 0, 0], dtype=np.uint8)
        a = expansion.llr_score(t, x, theta_k, theta_0, t.root, 0.01)
        b = expansion.llr_score(t, x, theta_0, theta_k, t.root, 0.01)
        assert a == pytest.approx(-b)
        assert np.isfinite(a)

    def test_matching_model_scores_positive(self, three_leaf_tree):
        t = three_leaf_tree
        theta_k = np.full(t.n_nodes + 1, 0.03)
        theta_k[3] = 0.9  # module loses C
        theta_0 = np.full(t.n_nodes + 1, 0.03)
        x = np.array([1, 1, 0], dtype=np.uint8)
        assert expansion.llr_score(t, x, theta_k, theta_0, t.root, 0.01) > 0

    def test_dimension_mismatch(self, three_leaf_tree):
        t = three_leaf_tree
        with pytest.raises(InputError):
            expansion.llr_score(t, [1, 0, 1], np.zeros(6), np.zeros(5), t.root, 0.01)


class TestExpandEcm:
    def _fixture(self, three_leaf_tree):
        t = three_leaf_tree
        theta_k = np.full(t.n_nodes + 1, 0.03)
        theta_k[3] = 0.9
        members = assignment_for(t, ("m1", "m2"), [1, 1], {1: theta_k})
        lambdas = {"m1": t.root, "m2": t.root, "c1": t.root, "c2": t.root,
                   "c3": t.root, "z1": t.root}
        null = null_for(t, lambdas, no_signal=("z1",))
        return t, members, null

    def test_empty_candidates(self, three_leaf_tree):
        t, members, null = self._fixture(three_leaf_tree)
        report = expansion.expand_ecm(
            make_matrix([[1, 1, 0]], genes=("m1",)), members, null, 0.01
        )
        assert report.scores == {}
        assert report.ranked(1) == []
        assert report.skipped == {"m1": "input-set gene"}

    def test_matching_candidate_ranks_first(self, three_leaf_tree):
        t, members, null = self._fixture(three_leaf_tree)
        candidates = make_matrix(
            [[1, 1, 0], [1, 1, 1], [0, 1, 1]], genes=("c1", "c2", "c3")
        )
        report = expansion.expand_ecm(candidates, members, null, 0.01)
        ranked = report.ranked(1)
        assert ranked and ranked[0].gene == "c1"
        assert ranked[0].rank == 1
        assert all(e.llr > 0 for e in ranked)

    def test_no_signal_gene_skipped_with_reason(self, three_leaf_tree):
        t, members, null = self._fixture(three_leaf_tree)
        candidates = make_matrix([[0, 0, 0]], genes=("z1",))
        report = expansion.expand_ecm(candidates, members, null, 0.01)
        assert "z1" in report.skipped
        assert "no signal" in report.skipped["z1"]

    def test_candidate_order_irrelevant_ties_by_name(self, three_leaf_tree):
        t, members, null = self._fixture(three_leaf_tree)
        rows = [[1, 1, 0], [1, 1, 0], [1, 1, 1]]
        genes = ("cb", "ca", "cc")
        lambdas = dict(null.lambdas)
        lambdas.update({g: t.root for g in genes})
        null2 = null_for(t, lambdas)
        a = expansion.expand_ecm(make_matrix(rows, genes=genes), members, null2, 0.01)
        order = [1, 0, 2]
        b = expansion.expand_ecm(
            make_matrix([rows[i] for i in order],
                        genes=tuple(genes[i] for i in order)),
            members, null2, 0.01,
        )
        assert [e.gene for e in a.ranked(1)] == [e.gene for e in b.ranked(1)]
        # the two equal scorers are ordered by name
        assert [e.gene for e in a.ranked(1)][:2] == ["ca", "cb"]

    def test_threshold_infinity_empties_lists(self, three_leaf_tree):
        t, members, null = self._fixture(three_leaf_tree)
        candidates = make_matrix([[1, 1, 0]], genes=("c1",))
        report = expansion.expand_ecm(candidates, members, null, 0.01,
                                      threshold=float("inf"))
        assert report.ranked(1) == []
        assert report.scores  # matrix still reported

    def test_report_files(self, three_leaf_tree, tmp_path):
        t, members, null = self._fixture(three_leaf_tree)
        candidates = make_matrix([[1, 1, 0], [0, 1, 1]], genes=("c1", "c3"))
        report = expansion.expand_ecm(candidates, members, null, 0.01)
        expansion.write_expansion_reports(report, tmp_path)
        combined = (tmp_path / "expansion.tsv").read_text().splitlines()
        assert combined[0] == "gene\tecm\tllr\trank"
        assert len(combined) == 3
        per = (tmp_path / "expansion_ecm1.tsv").read_text().splitlines()
        assert per[1].startswith("c1\t1\t")

    def test_member_profile_self_consistency(self, three_leaf_tree):
        """A candidate identical to a member appears in the module's list
        whenever the member itself scores positive."""
        t, members, null = self._fixture(three_leaf_tree)
        member_row = np.array([1, 1, 0], dtype=np.uint8)
        self_llr = expansion.llr_score(t, member_row, members.theta_hat[1],
                                       null.theta0, t.root, 0.01)
        assert self_llr > 0
        twin = make_matrix([member_row], genes=("twin",))
        lambdas = dict(null.lambdas)
        lambdas["twin"] = t.root
        report = expansion.expand_ecm(twin, members, null_for(t, lambdas), 0.01)
        assert [e.gene for e in report.ranked(1)] == ["twin"]

    def test_species_mismatch(self, three_leaf_tree):
        t, members, null = self._fixture(three_leaf_tree)
        bad = make_matrix([[1, 0]], genes=("c1",), species=("A", "B"))
        with pytest.raises(InputError):
            expansion.expand_ecm(bad, members, null, 0.01)
