import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from phyloecm.profiles import ProfileMatrix
from phyloecm.tree import parse_newick


@pytest.fixture
def two_leaf_tree():
    return parse_newick("(A,B);")


@pytest.fixture
def three_leaf_tree():
    return parse_newick("((A,B),C);")


@pytest.fixture
def toy_matrix():
    """6 genes by 8 species; g1/g2 differ at one species, g4 == g6."""
    cells = np.array([
        [1, 1, 1, 1, 0, 0, 1, 1],  # g1
        [1, 1, 1, 1, 0, 0, 0, 1],  # g2: one flip vs g1
        [1, 0, 1, 0, 1, 0, 1, 0],  # g3
        [1, 1, 0, 0, 1, 1, 0, 0],  # g4
        [0, 1, 1, 1, 1, 0, 0, 1],  # g5
        [1, 1, 0, 0, 1, 1, 0, 0],  # g6: duplicate of g4
    ], dtype=np.uint8)
    genes = tuple(f"g{i}" for i in range(1, 7))
    species = tuple(f"sp{j}" for j in range(1, 9))
    return ProfileMatrix(genes, species, cells)


def rand_tree_newick(rng: np.random.Generator, n_leaves: int) -> str:
    labels = [f"L{i}" for i in range(1, n_leaves + 1)]
    items = [labels[i] for i in rng.permutation(n_leaves)]

    def build(group):
        if len(group) == 1:
            return group[0]
        k = int(rng.integers(1, len(group)))
        return f"({build(group[:k])},{build(group[k:])})"

    return build(items) + ";"


@pytest.fixture
def random_instance():
    """Factory: (tree, theta, x, gain, q) drawn from a seeded generator."""

    def make(seed: int, n_leaves: int | None = None, q_choices=(0.0, 0.01, 0.1)):
        rng = np.random.default_rng(seed)
        S = int(n_leaves if n_leaves is not None else rng.integers(2, 6))
        tree = parse_newick(rand_tree_newick(rng, S))
        theta = np.zeros(tree.n_nodes + 1)
        theta[1:tree.n_nodes] = rng.uniform(0.0, 1.0, tree.n_nodes - 1)
        x = rng.integers(0, 2, S).astype(np.uint8)
        gain = int(rng.integers(1, tree.n_nodes + 1))
        q = float(q_choices[rng.integers(0, len(q_choices))])
        return tree, theta, x, gain, q

    return make
