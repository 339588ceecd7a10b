"""Inference of evolutionarily conserved gene modules from phylogenetic profiles.

The package clusters genes by shared patterns of evolutionary gain and loss
on a species tree (a Dirichlet-process mixture of tree-structured hidden
Markov models), ranks genome-wide candidates for membership in each module,
and ships a simulation benchmark against naive distance-based clustering.
"""

__version__ = "0.1.0"

from phyloecm.tree import PhyloTree, TreeSet, parse_newick, parse_tree_set
from phyloecm.profiles import ProfileMatrix, load_profiles

__all__ = [
    "PhyloTree",
    "TreeSet",
    "parse_newick",
    "parse_tree_set",
    "ProfileMatrix",
    "load_profiles",
    "__version__",
]
