"""Binary presence/absence profile matrices and the naive distance metrics.

The on-disk format is TSV: a header row ``gene<TAB>sp1<TAB>...<TAB>spS``
followed by one row per gene with cells in {0,1}. Column order is free in
the file; on load the columns are permuted to the tree's leaf order so that
column j always corresponds to leaf node j+1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from phyloecm.errors import ProfileError
from phyloecm.tree import PhyloTree


@dataclass(frozen=True)
class ProfileMatrix:
    """N genes by S species presence/absence observations."""

    gene_ids: tuple[str, ...]
    species_ids: tuple[str, ...]
    cells: np.ndarray  # uint8, shape (N, S)

    def __post_init__(self):
        object.__setattr__(self, "gene_ids", tuple(self.gene_ids))
        object.__setattr__(self, "species_ids", tuple(self.species_ids))
        cells = np.asarray(self.cells, dtype=np.uint8)
        if cells.ndim != 2 or cells.shape != (len(self.gene_ids), len(self.species_ids)):
            raise ProfileError("cell matrix shape does not match gene/species lists")
        if len(set(self.gene_ids)) != len(self.gene_ids):
            raise ProfileError("duplicate gene names")
        if len(set(self.species_ids)) != len(self.species_ids):
            raise ProfileError("duplicate species names")
        if cells.size and cells.max() > 1:
            raise ProfileError("cells must be binary")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)

    @property
    def n_species(self) -> int:
        return len(self.species_ids)

    def row(self, gene: str) -> np.ndarray:
        try:
            i = self.gene_ids.index(gene)
        except ValueError:
            raise ProfileError(f"unknown gene {gene!r}") from None
        return self.cells[i]

    def subset(self, genes) -> "ProfileMatrix":
        """Rows for the given genes, in the given order."""
        idx = []
        for g in genes:
            try:
                idx.append(self.gene_ids.index(g))
            except ValueError:
                raise ProfileError(f"unknown gene {g!r}") from None
        return ProfileMatrix(
            tuple(genes), self.species_ids, self.cells[np.asarray(idx, dtype=int)]
        )


def load_profiles(path: str | Path, tree: PhyloTree) -> ProfileMatrix:
    """Read a profile TSV and align its species columns to the tree."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ProfileError(f"{path}: empty file")
    header = lines[0].rstrip("\n").split("\t")
    if len(header) < 2 or header[0] != "gene":
        raise ProfileError(f"{path}: header must start with 'gene' followed by species")
    species = header[1:]
    if len(set(species)) != len(species):
        dup = sorted({s for s in species if species.count(s) > 1})[0]
        raise ProfileError(f"{path}: duplicate species column {dup!r}")
    tree_species = set(tree.leaf_labels)
    extra = sorted(set(species) - tree_species)
    if extra:
        raise ProfileError(f"{path}: species {extra[0]!r} not present in the tree")
    missing = sorted(tree_species - set(species))
    if missing:
        raise ProfileError(f"{path}: species {missing[0]!r} missing from the file")

    genes: list[str] = []
    rows: list[list[int]] = []
    seen: set[str] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != len(header):
            raise ProfileError(
                f"{path}:{line_no}: expected {len(header)} columns, got {len(parts)}"
            )
        gene = parts[0]
        if gene in seen:
            raise ProfileError(f"{path}:{line_no}: duplicate gene {gene!r}")
        seen.add(gene)
        row = []
        for sp, val in zip(species, parts[1:]):
            if val not in ("0", "1"):
                raise ProfileError(
                    f"{path}:{line_no}: non-binary cell {val!r} at ({gene}, {sp})"
                )
            row.append(int(val))
        genes.append(gene)
        rows.append(row)
    if not genes:
        raise ProfileError(f"{path}: no genes")

    cells = np.asarray(rows, dtype=np.uint8)
    order = [species.index(label) for label in tree.leaf_labels]
    return ProfileMatrix(tuple(genes), tree.leaf_labels, cells[:, order])


def write_profiles(matrix: ProfileMatrix, path: str | Path) -> None:
    """Write the TSV format read by load_profiles."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("gene\t" + "\t".join(matrix.species_ids) + "\n")
        for gene, row in zip(matrix.gene_ids, matrix.cells):
            fh.write(gene + "\t" + "\t".join(str(int(v)) for v in row) + "\n")


def hamming_distance(x_i, x_j) -> int:
    """Number of positions where two equal-length profiles differ."""
    a = np.asarray(x_i)
    b = np.asarray(x_j)
    if a.shape != b.shape:
        raise ProfileError(f"length mismatch: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def anticorrelation_distance(x_i, x_j) -> float:
    """1 - corr(x_i, x_j)^2, treating perfect (anti)correlation as distance 0.

    A constant row has no defined correlation; such pairs get the maximal
    distance 1 (an always-present gene carries no co-evolution signal).
    """
    a = np.asarray(x_i, dtype=np.float64)
    b = np.asarray(x_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ProfileError(f"length mismatch: {a.shape} vs {b.shape}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        warnings.warn("constant profile row: anticorrelation distance set to 1")
        return 1.0
    corr = np.corrcoef(a, b)[0, 1]
    return float(1.0 - corr * corr)
