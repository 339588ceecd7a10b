"""Rooted phylogenetic trees: Newick parsing, canonical indexing, clade queries.

Node indexing convention used throughout the package: the S leaves take ids
1..S (order of first appearance in the Newick text, or a caller-supplied
species order), internal nodes are numbered S+1.. in post-order, so the root
always gets the largest id. A branch is identified by the id of its child
node, so a binary tree over S species has 2S-2 branches and the root has
none. Multifurcations are accepted; every recursion iterates over a node's
child list, and the branch count generalizes to (#nodes - 1).

Branch lengths, when present, are parsed and kept but play no role in the
model: loss probabilities are per-branch parameters, not rate times length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from phyloecm.errors import InputError, NewickError

_LABEL_FORBIDDEN = set("();,:[]\t\n\r ")


class PhyloTree:
    """Immutable rooted tree over named leaf species.

    Attributes
    ----------
    leaf_labels : tuple of str
        Species names; leaf node i carries ``leaf_labels[i-1]``.
    parent : ndarray of int32, shape (n_nodes+1,)
        ``parent[s]`` is the parent id of node s; 0 for the root (and for
        the unused slot 0).
    children : tuple of tuple of int
        ``children[s]`` lists the child ids of node s in stored order.
    branch_lengths : ndarray of float64, shape (n_nodes+1,)
        Length of the branch above each node; NaN when absent.
    """

    def __init__(self, leaf_labels, parent, children, branch_lengths=None):
        self.leaf_labels = tuple(leaf_labels)
        self.parent = np.asarray(parent, dtype=np.int32)
        self.children = tuple(tuple(cs) for cs in children)
        n_nodes = len(self.children) - 1
        if branch_lengths is None:
            branch_lengths = np.full(n_nodes + 1, np.nan)
        self.branch_lengths = np.asarray(branch_lengths, dtype=np.float64)
        self.parent.setflags(write=False)
        self.branch_lengths.setflags(write=False)
        self._validate()
        self._postorder = self._compute_postorder()

    # -- construction checks ------------------------------------------------

    def _validate(self) -> None:
        S = len(self.leaf_labels)
        n = self.n_nodes
        if S < 2:
            raise InputError("a tree needs at least 2 leaves")
        if len(set(self.leaf_labels)) != S:
            raise InputError("duplicate leaf labels")
        if self.parent.shape != (n + 1,):
            raise InputError("parent array has wrong length")
        if self.parent[self.root] != 0:
            raise InputError("root must have no parent")
        for s in range(1, n + 1):
            if s <= S:
                if self.children[s]:
                    raise InputError(f"leaf node {s} has children")
            else:
                if len(self.children[s]) < 2:
                    raise InputError(f"internal node {s} has fewer than 2 children")
            for c in self.children[s]:
                if self.parent[c] != s:
                    raise InputError("parent/children maps disagree")
        n_child_edges = sum(len(cs) for cs in self.children)
        if n_child_edges != n - 1:
            raise InputError("tree is not connected")

    def _compute_postorder(self) -> np.ndarray:
        order = []
        stack: list[tuple[int, bool]] = [(self.root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded or not self.children[node]:
                order.append(node)
            else:
                stack.append((node, True))
                for c in reversed(self.children[node]):
                    stack.append((c, False))
        post = np.asarray(order, dtype=np.int32)
        # canonical numbering: internal ids must follow the traversal
        expect = self.n_leaves + 1
        for s in post:
            if s > self.n_leaves:
                if s != expect:
                    raise InputError("internal nodes are not numbered in post-order")
                expect += 1
        post.setflags(write=False)
        return post

    # -- basic queries --------------------------------------------------------

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_labels)

    @property
    def n_nodes(self) -> int:
        return len(self.children) - 1

    @property
    def n_branches(self) -> int:
        return self.n_nodes - 1

    @property
    def root(self) -> int:
        return self.n_nodes

    @property
    def postorder(self) -> np.ndarray:
        return self._postorder

    def is_leaf(self, s: int) -> bool:
        return 1 <= s <= self.n_leaves

    def leaf_index(self, label: str) -> int:
        try:
            return self.leaf_labels.index(label) + 1
        except ValueError:
            raise InputError(f"unknown species {label!r}") from None

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PhyloTree)
            and self.leaf_labels == other.leaf_labels
            and self.children == other.children
        )

    def __hash__(self):
        return hash((self.leaf_labels, self.children))

    def __repr__(self) -> str:
        return f"PhyloTree(S={self.n_leaves}, nodes={self.n_nodes})"


def subtree_nodes(tree: PhyloTree, s: int) -> set[int]:
    """All node ids in the clade rooted at s, including s itself."""
    if not 1 <= s <= tree.n_nodes:
        raise InputError(f"node {s} out of range 1..{tree.n_nodes}")
    out: set[int] = set()
    stack = [s]
    while stack:
        node = stack.pop()
        out.add(node)
        stack.extend(tree.children[node])
    return out


# -- Newick parsing ----------------------------------------------------------


class _Cursor:
    __slots__ = ("text", "pos")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""


def _parse_label(cur: _Cursor) -> str:
    start = cur.pos
    while cur.pos < len(cur.text) and cur.text[cur.pos] not in _LABEL_FORBIDDEN:
        cur.pos += 1
    return cur.text[start : cur.pos]


def _parse_length(cur: _Cursor) -> float:
    start = cur.pos
    while cur.pos < len(cur.text) and (cur.text[cur.pos] in "+-.eE" or cur.text[cur.pos].isdigit()):
        cur.pos += 1
    token = cur.text[start : cur.pos]
    try:
        return float(token)
    except ValueError:
        raise NewickError(f"invalid branch length {token!r}", start) from None


def _parse_subtree(cur: _Cursor, depth: int):
    """Returns (children_or_None, label, length, label_offset)."""
    cur.skip_ws()
    if cur.peek() == "(":
        open_at = cur.pos
        cur.pos += 1
        kids = [_parse_subtree(cur, depth + 1)]
        cur.skip_ws()
        while cur.peek() == ",":
            cur.pos += 1
            kids.append(_parse_subtree(cur, depth + 1))
            cur.skip_ws()
        if cur.peek() != ")":
            raise NewickError("unbalanced parentheses: '(' never closed", open_at)
        cur.pos += 1
        if len(kids) < 2:
            raise NewickError("internal node with a single child", open_at)
        _parse_label(cur)  # internal labels are accepted and ignored
        length = np.nan
        if cur.peek() == ":":
            cur.pos += 1
            length = _parse_length(cur)
        return (kids, None, length, open_at)
    offset = cur.pos
    label = _parse_label(cur)
    if not label:
        raise NewickError("empty leaf label", offset)
    length = np.nan
    if cur.peek() == ":":
        cur.pos += 1
        length = _parse_length(cur)
    return (None, label, length, offset)


def parse_newick(text: str, leaf_order: dict[str, int] | None = None) -> PhyloTree:
    """Parse a single Newick expression into a canonical PhyloTree.

    ``leaf_order`` optionally fixes the leaf id of each species label
    (1-based); by default leaves are numbered in order of first appearance.
    """
    cur = _Cursor(text)
    cur.skip_ws()
    if cur.peek() != "(":
        raise NewickError("expected '(' to start a tree", cur.pos)
    spec = _parse_subtree(cur, 0)
    cur.skip_ws()
    if cur.peek() != ";":
        if cur.peek() == ")":
            raise NewickError("unbalanced parentheses: unmatched ')'", cur.pos)
        raise NewickError("expected ';' after tree", cur.pos)
    cur.pos += 1
    cur.skip_ws()
    if cur.pos != len(cur.text):
        raise NewickError("trailing garbage after ';'", cur.pos)

    # collect leaves in appearance order, checking duplicates
    leaves: list[tuple[str, int]] = []

    def walk(node) -> None:
        kids, label, _, offset = node
        if kids is None:
            leaves.append((label, offset))
        else:
            for k in kids:
                walk(k)

    walk(spec)
    seen: dict[str, int] = {}
    for label, offset in leaves:
        if label in seen:
            raise NewickError(f"duplicate leaf label {label!r}", offset)
        seen[label] = offset

    if leaf_order is None:
        leaf_id = {label: i + 1 for i, (label, _) in enumerate(leaves)}
    else:
        missing = set(leaf_order) ^ set(seen)
        if missing:
            name = sorted(missing)[0]
            raise InputError(f"leaf set mismatch: species {name!r}")
        leaf_id = dict(leaf_order)

    S = len(leaves)
    n_internal = _count_internal(spec)
    n_nodes = S + n_internal
    parent = np.zeros(n_nodes + 1, dtype=np.int32)
    children: list[tuple[int, ...]] = [()] * (n_nodes + 1)
    lengths = np.full(n_nodes + 1, np.nan)
    counter = [S]

    def build(node) -> int:
        kids, label, length, _ = node
        if kids is None:
            node_id = leaf_id[label]
        else:
            child_ids = [build(k) for k in kids]
            counter[0] += 1
            node_id = counter[0]
            children[node_id] = tuple(child_ids)
            for c in child_ids:
                parent[c] = node_id
        lengths[node_id] = length
        return node_id

    build(spec)
    return PhyloTree(
        [label for label, _ in sorted(leaf_id.items(), key=lambda kv: kv[1])]
        if leaf_order is None
        else _labels_in_id_order(leaf_id),
        parent,
        children,
        lengths,
    )


def _labels_in_id_order(leaf_id: dict[str, int]) -> list[str]:
    return [label for label, _ in sorted(leaf_id.items(), key=lambda kv: kv[1])]


def _count_internal(spec) -> int:
    kids, _, _, _ = spec
    if kids is None:
        return 0
    return 1 + sum(_count_internal(k) for k in kids)


def render_newick(tree: PhyloTree, with_lengths: bool | None = None) -> str:
    """Serialize back to Newick; inverse of parse up to isomorphism."""
    if with_lengths is None:
        with_lengths = bool(np.any(np.isfinite(tree.branch_lengths)))

    def fmt_len(s: int) -> str:
        blen = tree.branch_lengths[s]
        if with_lengths and np.isfinite(blen):
            return f":{blen:g}"
        return ""

    def render(s: int) -> str:
        if tree.is_leaf(s):
            return tree.leaf_labels[s - 1] + fmt_len(s)
        inner = ",".join(render(c) for c in tree.children[s])
        return f"({inner})" + fmt_len(s)

    return render(tree.root) + ";"


def tree_digest(tree: PhyloTree) -> int:
    """Stable 64-bit fingerprint of the canonical topology (labels included);
    identical trees share all derived random streams."""
    import hashlib

    text = render_newick(tree, with_lengths=False)
    digest = hashlib.blake2s(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# -- tree sets ----------------------------------------------------------------


@dataclass(frozen=True)
class TreeSet:
    """A finite empirical distribution over trees sharing one leaf set."""

    trees: tuple[PhyloTree, ...]
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not self.trees:
            raise InputError("tree set is empty")
        object.__setattr__(self, "trees", tuple(self.trees))
        w = self.weights
        if w is None:
            w = np.full(len(self.trees), 1.0 / len(self.trees))
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (len(self.trees),) or not np.isclose(w.sum(), 1.0):
            raise InputError("tree weights must sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        labels = self.trees[0].leaf_labels
        for i, t in enumerate(self.trees[1:], start=2):
            if t.leaf_labels != labels:
                raise InputError(f"tree {i} has a different leaf set/order")

    def __len__(self) -> int:
        return len(self.trees)

    @property
    def leaf_labels(self) -> tuple[str, ...]:
        return self.trees[0].leaf_labels


def parse_tree_set(text: str) -> TreeSet:
    """Parse one Newick expression per non-empty line into a uniform TreeSet.

    All trees must cover the same species; leaves are re-indexed so species k
    has node id k in every tree (the first tree fixes the order).
    """
    lines = [(i + 1, line.strip()) for i, line in enumerate(text.splitlines())]
    lines = [(no, line) for no, line in lines if line]
    if not lines:
        raise InputError("tree set is empty")
    trees: list[PhyloTree] = []
    leaf_order: dict[str, int] | None = None
    for line_no, line in lines:
        try:
            t = parse_newick(line, leaf_order=leaf_order)
        except InputError as exc:
            raise InputError(f"line {line_no}: {exc}") from exc
        if leaf_order is None:
            leaf_order = {label: i + 1 for i, label in enumerate(t.leaf_labels)}
        trees.append(t)
    return TreeSet(tuple(trees))
