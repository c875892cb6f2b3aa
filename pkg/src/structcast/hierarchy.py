"""Rooted hierarchies over series: tree representation, structural matrices,
and Ward clustering with dendrogram cuts.

Node ordering convention used everywhere in this package: the root comes
first, interior nodes follow level by level (most aggregate to least), and
leaves come last.  All stacked vectors and matrices (summation matrix,
scale vector, panels) share this ordering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Tree",
    "TreeNode",
    "TreeStructureError",
    "StructuralMatrices",
    "Linkage",
    "MergeStep",
    "canonical_tree",
    "build_summation_matrix",
    "aggregate_bottom_up",
    "coherency_residual",
    "ward_cluster",
    "cut_tree",
    "load_tree",
    "save_tree",
]


class TreeStructureError(ValueError):
    """Raised when node records do not form a valid rooted hierarchy."""


@dataclass(frozen=True)
class TreeNode:
    """One hierarchy node: an identifier and the index of its parent.

    The root has ``parent=None``; every other node points at an earlier
    index in the node list.
    """

    id: str
    parent: int | None


@dataclass(frozen=True)
class Tree:
    """A rooted hierarchy in canonical node order.

    Invariants checked at construction: exactly one root at index 0,
    interior nodes sorted by depth and placed before all leaves, every
    interior node has at least two children, node ids are unique.
    """

    nodes: tuple[TreeNode, ...]

    def __post_init__(self) -> None:
        _validate(self.nodes)

    @property
    def n(self) -> int:
        """Total number of nodes."""
        return len(self.nodes)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        """Child indices per node, in index order."""
        kids: list[list[int]] = [[] for _ in self.nodes]
        for i, node in enumerate(self.nodes):
            if node.parent is not None:
                kids[node.parent].append(i)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def levels(self) -> tuple[int, ...]:
        """Depth of each node (root has depth 0)."""
        depth = [0] * self.n
        for i, node in enumerate(self.nodes):
            if node.parent is not None:
                depth[i] = depth[node.parent] + 1
        return tuple(depth)

    @property
    def m(self) -> int:
        """Number of leaves."""
        return sum(1 for k in self.children if not k)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(node.id for node in self.nodes)

    def is_leaf(self, i: int) -> bool:
        return not self.children[i]

    @cached_property
    def leaf_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if self.is_leaf(i))

    def descendant_leaves(self, i: int) -> tuple[int, ...]:
        """All leaf indices below (or equal to) node ``i``, by traversal."""
        stack, found = [i], []
        while stack:
            j = stack.pop()
            if self.is_leaf(j):
                found.append(j)
            else:
                stack.extend(reversed(self.children[j]))
        return tuple(found)


def _validate(nodes: tuple[TreeNode, ...]) -> None:
    if not nodes:
        raise TreeStructureError("tree has no nodes")
    roots = [i for i, node in enumerate(nodes) if node.parent is None]
    if len(roots) != 1:
        raise TreeStructureError(f"expected exactly one root, found {len(roots)}")
    if roots[0] != 0:
        raise TreeStructureError("root must be the first node")
    ids = [node.id for node in nodes]
    if len(set(ids)) != len(ids):
        raise TreeStructureError("node ids are not unique")

    n = len(nodes)
    child_count = [0] * n
    depth = [0] * n
    for i, node in enumerate(nodes):
        if node.parent is None:
            continue
        if not 0 <= node.parent < n:
            raise TreeStructureError(f"node {node.id!r} has out-of-range parent index")
        if node.parent >= i:
            raise TreeStructureError(
                f"node {node.id!r} precedes its parent; nodes must be level-ordered"
            )
        child_count[node.parent] += 1
        depth[i] = depth[node.parent] + 1

    interior = [i for i in range(n) if child_count[i] > 0]
    leaves = [i for i in range(n) if child_count[i] == 0]
    if n > 1 and (not interior or interior[-1] > leaves[0]):
        raise TreeStructureError("all interior nodes must precede all leaves")
    for i in interior:
        if child_count[i] < 2:
            raise TreeStructureError(
                f"interior node {nodes[i].id!r} has {child_count[i]} child(ren); need >= 2"
            )
    interior_depths = [depth[i] for i in interior]
    if interior_depths != sorted(interior_depths):
        raise TreeStructureError("interior nodes must be ordered level by level")


def canonical_tree(ids: list[str], parent_ids: list[str | None]) -> Tree:
    """Build a Tree from (id, parent id) pairs, reordering into canonical form.

    Interior nodes are sorted by (depth, smallest descendant-leaf position);
    leaves keep their relative order from the input.  Use this when the node
    records come from an arbitrary source; JSON loading via :func:`load_tree`
    validates the stored order instead.
    """
    if len(ids) != len(parent_ids):
        raise TreeStructureError("ids and parent_ids lengths differ")
    index = {node_id: k for k, node_id in enumerate(ids)}
    if len(index) != len(ids):
        raise TreeStructureError("node ids are not unique")

    n = len(ids)
    parent = []
    for node_id, pid in zip(ids, parent_ids):
        if pid is None:
            parent.append(None)
        elif pid not in index:
            raise TreeStructureError(f"node {node_id!r} references unknown parent {pid!r}")
        else:
            parent.append(index[pid])

    roots = [k for k, p in enumerate(parent) if p is None]
    if len(roots) != 1:
        raise TreeStructureError(f"expected exactly one root, found {len(roots)}")

    children: list[list[int]] = [[] for _ in range(n)]
    for k, p in enumerate(parent):
        if p is not None:
            children[p].append(k)

    # Depth via traversal from the root; unreachable nodes mean a cycle.
    depth = [-1] * n
    depth[roots[0]] = 0
    stack = [roots[0]]
    while stack:
        k = stack.pop()
        for c in children[k]:
            depth[c] = depth[k] + 1
            stack.append(c)
    if any(d < 0 for d in depth):
        raise TreeStructureError("cycle detected: some nodes are unreachable from the root")

    leaf_pos = {k: j for j, k in enumerate(k for k in range(n) if not children[k])}

    first_leaf_cache: dict[int, int] = {}
    for k in sorted(range(n), key=lambda k: -depth[k]):
        if not children[k]:
            first_leaf_cache[k] = leaf_pos[k]
        else:
            first_leaf_cache[k] = min(first_leaf_cache[c] for c in children[k])

    interior = [k for k in range(n) if children[k]]
    interior.sort(key=lambda k: (depth[k], first_leaf_cache[k]))
    leaves = sorted((k for k in range(n) if not children[k]), key=lambda k: leaf_pos[k])
    order = interior + leaves

    new_index = {k: i for i, k in enumerate(order)}
    nodes = tuple(
        TreeNode(ids[k], None if parent[k] is None else new_index[parent[k]]) for k in order
    )
    return Tree(nodes)


def tree_to_dict(tree: Tree) -> dict:
    """JSON-ready document: {"nodes": [{"id": ..., "parent": id-or-null}]}."""
    return {
        "nodes": [
            {
                "id": node.id,
                "parent": None if node.parent is None else tree.nodes[node.parent].id,
            }
            for node in tree.nodes
        ]
    }


def tree_from_dict(doc: dict) -> Tree:
    """Inverse of :func:`tree_to_dict`; the stored node order is validated."""
    try:
        records = doc["nodes"]
    except (TypeError, KeyError) as exc:
        raise TreeStructureError("tree document must contain a 'nodes' list") from exc
    index = {rec["id"]: i for i, rec in enumerate(records)}
    nodes = []
    for rec in records:
        pid = rec.get("parent")
        if pid is None:
            nodes.append(TreeNode(rec["id"], None))
        elif pid not in index:
            raise TreeStructureError(f"node {rec['id']!r} references unknown parent {pid!r}")
        else:
            nodes.append(TreeNode(rec["id"], index[pid]))
    return Tree(tuple(nodes))


def save_tree(tree: Tree, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tree_to_dict(tree), indent=2) + "\n")


def load_tree(path: str | Path) -> Tree:
    return tree_from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class StructuralMatrices:
    """Summation matrix S (n x m), leaf extractor G = [0 | I_m] (m x n), and
    per-node descendant-leaf counts ``kappa`` (length n)."""

    S: np.ndarray
    G: np.ndarray
    kappa: np.ndarray


def build_summation_matrix(tree: Tree) -> StructuralMatrices:
    """Derive the structural matrices of a tree.

    Row i of S has a 1 in column j iff leaf j descends from (or equals)
    node i; the leaf block of S is the identity.  ``kappa = S @ 1`` counts
    descendant leaves per node.
    """
    n, m = tree.n, tree.m
    leaf_col = {leaf: j for j, leaf in enumerate(tree.leaf_indices)}
    S = np.zeros((n, m))
    for i in range(n):
        for leaf in tree.descendant_leaves(i):
            S[i, leaf_col[leaf]] = 1.0
    G = np.zeros((m, n))
    G[:, n - m:] = np.eye(m)
    kappa = S.sum(axis=1)
    return StructuralMatrices(S=S, G=G, kappa=kappa)


def aggregate_bottom_up(b: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Stack leaf values ``b`` into the full hierarchy vector ``S @ b``."""
    b = np.asarray(b, dtype=float)
    if b.shape[-1] != S.shape[1]:
        raise ValueError(f"expected {S.shape[1]} leaf values, got {b.shape[-1]}")
    return b @ S.T


def coherency_residual(y_hat: np.ndarray, S: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Deviation of a stacked vector from its bottom-up aggregate, y - S G y.

    Zero exactly when the vector is coherent.  Works on single vectors or
    row-stacked batches.
    """
    y_hat = np.asarray(y_hat, dtype=float)
    if y_hat.shape[-1] != S.shape[0]:
        raise ValueError(f"expected {S.shape[0]} node values, got {y_hat.shape[-1]}")
    return y_hat - (y_hat @ G.T) @ S.T


@dataclass(frozen=True)
class MergeStep:
    """A single agglomeration: cluster ids merged, their distance, and the
    size of the merged cluster.  Ids follow the usual linkage convention:
    0..N-1 are the original series, step k creates cluster N+k."""

    left: int
    right: int
    distance: float
    size: int


@dataclass(frozen=True)
class Linkage:
    """Ward linkage over N series: N-1 merge steps with non-decreasing
    distances."""

    n_leaves: int
    steps: tuple[MergeStep, ...]


def ward_cluster(leaf_series: np.ndarray) -> Linkage:
    """Agglomerate series (columns) under Ward's minimum-variance criterion.

    Distances between singletons are Euclidean; merged-cluster distances
    follow the Lance-Williams update, so ``distance**2 / 2`` is the increase
    in total within-cluster variance caused by the merge.  Ties are broken
    by the smallest (left id, right id) pair.

    Args:
        leaf_series: T x N matrix, one series per column, no missing values.

    Returns:
        Linkage with N-1 merge steps.
    """
    X = np.asarray(leaf_series, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("need a T x N matrix with N >= 2 series")
    if not np.isfinite(X).all():
        raise ValueError("series contain missing or non-finite values")

    n = X.shape[1]
    diff = X.T[:, None, :] - X.T[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)

    size = np.ones(n, dtype=int)
    cluster_id = np.arange(n)
    active = np.ones(n, dtype=bool)
    steps: list[MergeStep] = []

    for step in range(n - 1):
        masked = np.where(active[:, None] & active[None, :], d2, np.inf)
        best = masked.min()
        ii, jj = np.nonzero(masked == best)
        pairs = sorted(
            (min(cluster_id[a], cluster_id[b]), max(cluster_id[a], cluster_id[b]), a, b)
            for a, b in zip(ii, jj)
            if a < b
        )
        left_id, right_id, a, b = pairs[0]

        sa, sb = size[a], size[b]
        merged = sa + sb
        steps.append(MergeStep(left_id, right_id, float(np.sqrt(best)), int(merged)))

        # Lance-Williams Ward update on squared distances; cluster b's slot
        # absorbs the merge, slot a retires.
        sk = size[active]
        upd = ((sa + sk) * d2[a, active] + (sb + sk) * d2[b, active] - sk * best) / (merged + sk)
        d2[b, active] = upd
        d2[active, b] = upd
        d2[b, b] = np.inf
        active[a] = False
        size[b] = merged
        cluster_id[b] = n + step

    return Linkage(n_leaves=n, steps=tuple(steps))


def cut_tree(linkage: Linkage, threshold: float, leaf_ids: list[str]) -> Tree:
    """Collapse all merges below a distance threshold into flat interior nodes.

    Every maximal run of merges with distance < threshold becomes a single
    interior node whose children are its constituent leaves; merges at or
    above the threshold stay binary.  Threshold 0 keeps the full binary
    linkage tree (2N-1 nodes); a threshold above the largest merge distance
    yields root + N leaves.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    n = linkage.n_leaves
    if len(leaf_ids) != n:
        raise ValueError(f"expected {n} leaf ids, got {len(leaf_ids)}")

    # Ward distances are monotone, so the collapsed region under any
    # surviving merge is downward-closed and flattening is well defined.
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    surviving: dict[int, tuple[int, int]] = {}
    for k, step in enumerate(linkage.steps):
        cid = n + k
        members[cid] = members[step.left] + members[step.right]
        if step.distance >= threshold:
            surviving[cid] = (step.left, step.right)

    root_cid = n + len(linkage.steps) - 1 if linkage.steps else 0

    ids: list[str] = list(leaf_ids)
    parent_of: list[str | None] = [None] * n
    counter = 0

    def fresh_id() -> str:
        nonlocal counter
        taken = set(ids)
        while True:
            candidate = f"c{counter}"
            counter += 1
            if candidate not in taken:
                return candidate

    def emit(cid: int, parent: str | None) -> None:
        if cid < n:
            parent_of[cid] = parent
            return
        node_id = fresh_id()
        ids.append(node_id)
        parent_of.append(parent)
        if cid in surviving:
            left, right = surviving[cid]
            emit(left, node_id)
            emit(right, node_id)
        else:
            for leaf in members[cid]:
                parent_of[leaf] = node_id

    emit(root_cid, None)
    return canonical_tree(ids, parent_of)
