"""Shared fixtures: reference trees, random tree generation, traversal oracles."""

import numpy as np
import pytest

from structcast.hierarchy import Tree, TreeNode, canonical_tree


@pytest.fixture
def two_level_tree() -> Tree:
    """Root with six leaves split over two interior nodes (9 nodes, 6 leaves)."""
    return Tree(
        (
            TreeNode("y61", None),
            TreeNode("y31", 0),
            TreeNode("y32", 0),
            TreeNode("y11", 1),
            TreeNode("y12", 1),
            TreeNode("y13", 1),
            TreeNode("y14", 2),
            TreeNode("y15", 2),
            TreeNode("y16", 2),
        )
    )


@pytest.fixture
def tiny_tree() -> Tree:
    """Root with two leaves, the smallest non-degenerate hierarchy."""
    return Tree((TreeNode("top", None), TreeNode("a", 0), TreeNode("b", 0)))


def random_tree(rng: np.random.Generator, max_leaves: int = 12, max_children: int = 4) -> Tree:
    """Random valid hierarchy with 2..max_leaves leaves.

    Grows by repeatedly splitting a random leaf into 2..max_children
    children, so every interior node has >= 2 children by construction.
    """
    target = int(rng.integers(2, max_leaves + 1))
    ids = ["r"]
    parents: list[str | None] = [None]
    leaves = ["r"]
    counter = 0
    while len(leaves) < target:
        pick = leaves.pop(int(rng.integers(len(leaves))))
        k = int(rng.integers(2, max_children + 1))
        k = min(k, max_leaves - len(leaves))
        k = max(k, 2)
        for _ in range(k):
            child = f"v{counter}"
            counter += 1
            ids.append(child)
            parents.append(pick)
            leaves.append(child)
    return canonical_tree(ids, parents)


def descendant_leaf_oracle(tree: Tree, i: int) -> set[int]:
    """Brute-force descendant-leaf enumeration by repeated parent walks."""
    out = set()
    for j in range(tree.n):
        if tree.children[j]:
            continue
        k = j
        while k is not None:
            if k == i:
                out.add(j)
                break
            k = tree.nodes[k].parent
    return out
