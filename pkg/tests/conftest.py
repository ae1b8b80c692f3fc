import sys

import numpy as np
import pytest

from rgforest.dataset import Dataset
from rgforest.forest import Tree


def random_tree(rng, n_leaves, dim=3, weight_scale=1.0):
    """Random topology grown by splitting uniformly chosen leaves."""
    tree = Tree()
    leaves = [0]
    while len(leaves) < n_leaves:
        k = int(rng.integers(len(leaves)))
        left, right = tree.split(leaves[k], int(rng.integers(dim)), float(rng.uniform()), 0.0, 0.0)
        leaves[k] = left
        leaves.append(right)
    for v in tree.leaves():
        tree.weight[v] = float(rng.normal() * weight_scale)
    tree.wversion += 1
    return tree


def stump(w_left, w_right, feature=0, threshold=0.5):
    tree = Tree()
    tree.split(0, feature, threshold, w_left, w_right)
    return tree


def three_level_tree():
    """Root with leaf child c (w=1) and internal child u with leaves (2, 4)."""
    tree = Tree()
    u, c = tree.split(0, 0, 0.5, 0.0, 1.0)
    tree.split(u, 1, 0.5, 2.0, 4.0)
    return tree, u, c


def toy_regression(rng, n=50, d=3, noise=0.1):
    X = rng.uniform(size=(n, d))
    y = np.sin(3 * X[:, 0]) + (X[:, 1] > 0.5) + noise * rng.normal(size=n)
    return Dataset(X, y)


def toy_classification(rng, n=50, d=3):
    X = rng.uniform(size=(n, d))
    y = np.where(X[:, 0] + 0.3 * rng.normal(size=n) > 0.5, 1.0, -1.0)
    return Dataset(X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(results[num])
