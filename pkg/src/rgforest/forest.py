"""Decision forests over threshold rules.

A tree node ``v`` carries the rule ``b_v(x)``: the conjunction of the edge
tests on the path from the root (``x[i] <= theta`` to the left child,
``x[i] > theta`` to the right).  The model is leaf-only: internal nodes carry
weight 0 and ``f(x) = sum_v w_v b_v(x)`` reduces to the weight of the one leaf
per tree that fires.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

FORMAT_HEADER = "RGF-MODEL v1"


class ModelFormatError(ValueError):
    """Raised when a serialized model cannot be loaded."""


@dataclass(frozen=True)
class TreeArrays:
    parent: np.ndarray
    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    weight: np.ndarray
    depth: np.ndarray

    @property
    def is_leaf(self):
        return self.left < 0


class Tree:
    """A binary threshold tree with node ids assigned in creation order."""

    def __init__(self):
        self.parent = [-1]
        self.left = [-1]
        self.right = [-1]
        self.feature = [-1]
        self.threshold = [np.nan]
        self.weight = [0.0]
        self.depth = [0]
        # topology version and weight version, used to detect stale caches
        self.version = 0
        self.wversion = 0
        self._arrays = None
        self._arrays_key = None

    @property
    def n_nodes(self):
        return len(self.parent)

    def is_leaf(self, v):
        return self.left[v] < 0

    def leaves(self):
        """Leaf ids in creation order."""
        return [v for v in range(self.n_nodes) if self.left[v] < 0]

    @property
    def n_leaves(self):
        return sum(1 for v in self.left if v < 0)

    def ancestors(self, v):
        """``A(v)``: v and its ancestors, from v up to the root."""
        path = [v]
        while self.parent[path[-1]] >= 0:
            path.append(self.parent[path[-1]])
        return path

    def children(self, v):
        return (self.left[v], self.right[v]) if self.left[v] >= 0 else ()

    def _add(self, parent, weight):
        self.parent.append(parent)
        self.left.append(-1)
        self.right.append(-1)
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.weight.append(float(weight))
        self.depth.append(self.depth[parent] + 1)
        return len(self.parent) - 1

    def split(self, v, feature, threshold, w_left, w_right):
        """Turn leaf ``v`` into an internal node; returns the child ids."""
        if self.left[v] >= 0:
            raise ValueError(f"node {v} is not a leaf")
        left = self._add(v, w_left)
        right = self._add(v, w_right)
        self.left[v] = left
        self.right[v] = right
        self.feature[v] = int(feature)
        self.threshold[v] = float(threshold)
        self.weight[v] = 0.0
        self.version += 1
        self.wversion += 1
        return left, right

    def set_weight(self, v, w):
        self.weight[v] = float(w)
        self.wversion += 1

    def leaf_weights(self):
        return np.array([self.weight[v] for v in self.leaves()])

    def arrays(self):
        key = (self.version, self.wversion)
        if self._arrays_key != key:
            self._arrays = TreeArrays(
                parent=np.array(self.parent, dtype=np.int64),
                left=np.array(self.left, dtype=np.int64),
                right=np.array(self.right, dtype=np.int64),
                feature=np.array(self.feature, dtype=np.int64),
                threshold=np.array(self.threshold, dtype=np.float64),
                weight=np.array(self.weight, dtype=np.float64),
                depth=np.array(self.depth, dtype=np.int64),
            )
            self._arrays_key = key
        return self._arrays

    def apply(self, X):
        """Id of the leaf reached by each row of ``X``."""
        a = self.arrays()
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply_tree(a.left, a.right, a.feature, a.threshold, X)

    def predict(self, X):
        return self.arrays().weight[self.apply(X)]

    def copy(self):
        t = Tree()
        for name in ("parent", "left", "right", "feature", "threshold", "weight", "depth"):
            setattr(t, name, list(getattr(self, name)))
        return t


@njit(cache=True)
def _apply_tree(left, right, feature, threshold, X):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        v = 0
        while left[v] >= 0:
            if X[i, feature[v]] <= threshold[v]:
                v = left[v]
            else:
                v = right[v]
        out[i] = v
    return out


def evaluate_rule(tree, node, x):
    """Return 1 if ``x`` satisfies every edge test from the root to ``node``."""
    path = tree.ancestors(node)
    for child, parent in zip(path[:-1], path[1:]):
        goes_left = x[tree.feature[parent]] <= tree.threshold[parent]
        if goes_left != (tree.left[parent] == child):
            return 0
    return 1


class Forest:
    """Ordered list of trees; list position doubles as creation order."""

    def __init__(self, trees=None):
        self.trees = list(trees) if trees is not None else []

    def __len__(self):
        return len(self.trees)

    @property
    def n_leaves(self):
        return sum(t.n_leaves for t in self.trees)

    def add_tree(self, tree):
        self.trees.append(tree)
        return len(self.trees) - 1

    def predict(self, X):
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        out = np.zeros(X.shape[0])
        for t in self.trees:
            out += t.predict(X)
        return out

    def copy(self):
        return Forest([t.copy() for t in self.trees])


@dataclass
class WeightedTreeView:
    """A tree topology with an arbitrary weight on every node."""

    tree: Tree
    beta: np.ndarray

    def predict(self, X):
        # brute force over all node rules
        X = np.atleast_2d(X)
        out = np.zeros(X.shape[0])
        for v in range(self.tree.n_nodes):
            if self.beta[v] != 0.0:
                fires = np.array([evaluate_rule(self.tree, v, x) for x in X])
                out += self.beta[v] * fires
        return out


def collapse_to_leaf_only(view):
    """Equivalent leaf-only tree: each leaf gets the sum of beta along its path."""
    tree = view.tree.copy()
    for v in range(tree.n_nodes):
        if tree.is_leaf(v):
            tree.weight[v] = float(sum(view.beta[a] for a in tree.ancestors(v)))
        else:
            tree.weight[v] = 0.0
    tree.wversion += 1
    return tree


def _preorder(tree):
    order, stack = [], [0]
    while stack:
        v = stack.pop()
        order.append(v)
        if tree.left[v] >= 0:
            stack.append(tree.right[v])
            stack.append(tree.left[v])
    return order


def dumps(forest):
    """Serialize to the line-oriented ``RGF-MODEL v1`` text format.

    Layout::

        RGF-MODEL v1
        trees <K>
        tree <k> nodes <count>
        N <id> <parent|-> <feature> <threshold>     (internal node)
        N <id> <parent|-> LEAF <weight>             (leaf)
        ...
        end

    Nodes are listed in preorder, so the first listed child of a node is its
    left ("<=") child.  Floats use the shortest repr that parses back exactly.
    """
    lines = [FORMAT_HEADER, f"trees {len(forest.trees)}"]
    for k, tree in enumerate(forest.trees):
        lines.append(f"tree {k} nodes {tree.n_nodes}")
        for v in _preorder(tree):
            parent = "-" if tree.parent[v] < 0 else str(tree.parent[v])
            if tree.left[v] >= 0:
                lines.append(f"N {v} {parent} {tree.feature[v]} {float(tree.threshold[v])!r}")
            else:
                lines.append(f"N {v} {parent} LEAF {float(tree.weight[v])!r}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads(text):
    """Parse the output of :func:`dumps`."""
    lines = text.splitlines()
    pos = 0

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            raise ModelFormatError(f"truncated model: expected {what} at line {pos + 1}")
        pos += 1
        return lines[pos - 1].strip()

    header = take("header")
    if header != FORMAT_HEADER:
        raise ModelFormatError(f"unsupported model version: {header!r}")
    parts = take("tree count").split()
    if len(parts) != 2 or parts[0] != "trees":
        raise ModelFormatError(f"line {pos}: expected 'trees <K>'")
    trees = []
    for k in range(int(parts[1])):
        parts = take(f"tree {k}").split()
        if len(parts) != 4 or parts[0] != "tree" or parts[2] != "nodes":
            raise ModelFormatError(f"line {pos}: expected 'tree {k} nodes <count>'")
        count = int(parts[3])
        records = {}
        order = []
        for _ in range(count):
            f = take("node").split()
            if len(f) != 5 or f[0] != "N":
                raise ModelFormatError(f"line {pos}: malformed node record")
            v = int(f[1])
            if v in records or not 0 <= v < count:
                raise ModelFormatError(f"line {pos}: bad node id {v}")
            parent = -1 if f[2] == "-" else int(f[2])
            records[v] = (parent, f[3], float(f[4]))
            order.append(v)
        trees.append(_build_tree(records, order, pos))
    if take("end marker") != "end":
        raise ModelFormatError(f"line {pos}: expected 'end'")
    return Forest(trees)


def _build_tree(records, order, lineno):
    n = len(records)
    tree = Tree()
    tree.parent = [-1] * n
    tree.left = [-1] * n
    tree.right = [-1] * n
    tree.feature = [-1] * n
    tree.threshold = [np.nan] * n
    tree.weight = [0.0] * n
    tree.depth = [0] * n
    if n == 0 or records[order[0]][0] != -1:
        raise ModelFormatError(f"near line {lineno}: tree must start with its root")
    for v in order:
        parent, kind, value = records[v]
        tree.parent[v] = parent
        if kind == "LEAF":
            tree.weight[v] = value
        else:
            tree.feature[v] = int(kind)
            tree.threshold[v] = value
        if parent >= 0:
            if parent not in records or records[parent][1] == "LEAF":
                raise ModelFormatError(f"near line {lineno}: node {v} has invalid parent {parent}")
            tree.depth[v] = tree.depth[parent] + 1
            if tree.left[parent] < 0:
                tree.left[parent] = v
            elif tree.right[parent] < 0:
                tree.right[parent] = v
            else:
                raise ModelFormatError(f"near line {lineno}: node {parent} has more than two children")
    for v in order:
        internal = records[v][1] != "LEAF"
        if internal and tree.right[v] < 0:
            raise ModelFormatError(f"near line {lineno}: internal node {v} lacks two children")
    return tree


def save(forest, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(forest))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
