"""Datasets, the presorted feature index, and the synthetic benchmark generator."""

from dataclasses import dataclass

import numpy as np

from ._rng import SplitMix64
from .forest import Forest, Tree


class DatasetError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus either per-instance targets or preference pairs.

    ``pairs[k] = (i, j)`` states that instance ``i`` is preferred over ``j``.
    """

    X: np.ndarray
    y: np.ndarray | None = None
    pairs: np.ndarray | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DatasetError("feature matrix must be 2-D")
        object.__setattr__(self, "X", X)
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.float64).reshape(-1)
            if y.shape[0] != X.shape[0]:
                raise DatasetError(
                    f"target/feature count mismatch: {y.shape[0]} targets for {X.shape[0]} rows")
            object.__setattr__(self, "y", y)
        if self.pairs is not None:
            pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
            if pairs.size and (pairs.min() < 0 or pairs.max() >= X.shape[0]):
                raise DatasetError("pair index out of range")
            if np.any(pairs[:, 0] == pairs[:, 1]):
                raise DatasetError("pair (i, i) is not allowed")
            object.__setattr__(self, "pairs", pairs)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, idx):
        """Rows ``idx`` (pairs are kept only when both ends are selected)."""
        idx = np.asarray(idx, dtype=np.int64)
        y = None if self.y is None else self.y[idx]
        pairs = None
        if self.pairs is not None:
            remap = np.full(self.n, -1, dtype=np.int64)
            remap[idx] = np.arange(idx.size)
            p = remap[self.pairs]
            pairs = p[(p >= 0).all(axis=1)]
        return Dataset(self.X[idx], y, pairs)


def _lines(path):
    with open(path, encoding="utf-8", newline=None) as fh:
        for lineno, line in enumerate(fh, start=1):
            yield lineno, line.strip()


def _parse_float(tok, path, lineno):
    try:
        return float(tok)
    except ValueError:
        raise DatasetError(f"{path}:{lineno}: malformed number {tok!r}") from None


def read_dense(path):
    rows, width = [], None
    for lineno, line in _lines(path):
        if not line:
            continue
        row = [_parse_float(t, path, lineno) for t in line.split()]
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetError(f"{path}:{lineno}: dimension mismatch ({len(row)} values, expected {width})")
        rows.append(row)
    return np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)


def read_sparse(path, n_features=None):
    entries = []
    max_index = -1
    for lineno, line in _lines(path):
        row = {}
        for tok in line.split():
            key, sep, val = tok.partition(":")
            if not sep:
                raise DatasetError(f"{path}:{lineno}: malformed sparse token {tok!r}")
            try:
                j = int(key)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: malformed feature index {key!r}") from None
            if j < 0 or (n_features is not None and j >= n_features):
                raise DatasetError(f"{path}:{lineno}: feature index {j} out of range")
            row[j] = _parse_float(val, path, lineno)
            max_index = max(max_index, j)
        entries.append(row)
    d = n_features if n_features is not None else max_index + 1
    X = np.zeros((len(entries), d))
    for i, row in enumerate(entries):
        for j, v in row.items():
            X[i, j] = v
    return X


def read_targets(path):
    values = []
    for lineno, line in _lines(path):
        if not line:
            continue
        toks = line.split()
        if len(toks) != 1:
            raise DatasetError(f"{path}:{lineno}: expected one target per line")
        values.append(_parse_float(toks[0], path, lineno))
    return np.array(values, dtype=np.float64)


def read_pairs(path, n):
    pairs = []
    for lineno, line in _lines(path):
        if not line:
            continue
        toks = line.split()
        if len(toks) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 'i j'")
        try:
            i, j = int(toks[0]), int(toks[1])
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: malformed pair") from None
        if not (0 <= i < n and 0 <= j < n):
            raise DatasetError(f"{path}:{lineno}: pair index out of range")
        if i == j:
            raise DatasetError(f"{path}:{lineno}: pair ({i}, {i}) is not allowed")
        pairs.append((i, j))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def load_dataset(feature_path, target_path=None, format="dense", n_features=None,
                 feature_format="dense"):
    """Load features plus targets.

    ``format`` is ``dense`` or ``sparse`` (feature file layout, targets one
    number per line) or ``pairs`` (features in ``feature_format``, the target
    file lists preferred pairs ``i j``).
    """
    if format not in ("dense", "sparse", "pairs"):
        raise DatasetError(f"unknown format {format!r}")
    layout = feature_format if format == "pairs" else format
    if layout == "sparse":
        X = read_sparse(feature_path, n_features)
    else:
        X = read_dense(feature_path)
    if target_path is None:
        return Dataset(X)
    if format == "pairs":
        return Dataset(X, pairs=read_pairs(target_path, X.shape[0]))
    y = read_targets(target_path)
    if y.shape[0] != X.shape[0]:
        raise DatasetError(
            f"target/feature count mismatch: {y.shape[0]} targets for {X.shape[0]} feature rows")
    return Dataset(X, y)


def write_dense(X, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in np.atleast_2d(X):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def write_targets(y, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in np.asarray(y).reshape(-1):
            fh.write(repr(float(v)) + "\n")


@dataclass(frozen=True, eq=False)
class SortedFeatureIndex:
    """Per-feature instance order by ascending value (ties by instance id).

    ``order[j]`` is the permutation for feature ``j``; ``Xt`` is the transposed
    feature matrix the split search reads from.
    """

    order: np.ndarray
    Xt: np.ndarray

    def tie_runs(self, j):
        """Lengths of the runs of equal values along feature ``j``'s order."""
        vals = self.Xt[j, self.order[j]]
        if vals.size == 0:
            return np.zeros(0, dtype=np.int64)
        starts = np.flatnonzero(np.r_[True, vals[1:] != vals[:-1]])
        return np.diff(np.r_[starts, vals.size])


def build_sorted_index(data):
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    Xt = np.ascontiguousarray(X.T)
    order = np.argsort(Xt, axis=1, kind="stable").astype(np.int64)
    return SortedFeatureIndex(order=np.ascontiguousarray(order), Xt=Xt)


@dataclass(frozen=True)
class SynthConfig:
    q: int = 10
    num_target_trees: int = 100
    dim: int = 10
    n_train: int = 2000
    n_test: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if min(self.num_target_trees, self.dim, self.n_train, self.n_test) < 1:
            raise ValueError("sizes and dimensionality must be positive")


def random_target_tree(rng, q, dim):
    """Grow a q-leaf tree by splitting uniformly chosen leaves."""
    tree = Tree()
    leaves = [0]
    while len(leaves) < q:
        k = rng.integers(len(leaves))
        feature = rng.integers(dim)
        threshold = rng.uniform()
        left, right = tree.split(leaves[k], feature, threshold, 0.0, 0.0)
        leaves[k] = left
        leaves.append(right)
    values = rng.normal(q)
    for v, w in zip(tree.leaves(), values):
        tree.weight[v] = float(w)
    tree.wversion += 1
    return tree


def synthesize(config):
    """Random target forest plus uniform train/test features.

    Draw order from a single SplitMix64 stream seeded with ``config.seed``:
    the target trees one after another (structure, then leaf values), then the
    training matrix row-major, then the test matrix row-major.  Targets are
    the noiseless sum of the target trees' outputs.

    Returns ``(train, test, target_forest)``.
    """
    rng = SplitMix64(config.seed)
    target = Forest([random_target_tree(rng, config.q, config.dim)
                     for _ in range(config.num_target_trees)])
    X_train = rng.uniform((config.n_train, config.dim))
    X_test = rng.uniform((config.n_test, config.dim))
    train = Dataset(X_train, target.predict(X_train))
    test = Dataset(X_test, target.predict(X_test))
    return train, test, target
