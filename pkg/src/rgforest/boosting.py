"""Gradient boosting baselines over J-leaf regression trees.

Three variants share the base learner:

* ``generic``: one coefficient per tree found by line search.
* ``gbdt``: one coefficient per leaf, each by its own line search.
* ``fully_corrective``: after each new tree, every leaf coefficient so far is
  re-optimised (no shrinkage, no regularization).

``h_0`` (the best constant) is stored as a single-leaf first tree.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .correction import CorrectionConfig, correct_weights
from .dataset import build_sorted_index
from .forest import Forest, Tree
from .growth import ForestState
from .loss import Objective, resolve
from .regularizers import LEAF_L2, RegConfig

VARIANTS = ("generic", "gbdt", "fully_corrective")
_ALIASES = {"fc": "fully_corrective"}
LINE_SEARCH_TOL = 1e-10


@dataclass(frozen=True)
class GBDTConfig:
    loss: str = "square"
    J: int = 20
    K: int = 100
    s: float = 0.1
    seed: int = 0
    variant: str = "gbdt"
    min_node: int = 1
    fc_passes: int = 100
    fc_tol: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "loss", resolve(self.loss))
        variant = _ALIASES.get(self.variant, self.variant)
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "variant", variant)
        if self.J < 2:
            raise ValueError("J must be >= 2")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0.0 <= self.s <= 1.0:
            raise ValueError("shrinkage must lie in [0, 1]")


@dataclass
class BoostReport:
    train_loss: list = field(default_factory=list)  # after h_0, then after each round


@njit(cache=True)
def _scan(rows, Xt, yt, a, b, min_node):
    """Best least-squares split of the segment [a, b): (reduction, feature, position)."""
    d = rows.shape[0]
    m = b - a
    total = 0.0
    for k in range(a, b):
        total += yt[rows[0, k]]
    best = 0.0
    best_f = -1
    best_p = -1
    for f in range(d):
        sl = 0.0
        for p in range(a, b - 1):
            i = rows[f, p]
            sl += yt[i]
            if Xt[f, rows[f, p + 1]] <= Xt[f, i]:
                continue
            nl = p - a + 1
            nr = m - nl
            if nl < min_node or nr < min_node:
                continue
            sr = total - sl
            red = sl * sl / nl + sr * sr / nr - total * total / m
            if red > best:
                best = red
                best_f = f
                best_p = p
    return best, best_f, best_p


@njit(cache=True)
def _grow_ls_tree(order, Xt, yt, J, min_node, rel_eps):
    d, n = order.shape
    rows = order.copy()
    tmp = np.empty(n, dtype=np.int64)
    go_left = np.zeros(n, dtype=np.bool_)
    cap = 2 * J - 1
    parent = np.full(cap, -1, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.full(cap, np.nan)
    seg_a = np.zeros(cap, dtype=np.int64)
    seg_b = np.zeros(cap, dtype=np.int64)
    red = np.full(cap, -1.0)
    bf = np.full(cap, -1, dtype=np.int64)
    bp = np.full(cap, -1, dtype=np.int64)
    seg_b[0] = n
    scale = 0.0
    for i in range(n):
        scale += yt[i] * yt[i]
    floor = rel_eps * max(1.0, scale)
    red[0], bf[0], bp[0] = _scan(rows, Xt, yt, 0, n, min_node)
    n_nodes = 1
    n_leaves = 1
    while n_leaves < J:
        v = -1
        for u in range(n_nodes):
            if left[u] < 0 and bf[u] >= 0 and red[u] > floor and (v < 0 or red[u] > red[v]):
                v = u
        if v < 0:
            break
        f = bf[v]
        p = bp[v]
        a = seg_a[v]
        b = seg_b[v]
        lo = Xt[f, rows[f, p]]
        hi = Xt[f, rows[f, p + 1]]
        thr = lo + 0.5 * (hi - lo)
        if not (lo <= thr and thr < hi):
            thr = lo
        for k in range(a, b):
            i = rows[0, k]
            go_left[i] = Xt[f, i] <= thr
        mid = a
        for g in range(d):
            nl = 0
            nr = 0
            for k in range(a, b):
                i = rows[g, k]
                if go_left[i]:
                    rows[g, a + nl] = i
                    nl += 1
                else:
                    tmp[nr] = i
                    nr += 1
            for k in range(nr):
                rows[g, a + nl + k] = tmp[k]
            mid = a + nl
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        n_leaves += 1
        left[v] = lc
        right[v] = rc
        feature[v] = f
        threshold[v] = thr
        parent[lc] = v
        parent[rc] = v
        seg_a[lc] = a
        seg_b[lc] = mid
        seg_a[rc] = mid
        seg_b[rc] = b
        red[lc], bf[lc], bp[lc] = _scan(rows, Xt, yt, a, mid, min_node)
        red[rc], bf[rc], bp[rc] = _scan(rows, Xt, yt, mid, b, min_node)
    value = np.zeros(n_nodes)
    leaf_of = np.empty(n, dtype=np.int64)
    for u in range(n_nodes):
        if left[u] < 0:
            s = 0.0
            for k in range(seg_a[u], seg_b[u]):
                s += yt[rows[0, k]]
                leaf_of[rows[0, k]] = u
            if seg_b[u] > seg_a[u]:
                value[u] = s / (seg_b[u] - seg_a[u])
    return (n_nodes, parent[:n_nodes], left[:n_nodes], right[:n_nodes], feature[:n_nodes],
            threshold[:n_nodes], value, leaf_of)


def _fit_tree(pseudo_targets, J, index, min_node):
    yt = np.ascontiguousarray(pseudo_targets, dtype=np.float64)
    n_nodes, parent, left, right, feature, threshold, value, leaf_of = _grow_ls_tree(
        index.order, index.Xt, yt, int(J), int(min_node), 1e-12)
    tree = Tree()
    # replay the splits in creation order (by child id) so node ids match
    internal = np.flatnonzero(left >= 0)
    for v in internal[np.argsort(left[internal])]:
        tree.split(v, feature[v], threshold[v], value[left[v]], value[right[v]])
    if n_nodes == 1:
        tree.set_weight(0, value[0])
    return tree, leaf_of


def fit_regression_tree(data, pseudo_targets, J, index=None, min_node=1):
    """Greedy least-squares tree with at most J leaves.

    Repeatedly splits the leaf whose best threshold split most reduces the
    squared error around the leaf means; leaf values are the means.
    """
    if J < 2:
        raise ValueError("J must be >= 2")
    index = index if index is not None else build_sorted_index(data)
    return _fit_tree(pseudo_targets, J, index, min_node)[0]


def _second_derivative(obj, outputs, direction):
    if obj.pairwise:
        dm = direction[obj.pair_i] - direction[obj.pair_j]
        active = 1.0 - (outputs[obj.pair_i] - outputs[obj.pair_j]) > 0
        return float(2.0 * np.sum(dm[active] ** 2))
    _, hh = obj.derivatives(outputs)
    return float(np.dot(hh, direction * direction))


def line_search(obj, outputs, direction, tol=LINE_SEARCH_TOL, max_iter=100):
    """argmin_b of the loss along ``outputs + b * direction`` by 1-D Newton."""
    if obj.kind == "square":
        # the loss is quadratic along any line: one Newton step is exact
        den = float(np.dot(direction, direction))
        return 0.0 if den == 0.0 else float(np.dot(obj.y - outputs, direction)) / den
    beta = 0.0
    current = obj.loss_sum(outputs)
    for _ in range(max_iter):
        h = outputs + beta * direction
        g, _ = obj.derivatives(h)
        d1 = float(np.dot(g, direction))
        d2 = _second_derivative(obj, h, direction)
        if d2 <= 1e-300:
            break
        step = -d1 / d2
        # damp until the loss does not increase
        for _ in range(60):
            trial = obj.loss_sum(outputs + (beta + step) * direction)
            if trial <= current:
                break
            step *= 0.5
        else:
            break
        beta += step
        current = trial
        if abs(step) <= tol * max(1.0, abs(beta)):
            break
    return beta


def _leaf_line_search(obj, outputs, idx):
    if obj.pairwise:
        direction = np.zeros(obj.n)
        direction[idx] = 1.0
        return line_search(obj, outputs, direction)
    sub = Objective(obj.kind, y=obj.y[idx])
    return line_search(sub, outputs[idx], np.ones(idx.size))


def initial_constant(obj):
    """Best constant model (mean for square loss; 0 for pairwise)."""
    if obj.pairwise:
        return 0.0
    if obj.kind == "square":
        return float(obj.y.mean())
    return line_search(obj, np.zeros(obj.n), np.ones(obj.n))


def _group(leaf_of, tree):
    return {int(v): np.flatnonzero(leaf_of == v) for v in tree.leaves()}


def boost(data, config, index=None, callback=None):
    """Train a boosted forest; returns ``(forest, BoostReport)``."""
    obj = Objective.for_dataset(config.loss, data)
    index = index if index is not None else build_sorted_index(data)
    h0 = initial_constant(obj)
    base = Tree()
    base.weight[0] = h0
    forest = Forest([base])
    outputs = np.full(data.n, h0)
    report = BoostReport([obj.value(outputs)])
    fc_state = None
    if config.variant == "fully_corrective":
        fc_state = ForestState(data, obj, index=index, forest=forest, recent_trees=1)
        fc_reg = RegConfig(LEAF_L2, lam=0.0)
        fc_cfg = CorrectionConfig(eta=1.0, passes=config.fc_passes, tol=config.fc_tol)
    for k in range(config.K):
        g, _ = obj.derivatives(outputs)
        tree, leaf_of = _fit_tree(-g, config.J, index, config.min_node)
        members = _group(leaf_of, tree)
        if config.variant == "generic":
            direction = tree.predict(data.X)
            beta = line_search(obj, outputs, direction)
            scale = config.s * beta
            for v in tree.leaves():
                tree.weight[v] *= scale
            tree.wversion += 1
            outputs += scale * direction
            forest.add_tree(tree)
        elif config.variant == "gbdt":
            for v in tree.leaves():
                if obj.kind == "square":
                    # pseudo-targets are the residuals, so the leaf mean is the exact minimiser
                    beta = tree.weight[v]
                else:
                    beta = _leaf_line_search(obj, outputs, members[v])
                tree.weight[v] = config.s * beta
                outputs[members[v]] += config.s * beta
            tree.wversion += 1
            forest.add_tree(tree)
        else:
            for v in tree.leaves():
                tree.weight[v] = 0.0
            tree.wversion += 1
            fc_state.forest.add_tree(tree)
            fc_state.members.append(members)
            fc_state.sorted_members.append(None)
            correct_weights(fc_state, fc_cfg, fc_reg)
            outputs = fc_state.outputs.copy()
        report.train_loss.append(obj.value(outputs))
        if callback is not None:
            callback(k, forest, outputs)
    return forest, report


def fully_correct(forest, data, loss, passes=100, tol=1e-12):
    """Re-optimise every leaf weight of ``forest`` (unregularized); returns a copy."""
    obj = Objective.for_dataset(loss, data)
    state = ForestState(data, obj, forest=forest.copy())
    correct_weights(state, CorrectionConfig(eta=1.0, passes=passes, tol=tol),
                    RegConfig(LEAF_L2, lam=0.0))
    return state.forest


def staged_predict(forest, X):
    """Yield predictions after h_0 and after each subsequent tree."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    out = np.zeros(X.shape[0])
    for tree in forest.trees:
        out = out + tree.predict(X)
        yield out
