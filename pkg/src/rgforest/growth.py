"""Structured greedy search: split a leaf of a recent tree or start a new tree.

Every candidate is scored with one Newton step per child on the regularized
objective ``Q = loss_sum / norm + R``:

    d_k = -(G_k + norm * dR/dd_k) / (H_k + norm * d2R/dd_k2)

where ``G_k``/``H_k`` sum the loss derivatives over the instances reaching
child k.  The loss change uses the second-order model (exact for square
loss) and the penalty change is exact.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .dataset import build_sorted_index
from .forest import Forest, Tree
from .regularizers import TreeRegState, split_penalty_model

CURVATURE_EPS = 1e-12
NEW_TREE = "new_tree"
SPLIT_LEAF = "split_leaf"


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    deltas: tuple
    gain: float
    n_left: int
    n_right: int


@dataclass(frozen=True)
class StructureOp:
    kind: str
    tree: int  # index of the tree to grow; len(forest) for a new tree
    leaf: int
    feature: int
    threshold: float
    deltas: tuple
    gain: float
    penalty: object = None  # SplitPenalty used to score the op


def newton_deltas(grad_sums, hess_sums, model, norm):
    """Per-child Newton increments for a split, given child derivative sums."""
    out = []
    for G, H in zip(grad_sums, hess_sums):
        den = H + norm * model.quad
        if den <= CURVATURE_EPS:
            raise ValueError("non-positive curvature")
        out.append(-(G + norm * model.lin) / den)
    return tuple(out)


@njit(cache=True)
def _best_split(order, Xt, g, h, c0, lin, quad, cross, norm, min_node, eps):
    d, m = order.shape
    G = 0.0
    H = 0.0
    for p in range(m):
        G += g[order[0, p]]
        H += h[order[0, p]]
    best_gain = -np.inf
    best_f = -1
    best_p = -1
    best_d1 = 0.0
    best_d2 = 0.0
    for f in range(d):
        GL = 0.0
        HL = 0.0
        for p in range(m - 1):
            i = order[f, p]
            GL += g[i]
            HL += h[i]
            if Xt[f, order[f, p + 1]] <= Xt[f, i]:
                continue
            nl = p + 1
            if nl < min_node or m - nl < min_node:
                continue
            GR = G - GL
            HR = H - HL
            den1 = HL + norm * quad
            den2 = HR + norm * quad
            if den1 <= eps or den2 <= eps:
                continue
            d1 = -(GL + norm * lin) / den1
            d2 = -(GR + norm * lin) / den2
            dloss = (GL * d1 + 0.5 * HL * d1 * d1 + GR * d2 + 0.5 * HR * d2 * d2) / norm
            dpen = c0 + lin * (d1 + d2) + 0.5 * quad * (d1 * d1 + d2 * d2) + cross * d1 * d2
            gain = -(dloss + dpen)
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_p = p
                best_d1 = d1
                best_d2 = d2
    return best_f, best_p, best_gain, best_d1, best_d2


def midpoint(lo, hi):
    """Threshold between two adjacent distinct values that keeps ``lo`` left."""
    mid = lo + 0.5 * (hi - lo)
    if not lo <= mid < hi:
        mid = lo
    return mid


def best_split_of_leaf(order, Xt, grad, hess, model, norm, min_node=1):
    """Best threshold split of the instances in ``order`` (one sorted row per feature).

    Returns a :class:`SplitCandidate` or None when no feature has two distinct
    values with ``min_node`` instances on each side.
    """
    order = np.ascontiguousarray(order, dtype=np.int64)
    if order.shape[1] < 2 * max(min_node, 1):
        return None
    f, p, gain, d1, d2 = _best_split(order, Xt, grad, hess, model.c0, model.lin, model.quad,
                                     model.cross, float(norm), int(min_node), CURVATURE_EPS)
    if f < 0 or not math.isfinite(gain):
        return None
    lo = Xt[f, order[f, p]]
    hi = Xt[f, order[f, p + 1]]
    m = order.shape[1]
    return SplitCandidate(int(f), float(midpoint(lo, hi)), (float(d1), float(d2)), float(gain),
                          p + 1, m - p - 1)


class ForestState:
    """Training-time bookkeeping around a forest (the growth scratch space).

    Holds the current outputs and loss derivatives on the training set, the
    instances reaching every leaf (``members``), presorted member rows for
    the trees still open to growth, and cached regularizer states.
    """

    def __init__(self, data, objective, index=None, forest=None, recent_trees=1):
        self.data = data
        self.objective = objective
        self.index = index if index is not None else build_sorted_index(data)
        self.Xt = self.index.Xt
        self.n = data.n
        self.recent_trees = recent_trees
        self.forest = forest if forest is not None else Forest()
        self.outputs = self.forest.predict(data.X) if len(self.forest) else np.zeros(self.n)
        self.grad, self.hess = objective.derivatives(self.outputs)
        self.members = []
        self.sorted_members = []
        self._reg = {}
        self._mask = np.zeros(self.n, dtype=bool)
        for tree in self.forest.trees:
            leaf_of = tree.apply(data.X)
            self.members.append({int(v): np.flatnonzero(leaf_of == v) for v in tree.leaves()})
            self.sorted_members.append(None)
        self._trim_sorted()

    @property
    def norm(self):
        return self.objective.norm

    def loss(self):
        return self.objective.value(self.outputs)

    def reg_state(self, t, config):
        """Cached lambda-free regularizer state for tree ``t``."""
        tree = self.forest.trees[t]
        key = (config.kind, config.gamma, config.tol, config.max_iter)
        st = self._reg.get(t)
        if (st is None or st[0] != key or st[1].version != tree.version
                or st[1].wversion != tree.wversion):
            st = (key, TreeRegState(tree, config))
            self._reg[t] = st
        return st[1]

    def penalty(self, config):
        return sum(self.reg_state(t, config).penalty(config.lam) for t in range(len(self.forest)))

    def objective_value(self, config):
        return self.loss() + self.penalty(config)

    def recent(self):
        k = len(self.forest)
        return range(max(0, k - self.recent_trees), k)

    def _trim_sorted(self):
        keep = set(self.recent())
        for t in range(len(self.sorted_members)):
            if t not in keep:
                self.sorted_members[t] = None

    def sorted_rows(self, t, leaf):
        rows = self.sorted_members[t]
        if rows is None:
            rows = self.sorted_members[t] = {}
        if leaf not in rows:
            # rebuild from the global order for a leaf that was not tracked
            mask = self._mask
            mask[:] = False
            mask[self.members[t][leaf]] = True
            order = self.index.order
            rows[leaf] = order[mask[order]].reshape(order.shape[0], -1)
        return rows[leaf]


_EMPTY_TREE = Tree()


def _new_tree_model(config):
    return split_penalty_model(_EMPTY_TREE, config, 0, TreeRegState(_EMPTY_TREE, config))


def candidate_ops(state, config, min_node=1, trees=None, include_new_tree=True):
    """Best candidate of every eligible leaf plus the new-tree candidate."""
    ops = []
    norm = state.norm
    for t in (state.recent() if trees is None else trees):
        tree = state.forest.trees[t]
        rs = state.reg_state(t, config)
        for leaf in tree.leaves():
            if state.members[t][leaf].size < 2 * min_node:
                continue
            model = split_penalty_model(tree, config, leaf, rs)
            cand = best_split_of_leaf(state.sorted_rows(t, leaf), state.Xt, state.grad, state.hess,
                                      model, norm, min_node)
            if cand is not None:
                ops.append(StructureOp(SPLIT_LEAF, t, leaf, cand.feature, cand.threshold,
                                       cand.deltas, cand.gain, model))
    if include_new_tree:
        model = _new_tree_model(config)
        cand = best_split_of_leaf(state.index.order, state.Xt, state.grad, state.hess, model, norm,
                                  min_node)
        if cand is not None:
            ops.append(StructureOp(NEW_TREE, len(state.forest), 0, cand.feature, cand.threshold,
                                   cand.deltas, cand.gain, model))
    return ops


def best_operation(state, config, min_node=1, trees=None, include_new_tree=True):
    """Highest-gain structure change, or None if nothing reduces Q.

    Searches the leaves of the ``state.recent_trees`` newest trees (or the
    explicit ``trees``) plus starting a new tree.  Ties keep the earlier
    candidate (older tree, older leaf, new tree last).
    """
    best = None
    for op in candidate_ops(state, config, min_node, trees, include_new_tree):
        if best is None or op.gain > best.gain:
            best = op
    if best is None or best.gain <= 0.0:
        return None
    return best


def _op_members(state, op):
    if op.kind == NEW_TREE:
        members = np.arange(state.n)
    else:
        members = state.members[op.tree][op.leaf]
    go_left = state.Xt[op.feature, members] <= op.threshold
    return members, go_left


def exact_change(state, op, deltas=None):
    """Exact ``Q(o(F)) - Q(F)`` of an operation (penalty via its split model)."""
    d1, d2 = op.deltas if deltas is None else deltas
    members, go_left = _op_members(state, op)
    step = np.where(go_left, d1, d2)
    dloss = state.objective.loss_change(state.outputs, members, step)
    return dloss / state.norm + op.penalty.delta(d1, d2)


def confirm_operation(state, op, rel_tol=1e-12, max_halvings=30):
    """Check the exact decrease of ``op``; halve its increments until Q drops.

    Returns the (possibly damped) operation with its exact gain, or None.
    """
    scale = 1.0
    floor = rel_tol * max(1.0, abs(state.loss()))
    for _ in range(max_halvings + 1):
        deltas = (op.deltas[0] * scale, op.deltas[1] * scale)
        change = exact_change(state, op, deltas)
        if change < -floor:
            return replace(op, deltas=deltas, gain=-change)
        scale *= 0.5
    return None


def apply_operation(state, op):
    """Perform ``op`` on the forest and update outputs, derivatives and members."""
    members, go_left = _op_members(state, op)
    d1, d2 = op.deltas
    if op.kind == NEW_TREE:
        if op.tree != len(state.forest):
            raise ValueError("operation was produced against a different forest")
        tree = Tree()
        t = state.forest.add_tree(tree)
        state.members.append({0: members})
        state.sorted_members.append({0: state.index.order})
        alpha = 0.0
        leaf = 0
    else:
        t, leaf = op.tree, op.leaf
        tree = state.forest.trees[t]
        if not tree.is_leaf(leaf):
            raise ValueError("operation was produced against a different forest")
        alpha = tree.weight[leaf]
    left, right = tree.split(leaf, op.feature, op.threshold, alpha + d1, alpha + d2)
    idx_left = members[go_left]
    idx_right = members[~go_left]
    leaf_members = state.members[t]
    del leaf_members[leaf]
    leaf_members[left] = idx_left
    leaf_members[right] = idx_right
    rows = state.sorted_members[t]
    if rows is not None and leaf in rows:
        S = rows.pop(leaf)
        mask = state._mask
        mask[members] = go_left
        d = S.shape[0]
        rows[left] = S[mask[S]].reshape(d, -1)
        rows[right] = S[~mask[S]].reshape(d, -1)
    state.outputs[idx_left] += d1
    state.outputs[idx_right] += d2
    state.objective.refresh(state.outputs, members, state.grad, state.hess)
    state._trim_sorted()
    return t, left, right
