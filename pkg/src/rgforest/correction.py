"""Fully-corrective weight optimisation by damped coordinate descent.

Each coordinate is one leaf weight.  The Newton step on the regularized
objective is

    w_v += -eta * (G_v + norm * R'_v) / (H_v + norm * R''_v)

with ``G_v``/``H_v`` the loss derivative sums over instances (or pair ends)
reaching v.  Because every penalty is quadratic in the leaf weights, the
representative rho moves along a fixed column of partials after each step,
so no fixed point is re-solved inside a sweep.

A step whose exact change in Q is positive is halved until Q does not
increase; a coordinate with no such step is left alone for that sweep.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .loss import point_derivatives, point_loss
from .regularizers import LEAF_L2, MIN_PENALTY, _sibling_rho_partials

CURVATURE_EPS = 1e-12
MAX_HALVINGS = 30


@dataclass(frozen=True)
class CorrectionConfig:
    eta: float = 0.5
    passes: int = 10
    interval: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.interval < 1:
            raise ValueError("correction interval must be >= 1")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")


def should_correct(leaves_added_since_last, config):
    return leaves_added_since_last >= config.interval


@dataclass
class CorrectionResult:
    sweeps: int
    objective: np.ndarray  # Q before the first sweep, then after each sweep


@njit(cache=True)
def _leaf_loss_terms(code, pairwise, outputs, y, inst, a, b, pair_i, pair_j, inc_ptr, inc_pairs,
                     in_leaf, delta):
    """(G, H, loss change for step ``delta``) over one leaf's instances."""
    G = 0.0
    H = 0.0
    dl = 0.0
    if not pairwise:
        for k in range(a, b):
            i = inst[k]
            g, h = point_derivatives(code, outputs[i], y[i])
            G += g
            H += h
            if delta != 0.0:
                dl += point_loss(code, outputs[i] + delta, y[i]) - point_loss(code, outputs[i], y[i])
        return G, H, dl
    for k in range(a, b):
        in_leaf[inst[k]] = True
    for k in range(a, b):
        i = inst[k]
        for e in range(inc_ptr[i], inc_ptr[i + 1]):
            p = inc_pairs[e]
            if pair_i[p] == i:
                other = pair_j[p]
                sign = 1.0
            else:
                other = pair_i[p]
                sign = -1.0
            if in_leaf[other]:
                continue
            # margin m = 1 - (h_pref - h_other); moving i by t changes it by -sign*t
            m = 1.0 - sign * (outputs[i] - outputs[other])
            if m > 0.0:
                G += -2.0 * sign * m
                H += 2.0
                if delta != 0.0:
                    dl -= m * m
            if delta != 0.0:
                m2 = m - sign * delta
                if m2 > 0.0:
                    dl += m2 * m2
    for k in range(a, b):
        in_leaf[inst[k]] = False
    return G, H, dl


@njit(cache=True)
def _correct(code, pairwise, outputs, y, norm, pair_i, pair_j, inc_ptr, inc_pairs,
             inst_ptr, inst, w, col_ptr, col_idx, col_val, c_ptr, c_idx, c_val,
             q, rho, beta, lam, eta, passes, tol, q0, history):
    n_leaves = w.shape[0]
    in_leaf = np.zeros(outputs.shape[0], dtype=np.bool_)
    Q = q0
    history[0] = Q
    sweeps = 0
    for sweep in range(passes):
        start = Q
        for u in range(n_leaves):
            a = inst_ptr[u]
            b = inst_ptr[u + 1]
            G, H, _ = _leaf_loss_terms(code, pairwise, outputs, y, inst, a, b, pair_i, pair_j,
                                       inc_ptr, inc_pairs, in_leaf, 0.0)
            r1 = 0.0
            r2 = 0.0
            for k in range(col_ptr[u], col_ptr[u + 1]):
                j = col_idx[k]
                r1 += q[j] * rho[j] * col_val[k]
                r2 += q[j] * col_val[k] * col_val[k]
            r1 *= lam
            r2 *= lam
            den = H + norm * r2
            if den <= CURVATURE_EPS:
                continue
            delta = -eta * (G + norm * r1) / den
            if delta == 0.0 or not math.isfinite(delta):
                continue
            accepted = False
            change = 0.0
            for _ in range(MAX_HALVINGS + 1):
                _, _, dl = _leaf_loss_terms(code, pairwise, outputs, y, inst, a, b, pair_i, pair_j,
                                            inc_ptr, inc_pairs, in_leaf, delta)
                change = dl / norm + r1 * delta + 0.5 * r2 * delta * delta
                if change <= 0.0:
                    accepted = True
                    break
                delta *= 0.5
            if not accepted:
                continue
            for k in range(a, b):
                outputs[inst[k]] += delta
            w[u] += delta
            for k in range(col_ptr[u], col_ptr[u + 1]):
                rho[col_idx[k]] += delta * col_val[k]
            for k in range(c_ptr[u], c_ptr[u + 1]):
                beta[c_idx[k]] += delta * c_val[k]
            Q += change
        sweeps += 1
        history[sweeps] = Q
        if abs(start - Q) < tol * max(abs(start), 1e-300):
            break
    return sweeps


def _csc(columns):
    """Pack a list of (idx, val) columns."""
    ptr = np.zeros(len(columns) + 1, dtype=np.int64)
    for k, (idx, _) in enumerate(columns):
        ptr[k + 1] = ptr[k] + len(idx)
    if columns:
        idx = np.concatenate([c[0] for c in columns]).astype(np.int64)
        val = np.concatenate([c[1] for c in columns]).astype(np.float64)
    else:
        idx = np.zeros(0, dtype=np.int64)
        val = np.zeros(0)
    return ptr, idx, val


def _tree_columns(tree, rs, kind, offset):
    """Nonzero partials d rho / d w_u (and d bbar / d w_u) for each leaf of a tree."""
    a = tree.arrays()
    leaves = np.flatnonzero(a.is_leaf)
    cols, ccols = [], []
    if kind == LEAF_L2:
        for u in leaves:
            cols.append((np.array([offset + u]), np.array([1.0])))
            ccols.append((np.array([offset + u]), np.array([1.0])))
        return leaves, cols, ccols
    if kind == MIN_PENALTY:
        jac = rs.jacobian(tree)
        cmat = rs._cmat
        for k in range(leaves.size):
            nz = np.flatnonzero(jac[:, k])
            cols.append((offset + nz, jac[nz, k]))
            cz = np.flatnonzero(cmat[:, k])
            ccols.append((offset + cz, cmat[cz, k]))
        return leaves, cols, ccols
    for u in leaves:
        col = _sibling_rho_partials(a.parent, a.left, a.right, a.depth, u)
        nz = np.flatnonzero(col)
        cols.append((offset + nz, col[nz]))
        ccols.append((np.zeros(0, dtype=np.int64), np.zeros(0)))
    return leaves, cols, ccols


def correct_weights(state, config, reg_config):
    """Run one correction round on ``state`` (a growth ForestState) in place.

    Coordinates are visited in tree creation order, then leaf creation order.
    Returns a :class:`CorrectionResult` with the objective after each sweep.
    """
    forest = state.forest
    obj = state.objective
    kind = reg_config.kind
    trees = forest.trees
    regs = [state.reg_state(t, reg_config) for t in range(len(trees))]
    offsets = np.cumsum([0] + [t.n_nodes for t in trees])
    q = np.concatenate([rs.q for rs in regs]) if regs else np.zeros(0)
    rho = np.concatenate([rs.rho for rs in regs]) if regs else np.zeros(0)
    beta = np.concatenate([rs.beta for rs in regs]) if regs else np.zeros(0)
    leaf_ids, cols, ccols, inst_lists = [], [], [], []
    for t, (tree, rs) in enumerate(zip(trees, regs)):
        leaves, c, cc = _tree_columns(tree, rs, kind, offsets[t])
        leaf_ids.extend((t, int(u)) for u in leaves)
        cols.extend(c)
        ccols.extend(cc)
        inst_lists.extend(state.members[t][int(u)] for u in leaves)
    col_ptr, col_idx, col_val = _csc(cols)
    c_ptr, c_idx, c_val = _csc(ccols)
    inst_ptr = np.zeros(len(inst_lists) + 1, dtype=np.int64)
    inst_ptr[1:] = np.cumsum([len(m) for m in inst_lists])
    inst = (np.concatenate(inst_lists).astype(np.int64) if inst_lists
            else np.zeros(0, dtype=np.int64))
    w = np.array([trees[t].weight[u] for t, u in leaf_ids], dtype=np.float64)
    w0 = w.copy()
    q0 = state.loss() + reg_config.lam * 0.5 * float(np.sum(q * rho * rho))
    history = np.zeros(config.passes + 1)
    sweeps = _correct(obj.code, obj.pairwise, state.outputs, obj.y, obj.norm, obj.pair_i,
                      obj.pair_j, obj.inc_ptr, obj.inc_pairs, inst_ptr, inst, w,
                      col_ptr, col_idx, col_val, c_ptr, c_idx, c_val, q, rho, beta,
                      float(reg_config.lam), float(config.eta), int(config.passes),
                      float(config.tol), q0, history)
    changed = np.flatnonzero(w != w0)
    touched = set()
    for k in changed:
        t, u = leaf_ids[k]
        trees[t].set_weight(u, w[k])
        touched.add(t)
    for t in touched:
        rs = regs[t]
        rs.rho = rho[offsets[t]:offsets[t + 1]].copy()
        if kind == MIN_PENALTY:
            rs.beta = beta[offsets[t]:offsets[t + 1]].copy()
            rs.wversion = trees[t].wversion
        else:
            rs.sync(trees[t])
    if changed.size:
        state.grad, state.hess = obj.derivatives(state.outputs)
    return CorrectionResult(sweeps, history[:sweeps + 1].copy())
