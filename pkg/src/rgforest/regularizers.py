"""Tree-structured regularizers.

Each penalty is defined through one representative ``rho`` of the class of
all-node weightings equivalent to a tree's leaf-only model:

* ``leaf_l2``:         rho = the leaf weights themselves, R = lam * sum w^2 / 2.
* ``min_penalty``:     rho minimises sum gamma^depth * rho^2 / 2.  Writing
  ``bbar_v`` for the path sum of rho down to v, leaves are pinned to their
  weights and every internal node sits at the gamma-weighted average of its
  neighbours; the fixed point is found by in-place sweeps.
* ``min_penalty_sib``: same objective with each sibling pair summing to zero;
  ``bbar_v`` is then the plain mean of the children's ``bbar``.

In every case ``R = lam * sum_v q_v rho_v^2 / 2`` with ``q_v = gamma^depth``
(1 for leaf_l2) and rho linear in the leaf weights, so all penalties are
quadratics in the leaf weights.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

LEAF_L2 = "leaf_l2"
MIN_PENALTY = "min_penalty"
MIN_PENALTY_SIB = "min_penalty_sib"
KINDS = (LEAF_L2, MIN_PENALTY, MIN_PENALTY_SIB)
CLI_TOKENS = {"L2": LEAF_L2, "MinPen": MIN_PENALTY, "MinPenSib": MIN_PENALTY_SIB}


class FixedPointWarning(RuntimeWarning):
    """The min-penalty sweeps hit max_iter before reaching the tolerance."""


class StaleStateError(RuntimeError):
    """A cached regularizer state no longer matches its tree."""


@dataclass(frozen=True)
class RegConfig:
    kind: str = LEAF_L2
    lam: float = 0.1
    gamma: float = 1.0
    tol: float = 1e-8
    max_iter: int = 1000

    def __post_init__(self):
        kind = CLI_TOKENS.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown regularizer {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("fixed-point tol must be > 0 and max_iter >= 1")

    def with_lam(self, lam):
        return RegConfig(self.kind, lam, self.gamma, self.tol, self.max_iter)


@dataclass
class FixedPointResult:
    values: np.ndarray
    iterations: int
    converged: bool


@njit(cache=True)
def _sweeps(parent, left, right, order, beta, gamma, tol, max_iter):
    denom = 1.0 + 2.0 * gamma
    for it in range(max_iter):
        change = 0.0
        for k in range(order.shape[0]):
            v = order[k]
            s = gamma * (beta[left[v]] + beta[right[v]])
            if parent[v] >= 0:
                s += beta[parent[v]]
            new = s / denom
            diff = abs(new - beta[v])
            if diff > change:
                change = diff
            beta[v] = new
        if change <= tol:
            return it + 1, True
    return max_iter, False


def _sweep_order(left, depth):
    internal = np.flatnonzero(left >= 0)
    # deepest first so leaf information reaches the root within one sweep
    return internal[np.lexsort((internal, -depth[internal]))]


def _solve(parent, left, right, depth, beta, gamma, tol, max_iter):
    order = _sweep_order(left, depth)
    beta = np.array(beta, dtype=np.float64)
    it, ok = _sweeps(parent, left, right, order, beta, float(gamma), float(tol), int(max_iter))
    return FixedPointResult(beta, it, ok)


def _node_weights(tree, weights):
    """Node-length weight vector; ``weights`` may be per node or per leaf."""
    a = tree.arrays()
    if weights is None:
        return np.where(a.is_leaf, a.weight, 0.0)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[0] == tree.n_nodes:
        return np.where(a.is_leaf, w, 0.0)
    leaves = tree.leaves()
    if w.shape[0] != len(leaves):
        raise ValueError("weights must be given per node or per leaf")
    out = np.zeros(tree.n_nodes)
    out[leaves] = w
    return out


def solve_min_penalty_fixed_point(tree, weights=None, gamma=1.0, tol=1e-8, max_iter=1000):
    """Auxiliary node values ``bbar`` of the min-penalty representative.

    Leaves stay pinned at their weights; internal nodes are swept in place
    (deepest first) until the largest change in a sweep is ``<= tol``.
    """
    a = tree.arrays()
    beta = _node_weights(tree, weights)
    return _solve(a.parent, a.left, a.right, a.depth, beta, gamma, tol, max_iter)


def _rho_from_beta(parent, beta):
    rho = beta.copy()
    nonroot = parent >= 0
    rho[nonroot] -= beta[parent[nonroot]]
    return rho


def _bottom_up(depth):
    return np.argsort(-depth, kind="stable")


def sibling_representation(tree, weights=None):
    """``(bbar, rho)`` of the sum-to-zero sibling representative."""
    a = tree.arrays()
    beta = _node_weights(tree, weights)
    for v in _bottom_up(a.depth):
        if a.left[v] >= 0:
            beta[v] = 0.5 * (beta[a.left[v]] + beta[a.right[v]])
    rho = _rho_from_beta(a.parent, beta)
    # write each right child as the negated left one so pairs cancel exactly
    internal = np.flatnonzero(a.left >= 0)
    rho[a.left[internal]] = 0.5 * (beta[a.left[internal]] - beta[a.right[internal]])
    rho[a.right[internal]] = -rho[a.left[internal]]
    return beta, rho


def depth_weights(tree_or_depth, config):
    depth = tree_or_depth if isinstance(tree_or_depth, np.ndarray) else tree_or_depth.arrays().depth
    if config.kind == LEAF_L2:
        return np.ones(depth.shape[0])
    return float(config.gamma) ** depth.astype(np.float64)


def representation(tree, config, weights=None):
    """``(bbar, rho, converged)`` for the configured regularizer."""
    a = tree.arrays()
    w = _node_weights(tree, weights)
    if config.kind == LEAF_L2:
        return w, w.copy(), True
    if config.kind == MIN_PENALTY_SIB:
        beta, rho = sibling_representation(tree, w)
        return beta, rho, True
    res = _solve(a.parent, a.left, a.right, a.depth, w, config.gamma, config.tol, config.max_iter)
    return res.values, _rho_from_beta(a.parent, res.values), res.converged


def penalty(tree, config, weights=None):
    """Regularization penalty of one tree."""
    _, rho, ok = representation(tree, config, weights)
    if not ok:
        warnings.warn(f"min-penalty fixed point not converged after {config.max_iter} sweeps; "
                      "using the last iterate", FixedPointWarning, stacklevel=2)
    q = depth_weights(tree, config)
    return float(config.lam * 0.5 * np.sum(q * rho * rho))


def forest_penalty(forest, config):
    return float(sum(penalty(t, config) for t in forest.trees))


def _sibling_rho_partials(parent, left, right, depth, leaf):
    """Closed-form d rho_w / d w_leaf under the sibling constraints."""
    out = np.zeros(parent.shape[0])
    d_u = depth[leaf]
    v = leaf
    while parent[v] >= 0:
        p = parent[v]
        out[v] = 2.0 ** (depth[v] - d_u - 1)
        other = right[p] if left[p] == v else left[p]
        out[other] = -(2.0 ** (depth[other] - d_u - 1))
        v = p
    out[v] = 2.0 ** (-d_u)
    return out


def rho_jacobian(tree, config):
    """Matrix of partials ``d rho_w / d w_u`` (nodes x leaves) and the leaf ids.

    The second return value is the matching ``d bbar_w / d w_u`` matrix for
    ``min_penalty`` (None otherwise).
    """
    a = tree.arrays()
    leaves = np.flatnonzero(a.is_leaf)
    n = tree.n_nodes
    jac = np.zeros((n, leaves.size))
    cmat = None
    if config.kind == LEAF_L2:
        jac[leaves, np.arange(leaves.size)] = 1.0
    elif config.kind == MIN_PENALTY_SIB:
        for col, u in enumerate(leaves):
            jac[:, col] = _sibling_rho_partials(a.parent, a.left, a.right, a.depth, u)
    else:
        cmat = np.zeros((n, leaves.size))
        for col, u in enumerate(leaves):
            unit = np.zeros(n)
            unit[u] = 1.0
            res = _solve(a.parent, a.left, a.right, a.depth, unit, config.gamma, config.tol, config.max_iter)
            cmat[:, col] = res.values
            jac[:, col] = _rho_from_beta(a.parent, res.values)
    return jac, leaves, cmat


def penalty_derivatives(tree, config, leaf, state=None):
    """First and second derivative of the tree penalty in leaf ``leaf``'s weight."""
    if state is None:
        state = TreeRegState(tree, config)
    state.check(tree)
    return state.derivatives(leaf, config.lam, tree)


@dataclass(frozen=True)
class SplitPenalty:
    """Penalty change of splitting one leaf, as a quadratic in (d1, d2).

    ``delta(d1, d2) = c0 + lin*(d1 + d2) + quad*(d1^2 + d2^2)/2 + cross*d1*d2``
    where ``c0 = R(T~(0,0)) - R(T)``.  ``lin`` and ``quad`` are the first and
    second partials in either child increment at zero.
    """

    c0: float
    lin: float
    quad: float
    cross: float

    def delta(self, d1, d2):
        return (self.c0 + self.lin * (d1 + d2)
                + 0.5 * self.quad * (d1 * d1 + d2 * d2) + self.cross * d1 * d2)


def _assemble(q, rho0, rdot, u1, u2, c0, lam):
    # invariant sums over every node of the split tree except the new leaves
    s1 = float(np.dot(q * rho0, rdot)) - q[u1] * rho0[u1] * rdot[u1] - q[u2] * rho0[u2] * rdot[u2]
    s2 = float(np.dot(q * rdot, rdot)) - q[u1] * rdot[u1] ** 2 - q[u2] * rdot[u2] ** 2
    p, m, r, q1 = rdot[u1], rdot[u2], rho0[u1], q[u1]
    return SplitPenalty(
        c0=float(c0),
        lin=float(lam * (s1 + q1 * r * (p + m))),
        quad=float(lam * (s2 + q1 * (p * p + m * m))),
        cross=float(lam * (s2 + 2.0 * q1 * p * m)),
    )


def split_penalty_model(tree, config, leaf, state=None):
    """Precompute the O(1) penalty-change model for splitting ``leaf``."""
    if state is None:
        state = TreeRegState(tree, config)
    state.check(tree)
    a = tree.arrays()
    lam = config.lam
    alpha = a.weight[leaf]
    n = tree.n_nodes
    u1, u2 = n, n + 1
    if config.kind == LEAF_L2:
        return SplitPenalty(0.5 * lam * alpha * alpha, lam * alpha, lam, 0.0)
    parent = np.append(a.parent, [leaf, leaf])
    left = np.append(a.left, [-1, -1])
    right = np.append(a.right, [-1, -1])
    left[leaf], right[leaf] = u1, u2
    depth = np.append(a.depth, [a.depth[leaf] + 1] * 2)
    q = depth_weights(depth, config)
    if config.kind == MIN_PENALTY_SIB:
        # bbar of the split leaf stays alpha, so old rho carry over and the new leaves get 0
        rho0 = np.append(state.rho, [0.0, 0.0])
        rdot = _sibling_rho_partials(parent, left, right, depth, u1)
        return _assemble(q, rho0, rdot, u1, u2, 0.0, lam)
    beta = np.append(state.beta, [alpha, alpha])
    beta[leaf] = alpha
    res = _solve(parent, left, right, depth, beta, config.gamma, config.tol, config.max_iter)
    unit = np.zeros(n + 2)
    unit[u1] = 1.0
    ures = _solve(parent, left, right, depth, unit, config.gamma, config.tol, config.max_iter)
    rho0 = _rho_from_beta(parent, res.values)
    rdot = _rho_from_beta(parent, ures.values)
    f0 = 0.5 * float(np.sum(q * rho0 * rho0))
    return _assemble(q, rho0, rdot, u1, u2, lam * (f0 - state.f), lam)


def split_penalty_delta(tree, config, leaf, d1, d2, state=None):
    """``R(T~(d1, d2)) - R(T)`` for splitting ``leaf`` into two children."""
    return split_penalty_model(tree, config, leaf, state).delta(d1, d2)


class TreeRegState:
    """Cached representative and partials for one tree (lambda-free).

    Weight updates go through :meth:`apply`, which moves rho (and bbar for
    min_penalty) along the cached partials instead of re-solving.
    """

    def __init__(self, tree, config):
        self.kind = config.kind
        self.config = config
        a = tree.arrays()
        self.q = depth_weights(a.depth, config)
        self.beta, self.rho, self.converged = representation(tree, config)
        self._jac = None
        self._cmat = None
        self.leaves = None
        self.col_of = None
        self.version = tree.version
        self.wversion = tree.wversion

    @property
    def f(self):
        """Penalty at lam = 1."""
        return 0.5 * float(np.sum(self.q * self.rho * self.rho))

    def penalty(self, lam):
        return lam * self.f

    def check(self, tree):
        if tree.version != self.version or tree.wversion != self.wversion:
            raise StaleStateError("regularizer state is stale for this tree")

    def _ensure_jac(self, tree):
        if self._jac is None:
            self._jac, leaves, self._cmat = rho_jacobian(tree, self.config)
            self.leaves = leaves
            self.col_of = {int(u): k for k, u in enumerate(leaves)}

    def jacobian(self, tree):
        self._ensure_jac(tree)
        return self._jac

    def derivatives(self, leaf, lam, tree=None):
        if self._jac is None:
            if tree is None:
                raise StaleStateError("partials not built; pass the tree")
            self._ensure_jac(tree)
        col = self._jac[:, self.col_of[int(leaf)]]
        return (float(lam * np.dot(self.q * self.rho, col)),
                float(lam * np.dot(self.q * col, col)))

    def apply(self, tree, leaf, delta):
        """Add ``delta`` to the leaf's weight in both the tree and the cache."""
        self.check(tree)
        self._ensure_jac(tree)
        col = self.col_of[int(leaf)]
        self.rho += delta * self._jac[:, col]
        if self._cmat is not None:
            self.beta += delta * self._cmat[:, col]
        tree.set_weight(leaf, tree.weight[leaf] + delta)
        if self.kind == LEAF_L2:
            self.beta = self.rho.copy()
        elif self.kind == MIN_PENALTY_SIB:
            self.beta, _ = sibling_representation(tree)
        self.wversion = tree.wversion

    def sync(self, tree):
        """Accept externally applied weight changes that already moved rho."""
        a = tree.arrays()
        if self._cmat is not None:
            w = np.where(a.is_leaf, a.weight, 0.0)
            self.beta = self._cmat @ w[self.leaves]
            self.beta[self.leaves] = w[self.leaves]
        elif self.kind == MIN_PENALTY_SIB:
            self.beta, _ = sibling_representation(tree)
        else:
            self.beta = self.rho.copy()
        self.wversion = tree.wversion
