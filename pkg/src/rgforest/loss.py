"""Loss functions with first and second derivatives in the model output.

Decomposable losses ``l(h, y)``:

* square:      (h - y)^2 / 2
* logistic:    ln(1 + exp(-h y)),        y in {-1, +1}
* exponential: exp(-h y),                y in {-1, +1}
* l1l2:        sqrt(1 + r^2) - 1,        r = h - y

plus the pairwise squared hinge ``max(0, 1 - (h_i - h_j))^2`` summed over
preferred pairs ``(i, j)``.
"""

import math

import numpy as np
from numba import njit

SQUARE = "square"
LOGISTIC = "logistic"
EXPONENTIAL = "exponential"
L1L2 = "l1l2"
PAIRWISE = "pairwise_squared_hinge"

KINDS = (SQUARE, LOGISTIC, EXPONENTIAL, L1L2, PAIRWISE)
CODES = {kind: code for code, kind in enumerate(KINDS)}
CLI_TOKENS = {"LS": SQUARE, "Log": LOGISTIC, "Expo": EXPONENTIAL, "L1L2": L1L2,
              "PairSqHinge": PAIRWISE}
MARGIN_KINDS = (LOGISTIC, EXPONENTIAL)


class LossError(ValueError):
    pass


def resolve(kind):
    """Accept either a kind name or its CLI token."""
    kind = CLI_TOKENS.get(kind, kind)
    if kind not in CODES:
        raise LossError(f"unknown loss {kind!r}")
    return kind


@njit(cache=True)
def point_loss(code, h, y):
    if code == 0:
        r = h - y
        return 0.5 * r * r
    if code == 1:
        m = h * y
        if m > 0.0:
            return math.log1p(math.exp(-m))
        return -m + math.log1p(math.exp(m))
    if code == 2:
        return math.exp(-h * y)
    r = h - y
    return math.sqrt(1.0 + r * r) - 1.0


@njit(cache=True)
def point_derivatives(code, h, y):
    if code == 0:
        return h - y, 1.0
    if code == 1:
        m = h * y
        if m >= 0.0:
            e = math.exp(-m)
            s_neg = e / (1.0 + e)
        else:
            s_neg = 1.0 / (1.0 + math.exp(m))
        return -y * s_neg, s_neg * (1.0 - s_neg)
    if code == 2:
        e = math.exp(-h * y)
        return -y * e, e
    r = h - y
    s = math.sqrt(1.0 + r * r)
    return r / s, 1.0 / (s * s * s)


@njit(cache=True)
def _loss_array(code, h, y):
    out = np.empty(h.shape[0])
    for i in range(h.shape[0]):
        out[i] = point_loss(code, h[i], y[i])
    return out


@njit(cache=True)
def _deriv_array(code, h, y, g, hh):
    for i in range(h.shape[0]):
        g[i], hh[i] = point_derivatives(code, h[i], y[i])


@njit(cache=True)
def _deriv_subset(code, h, y, idx, g, hh):
    for k in range(idx.shape[0]):
        i = idx[k]
        g[i], hh[i] = point_derivatives(code, h[i], y[i])


@njit(cache=True)
def pair_term(hi, hj):
    """Value and d/dh_i of one squared-hinge pair term; the kink is inactive."""
    m = 1.0 - (hi - hj)
    if m > 0.0:
        return m * m, -2.0 * m
    return 0.0, 0.0


@njit(cache=True)
def _pairwise(pi, pj, h, g, hh):
    total = 0.0
    for k in range(pi.shape[0]):
        i = pi[k]
        j = pj[k]
        v, d = pair_term(h[i], h[j])
        if d != 0.0:
            total += v
            g[i] += d
            g[j] -= d
            hh[i] += 2.0
            hh[j] += 2.0
    return total


def _check_labels(kind, y):
    if kind in MARGIN_KINDS and not np.all(np.abs(y) == 1.0):
        raise LossError(f"{kind} loss requires labels in {{-1, +1}}")


def _as_arrays(h, y):
    h = np.atleast_1d(np.asarray(h, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    h, y = np.broadcast_arrays(h, y)
    return np.ascontiguousarray(h), np.ascontiguousarray(y)


def loss_value(kind, h, y):
    kind = resolve(kind)
    if kind == PAIRWISE:
        raise LossError("pairwise loss is defined on pairs; use pairwise_loss_terms")
    scalar = np.ndim(h) == 0 and np.ndim(y) == 0
    h, y = _as_arrays(h, y)
    _check_labels(kind, y)
    out = _loss_array(CODES[kind], h, y)
    return float(out[0]) if scalar else out


def loss_derivatives(kind, h, y):
    """Return ``(dl/dh, d2l/dh2)``."""
    kind = resolve(kind)
    if kind == PAIRWISE:
        raise LossError("pairwise loss is defined on pairs; use pairwise_loss_terms")
    scalar = np.ndim(h) == 0 and np.ndim(y) == 0
    h, y = _as_arrays(h, y)
    _check_labels(kind, y)
    g = np.empty_like(h)
    hh = np.empty_like(h)
    _deriv_array(CODES[kind], h, y, g, hh)
    if scalar:
        return float(g[0]), float(hh[0])
    return g, hh


def pairwise_loss_terms(pairs, outputs):
    """Total squared-hinge loss and per-instance derivative accumulations.

    Each pair term is differentiated independently: a violating pair adds
    ``-2m`` to ``g[i]``, ``+2m`` to ``g[j]`` and ``2`` to both second
    derivatives, where ``m = 1 - (h_i - h_j)``.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    h = np.ascontiguousarray(outputs, dtype=np.float64)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= h.shape[0]):
        raise LossError("pair index out of range")
    g = np.zeros_like(h)
    hh = np.zeros_like(h)
    total = _pairwise(np.ascontiguousarray(pairs[:, 0]), np.ascontiguousarray(pairs[:, 1]), h, g, hh)
    return total, g, hh


class Objective:
    """Training loss over a dataset, normalised by n (or by the pair count).

    The normalised loss is ``loss_sum(h) / norm``.  Derivative buffers hold the
    unnormalised per-instance sums, as used by the Newton steps.
    """

    def __init__(self, kind, y=None, pairs=None, n=None):
        self.kind = resolve(kind)
        self.code = CODES[self.kind]
        if self.kind == PAIRWISE:
            if pairs is None:
                raise LossError("pairwise loss needs preference pairs")
            self.pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
            self.n = int(n if n is not None else self.pairs.max() + 1)
            self.y = np.zeros(self.n)
            self.norm = float(max(len(self.pairs), 1))
            self.pair_i = np.ascontiguousarray(self.pairs[:, 0])
            self.pair_j = np.ascontiguousarray(self.pairs[:, 1])
            self._build_incidence()
        else:
            if y is None:
                raise LossError(f"{self.kind} loss needs targets")
            self.y = np.ascontiguousarray(y, dtype=np.float64)
            _check_labels(self.kind, self.y)
            self.n = self.y.shape[0]
            self.norm = float(self.n)
            self.pairs = np.zeros((0, 2), dtype=np.int64)
            self.pair_i = self.pair_j = np.zeros(0, dtype=np.int64)
            self.inc_ptr = np.zeros(self.n + 1, dtype=np.int64)
            self.inc_pairs = np.zeros(0, dtype=np.int64)

    @classmethod
    def for_dataset(cls, kind, data):
        if resolve(kind) == PAIRWISE:
            return cls(kind, pairs=data.pairs, n=data.n)
        return cls(kind, y=data.y)

    @property
    def pairwise(self):
        return self.kind == PAIRWISE

    def _build_incidence(self):
        ends = np.concatenate([self.pair_i, self.pair_j])
        ids = np.concatenate([np.arange(len(self.pairs))] * 2)
        order = np.argsort(ends, kind="stable")
        self.inc_pairs = np.ascontiguousarray(ids[order])
        counts = np.bincount(ends, minlength=self.n)
        self.inc_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def loss_sum(self, outputs):
        if self.pairwise:
            return pairwise_loss_terms(self.pairs, outputs)[0]
        return float(_loss_array(self.code, np.ascontiguousarray(outputs, dtype=np.float64), self.y).sum())

    def value(self, outputs):
        return self.loss_sum(outputs) / self.norm

    def derivatives(self, outputs):
        h = np.ascontiguousarray(outputs, dtype=np.float64)
        if self.pairwise:
            _, g, hh = pairwise_loss_terms(self.pairs, h)
            return g, hh
        g = np.empty_like(h)
        hh = np.empty_like(h)
        _deriv_array(self.code, h, self.y, g, hh)
        return g, hh

    def refresh(self, outputs, idx, g, hh):
        """Bring ``g``/``hh`` up to date after outputs changed on ``idx``."""
        if self.pairwise:
            g2, h2 = self.derivatives(outputs)
            g[:] = g2
            hh[:] = h2
        else:
            _deriv_subset(self.code, outputs, self.y, np.ascontiguousarray(idx, dtype=np.int64), g, hh)

    def loss_change(self, outputs, idx, delta):
        """Exact change in ``loss_sum`` if ``outputs[idx] += delta``."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.pairwise:
            new = outputs.copy()
            new[idx] += delta
            return self.loss_sum(new) - self.loss_sum(outputs)
        h = outputs[idx]
        y = self.y[idx]
        h2 = np.ascontiguousarray(h + delta)
        return float((_loss_array(self.code, h2, y) - _loss_array(self.code, np.ascontiguousarray(h), y)).sum())
