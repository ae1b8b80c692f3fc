"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected in ``RESULTS`` and echoed in the pytest
terminal summary (see conftest.py).
"""

import statistics
import time

import numpy as np
import pytest

from rgforest.benchmark import BenchmarkSpec, format_table, run_benchmark, summarize
from rgforest.boosting import GBDTConfig, boost, fully_correct
from rgforest.correction import CorrectionConfig
from rgforest.dataset import Dataset, SynthConfig, synthesize
from rgforest.forest import Forest, Tree, WeightedTreeView, collapse_to_leaf_only, load, save
from rgforest.growth import ForestState, midpoint, newton_deltas
from rgforest.loss import KINDS as LOSS_KINDS
from rgforest.loss import PAIRWISE, Objective, loss_derivatives, loss_value, pairwise_loss_terms
from rgforest.regularizers import (KINDS as REG_KINDS, LEAF_L2, MIN_PENALTY, MIN_PENALTY_SIB,
                                   RegConfig, forest_penalty, penalty, penalty_derivatives,
                                   representation, rho_jacobian, sibling_representation,
                                   solve_min_penalty_fixed_point, split_penalty_delta,
                                   split_penalty_model)
from rgforest.trainer import TrainerConfig, train_rgf

from conftest import random_tree
from oracles import dense_fixed_point, split_copy

RESULTS = {}
TIGHT = dict(tol=1e-13, max_iter=200_000)


def report(num, name, ok, detail):
    line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}: {name} ({detail})"
    RESULTS[num] = line
    print(line)
    assert ok, line


def rel_close(a, b, rel, floor=1e-9):
    return abs(a - b) <= rel * max(abs(a), abs(b)) or abs(a - b) <= floor


# ---------------------------------------------------------------- criterion 1

def _quadratic_fit_minimiser(Q):
    """Fit Q on a 3x3 grid with a full 2-D quadratic and return its stationary point."""
    pts = [(a, b) for a in (-1.0, 0.0, 1.0) for b in (-1.0, 0.0, 1.0)]
    A = np.array([[1, a, b, a * a, b * b, a * b] for a, b in pts])
    c = np.linalg.lstsq(A, np.array([Q(a, b) for a, b in pts]), rcond=None)[0]
    H = np.array([[2 * c[3], c[5]], [c[5], 2 * c[4]]])
    return np.linalg.solve(H, -c[1:3])


def test_criterion_01_newton_split_delta():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    cases = 0
    while cases < 200:
        n = int(rng.integers(4, 51))
        d = int(rng.integers(1, 5))
        X = rng.uniform(size=(n, d))
        data = Dataset(X, rng.normal(size=n))
        lam = float(rng.uniform(0, 1))
        reg = RegConfig(LEAF_L2, lam=lam)
        trees = [random_tree(rng, int(rng.integers(1, 6)), dim=d) for _ in range(int(rng.integers(0, 3)))]
        forest = Forest(trees)
        state = ForestState(data, Objective.for_dataset("square", data), forest=forest)
        t = int(rng.integers(0, len(trees) + 1))
        if t == len(trees):
            tree, leaf, members = Tree(), 0, np.arange(n)
        else:
            tree = trees[t]
            leaf = int(rng.choice(tree.leaves()))
            members = state.members[t][leaf]
        f = int(rng.integers(d))
        vals = np.unique(X[members, f])
        if vals.size < 2:
            continue
        k = int(rng.integers(vals.size - 1))
        thr = midpoint(vals[k], vals[k + 1])
        go_left = X[members, f] <= thr
        L, R = members[go_left], members[~go_left]
        model = split_penalty_model(tree, reg, leaf)
        deltas = newton_deltas([state.grad[L].sum(), state.grad[R].sum()],
                               [state.hess[L].sum(), state.hess[R].sum()], model, state.norm)

        def Q(d1, d2):
            new_trees = [tr.copy() for tr in trees]
            if t == len(trees):
                new_trees.append(split_copy(Tree(), 0, d1, d2, f, thr))
            else:
                new_trees[t] = split_copy(tree, leaf, d1, d2, f, thr)
            F = Forest(new_trees)
            return float(np.mean((F.predict(X) - data.y) ** 2) / 2) + forest_penalty(F, reg)

        ref = _quadratic_fit_minimiser(Q)
        worst = max(worst, float(np.max(np.abs(np.array(deltas) - ref))))
        cases += 1
    seconds = time.perf_counter() - t0
    report(1, "Newton split delta vs brute-force minimiser", worst <= 1e-9 and seconds < 5,
           f"200 cases, max |err| {worst:.2e}, {seconds:.2f}s")


# ---------------------------------------------------------------- criterion 2

def test_criterion_02_min_penalty_solver():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    norm_ok = True
    worst_norm = 0.0
    for _ in range(200):
        tree = random_tree(rng, int(rng.integers(1, 33)), weight_scale=2.0)
        assert tree.n_nodes <= 63
        gamma = float(rng.choice([1.0, 1.5, 2.0]))
        ref, A = dense_fixed_point(tree, gamma)
        res = solve_min_penalty_fixed_point(tree, gamma=gamma, tol=1e-12, max_iter=200_000)
        worst = max(worst, float(np.max(np.abs(res.values - ref))))
        if gamma > 1 and A.size:
            a1 = float(np.abs(A).sum(axis=0).max())
            worst_norm = max(worst_norm, a1)
            norm_ok &= a1 < 1
    seconds = time.perf_counter() - t0
    report(2, "min-penalty fixed point vs dense (I-A)^-1 b", worst <= 1e-8 and norm_ok and seconds < 10,
           f"max-norm err {worst:.2e}, max ||A||_1 (gamma>1) {worst_norm:.4f}, {seconds:.2f}s")


# ---------------------------------------------------------------- criterion 3

def _fd(f, x, s):
    return (f(x + s) - f(x - s)) / (2 * s), (f(x + s) - 2 * f(x) + f(x - s)) / s ** 2


def test_criterion_03_derivative_suite():
    rng = np.random.default_rng(303)
    counts = {}
    failures = []

    def check(label, got, ref):
        counts[label] = counts.get(label, 0) + 1
        if not rel_close(got, ref, 1e-4):
            failures.append((label, got, ref))

    for kind in LOSS_KINDS:
        if kind == PAIRWISE:
            continue
        for _ in range(200):
            h = float(rng.uniform(-4, 4))
            y = float(rng.choice([-1.0, 1.0])) if kind in ("logistic", "exponential") else float(rng.normal(0, 3))
            g, hh = loss_derivatives(kind, h, y)
            fg, fh = _fd(lambda t: loss_value(kind, t, y), h, 1e-3)
            check(f"loss {kind} d1", g, fg)
            check(f"loss {kind} d2", hh, fh)
    done = 0
    while done < 200:
        out = rng.normal(size=5)
        pairs = np.array([rng.choice(5, 2, replace=False) for _ in range(4)])
        i = int(rng.integers(5))
        margins = 1.0 - (out[pairs[:, 0]] - out[pairs[:, 1]])
        if np.min(np.abs(margins)) < 1e-2:
            continue  # second derivative jumps at the hinge
        _, g, hh = pairwise_loss_terms(pairs, out)

        def f(t):
            o = out.copy()
            o[i] = t
            return pairwise_loss_terms(pairs, o)[0]

        fg, fh = _fd(f, out[i], 1e-3)
        check("loss pairwise d1", g[i], fg)
        check("loss pairwise d2", hh[i], fh)
        done += 1

    for kind in REG_KINDS:
        for _ in range(200):
            tree = random_tree(rng, int(rng.integers(1, 12)))
            reg = RegConfig(kind, lam=float(rng.uniform(0.1, 2)),
                            gamma=1.0 if kind == LEAF_L2 else float(rng.choice([1.0, 1.5, 2.0])), **TIGHT)
            leaf = int(rng.choice(tree.leaves()))
            g, hh = penalty_derivatives(tree, reg, leaf)

            def R(t):
                tr = tree.copy()
                tr.set_weight(leaf, t)
                return penalty(tr, reg)

            fg, fh = _fd(R, tree.weight[leaf], 1e-2)
            check(f"penalty {kind} d1", g, fg)
            check(f"penalty {kind} d2", hh, fh)
            # partials of the representative in the leaf weight
            if kind != LEAF_L2:
                jac, leaves, _ = rho_jacobian(tree, reg)
                col = jac[:, list(leaves).index(leaf)]
                v = int(rng.integers(tree.n_nodes))

                def rho_v(t):
                    tr = tree.copy()
                    tr.set_weight(leaf, t)
                    return representation(tr, reg)[1][v]

                check(f"rho partial {kind}", col[v], _fd(rho_v, tree.weight[leaf], 1e-2)[0])
            # split-model partials in the child increments at zero
            model = split_penalty_model(tree, reg, leaf)
            Rs = lambda d1, d2: penalty(split_copy(tree, leaf, d1, d2), reg)
            s = 1e-2
            check(f"split {kind} lin", model.lin, (Rs(s, 0) - Rs(-s, 0)) / (2 * s))
            check(f"split {kind} quad", model.quad, (Rs(s, 0) - 2 * Rs(0, 0) + Rs(-s, 0)) / s ** 2)
            check(f"split {kind} cross", model.cross,
                  (Rs(s, s) - Rs(s, -s) - Rs(-s, s) + Rs(-s, -s)) / (4 * s * s))
    ok = not failures and min(counts.values()) >= 200
    detail = f"{len(counts)} derivative families, min {min(counts.values())} cases each, {len(failures)} failures"
    if failures:
        detail += f"; first: {failures[0]}"
    report(3, "loss and penalty derivatives vs central differences", ok, detail)


# ---------------------------------------------------------------- criterion 4

def test_criterion_04_representation_invariance():
    rng = np.random.default_rng(404)
    worst_pen = 0.0
    worst_pred = 0.0
    for _ in range(100):
        tree = random_tree(rng, int(rng.integers(1, 16)))
        beta = rng.normal(size=tree.n_nodes)
        for u in tree.leaves():
            beta[u] += tree.weight[u] - sum(beta[a] for a in tree.ancestors(u))
        view = WeightedTreeView(tree, beta)
        collapsed = collapse_to_leaf_only(view)
        X = rng.uniform(size=(50, 3))
        worst_pred = max(worst_pred, float(np.max(np.abs(view.predict(X) - tree.predict(X)))))
        worst_pred = max(worst_pred, float(np.max(np.abs(collapsed.predict(X) - tree.predict(X)))))
        for kind in REG_KINDS:
            reg = RegConfig(kind, lam=0.7, gamma=1.0 if kind == LEAF_L2 else 1.5, **TIGHT)
            worst_pen = max(worst_pen, abs(penalty(collapsed, reg) - penalty(tree, reg)))
    report(4, "penalty and predictions invariant across equivalent models",
           worst_pen <= 1e-10 and worst_pred <= 1e-12,
           f"100 trees, max penalty diff {worst_pen:.2e}, max prediction diff {worst_pred:.2e}")


# ---------------------------------------------------------------- criterion 5

def test_criterion_05_sibling_representation():
    rng = np.random.default_rng(505)
    exact = True
    worst_rt = 0.0
    worst_id = 0.0
    for _ in range(200):
        tree = random_tree(rng, int(rng.integers(1, 33)), weight_scale=3.0)
        _, rho = sibling_representation(tree)
        for v in range(tree.n_nodes):
            if not tree.is_leaf(v):
                exact &= rho[tree.left[v]] + rho[tree.right[v]] == 0.0
        back = collapse_to_leaf_only(WeightedTreeView(tree, rho))
        for u in tree.leaves():
            worst_rt = max(worst_rt, abs(back.weight[u] - tree.weight[u]))
        reg = RegConfig(MIN_PENALTY_SIB, lam=float(rng.uniform(0.1, 2)), gamma=float(rng.choice([1.0, 1.5, 2.0])))
        leaf = int(rng.choice(tree.leaves()))
        worst_id = max(worst_id, abs(penalty(split_copy(tree, leaf, 0.0, 0.0), reg) - penalty(tree, reg)))
    report(5, "sum-to-zero sibling representation", exact and worst_rt <= 1e-12 and worst_id <= 1e-12,
           f"exact sibling sums: {exact}, round-trip err {worst_rt:.2e}, R(split(0,0))-R err {worst_id:.2e}")


# ---------------------------------------------------------------- criterion 6

def test_criterion_06_incremental_split_penalty():
    rng = np.random.default_rng(606)
    worst = 0.0
    for k in range(500):
        kind = REG_KINDS[k % 3]
        tree = random_tree(rng, int(rng.integers(1, 16)), weight_scale=2.0)
        reg = RegConfig(kind, lam=float(rng.uniform(0.05, 2)),
                        gamma=1.0 if kind == LEAF_L2 else float(rng.choice([1.0, 1.5, 2.0])),
                        tol=1e-12, max_iter=200_000)
        leaf = int(rng.choice(tree.leaves()))
        d1, d2 = rng.normal(size=2) * 2
        naive = penalty(split_copy(tree, leaf, d1, d2), reg) - penalty(tree, reg)
        worst = max(worst, abs(split_penalty_delta(tree, reg, leaf, d1, d2) - naive))
    report(6, "incremental split penalty vs full recomputation", worst <= 1e-9,
           f"500 candidates, max |err| {worst:.2e}")


# ---------------------------------------------------------------- criterion 7

def _toy(seed, loss):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(500, 5))
    f = np.sin(4 * X[:, 0]) + (X[:, 1] > 0.4) * X[:, 2] - X[:, 3] ** 2
    if loss == "square":
        return Dataset(X, f + 0.2 * rng.normal(size=500))
    return Dataset(X, np.where(f + 0.3 * rng.normal(size=500) > f.mean(), 1.0, -1.0))


def test_criterion_07_monotone_training():
    violations = []
    ops = 0
    sweeps = 0
    for loss in ("square", "logistic"):
        for seed in range(10):
            data = _toy(seed, loss)
            config = TrainerConfig(loss=loss, reg=RegConfig(LEAF_L2, lam=0.01 if loss == "square" else 0.001),
                                   correction=CorrectionConfig(interval=10), max_leaf=80, report_every=0)
            obj = Objective.for_dataset(loss, data)

            def q_exact(forest):
                return obj.value(forest.predict(data.X)) + forest_penalty(forest, config.reg)

            prev = [obj.value(np.zeros(data.n))]

            def cb(event, state, info):
                nonlocal ops, sweeps
                q = q_exact(state.forest)
                if event == "op":
                    ops += 1
                    if not q < prev[0]:
                        violations.append((loss, seed, "op", prev[0], q))
                else:
                    sweeps += len(info.objective) - 1
                    if np.any(np.diff(info.objective) > 1e-12) or q > prev[0] + 1e-12:
                        violations.append((loss, seed, "correct", prev[0], q))
                prev[0] = q

            train_rgf(data, config, callback=cb)
    report(7, "Q strictly decreases per operation, never increases in correction", not violations,
           f"20 runs, {ops} operations, {sweeps} sweeps, {len(violations)} violations")


# ---------------------------------------------------------------- criteria 8, 9

@pytest.fixture(scope="module")
def benchmark_rows():
    t0 = time.perf_counter()
    rows = run_benchmark(BenchmarkSpec())
    return rows, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_08_benchmark_ordering(benchmark_rows):
    rows, seconds = benchmark_rows
    means = summarize(rows)
    print()
    print(format_table(rows))
    wins = [q for q in (5, 10, 20) if means[("rgf", LEAF_L2, q)] < means[("gbdt", "-", q)]]
    cells = ", ".join(f"q={q}: {means[('rgf', LEAF_L2, q)]:.4f} vs {means[('gbdt', '-', q)]:.4f}"
                      for q in (5, 10, 20))
    report(8, "RGF-leaf_l2 beats GBDT on >= 2 of 3 q values in < 30 min",
           len(wins) >= 2 and seconds < 1800, f"{cells}; {seconds / 60:.1f} min")


@pytest.mark.slow
def test_criterion_09_min_penalty_on_simple_targets(benchmark_rows):
    rows, _ = benchmark_rows
    means = summarize(rows)
    sib, l2 = means[("rgf", MIN_PENALTY_SIB, 5)], means[("rgf", LEAF_L2, 5)]
    report(9, "min_penalty_sib mean RMSE <= leaf_l2 on q=5", sib <= l2,
           f"min_penalty_sib {sib:.4f} vs leaf_l2 {l2:.4f}")


# ---------------------------------------------------------------- criterion 10

def test_criterion_10_linear_time():
    def timed(n):
        train, _, _ = synthesize(SynthConfig(q=10, n_train=n, n_test=1, seed=10))
        cfg = TrainerConfig(reg=RegConfig(LEAF_L2, lam=0.1), max_leaf=500, report_every=0)
        t0 = time.perf_counter()
        train_rgf(train, cfg)
        return time.perf_counter() - t0

    timed(500)  # warm the JIT caches
    ratios = []
    for _ in range(3):
        small = timed(4000)
        large = timed(8000)
        ratios.append(large / small)
    ratio = statistics.median(ratios)
    report(10, "training time ratio n=8000 vs n=4000", ratio <= 2.6,
           f"median ratio {ratio:.2f} over trials {[round(r, 2) for r in ratios]}")


# ---------------------------------------------------------------- criterion 11

def test_criterion_11_determinism_and_round_trip(tmp_path):
    train, test, _ = synthesize(SynthConfig(q=5, n_train=500, n_test=10_000, seed=11))
    cfg = TrainerConfig(reg=RegConfig(MIN_PENALTY, lam=0.1, gamma=1.5), max_leaf=200, recent_trees=2)
    paths = [str(tmp_path / f"model{k}.txt") for k in range(2)]
    for p in paths:
        save(train_rgf(train, cfg)[0], p)
    with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
        identical = a.read() == b.read()
    forest = train_rgf(train, cfg)[0]
    same_pred = forest.predict(test.X).tobytes() == load(paths[0]).predict(test.X).tobytes()
    report(11, "byte-identical models and exact save/load predictions", identical and same_pred,
           f"identical files: {identical}, identical predictions on 1e4 inputs: {same_pred}")


# ---------------------------------------------------------------- criterion 12

def test_criterion_12_gbdt_sanity():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    data = Dataset(X, np.array([0.0, 0.0, 1.0, 1.0]))
    _, rep = boost(data, GBDTConfig(J=2, K=1, s=1.0))
    hand = rep.train_loss[-1] == 0.0
    bad = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        Xs = rng.uniform(size=(40, 3))
        toy = Dataset(Xs, np.sin(3 * Xs[:, 0]) + (Xs[:, 1] > 0.5) + 0.1 * rng.normal(size=40))
        gb_forest, gb = boost(toy, GBDTConfig(J=3, K=8, s=1.0, variant="gbdt"))
        _, fc2 = boost(toy, GBDTConfig(J=3, K=2, s=1.0, variant="fc"))
        if np.any(np.array(fc2.train_loss) > np.array(gb.train_loss[:3]) + 1e-12):
            bad.append((seed, "run"))
        obj = Objective("square", y=toy.y)
        for k in range(1, len(gb_forest.trees) + 1):
            prefix = Forest(gb_forest.trees[:k])
            if obj.value(fully_correct(prefix, toy, "square").predict(Xs)) > gb.train_loss[k - 1] + 1e-12:
                bad.append((seed, k))
    report(12, "GBDT hand trace and fully-corrective <= gbdt per round", hand and not bad,
           f"hand-traced loss {rep.train_loss[-1]}, {len(bad)} violations on 10 toys")
