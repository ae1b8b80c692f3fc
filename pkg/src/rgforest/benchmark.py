"""Synthetic regression benchmark: RGF against GBDT on random tree ensembles.

For every ``q`` and run a target ensemble is synthesized, each method picks
its hyperparameters by k-fold cross-validation on the training set, is
retrained on the full training set and scored by RMSE on the test set.
"""

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .boosting import GBDTConfig, boost, staged_predict
from .correction import CorrectionConfig
from .dataset import SynthConfig, build_sorted_index, synthesize
from .regularizers import RegConfig
from .trainer import TrainerConfig, evaluate, fold_assignment, train_rgf

CSV_COLUMNS = ("method", "reg", "q", "run", "selected_params", "test_rmse", "leaves",
               "train_seconds")


@dataclass(frozen=True)
class BenchmarkSpec:
    q_values: tuple = (5, 10, 20)
    runs: int = 3
    n_train: int = 2000
    n_test: int = 20000
    dim: int = 10
    num_target_trees: int = 100
    rgf_lambdas: tuple = (1.0, 0.1, 0.01)
    rgf_regs: tuple = ("leaf_l2", "min_penalty_sib")
    rgf_max_leaf: int = 1000
    rgf_gamma: float = 1.0
    gbdt_J: tuple = (5, 10, 15, 20, 25)
    gbdt_s: tuple = (0.5, 0.1, 0.05, 0.01, 0.005, 0.001)
    gbdt_K_max: int = 1000
    include_gbdt: bool = True
    folds: int = 2
    seed: int = 0
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)

    def __post_init__(self):
        if not (self.q_values and self.rgf_lambdas and self.gbdt_J and self.gbdt_s):
            raise ValueError("benchmark grids must be non-empty")
        if self.runs < 1 or self.folds < 2:
            raise ValueError("runs >= 1 and folds >= 2 required")

    def run_seed(self, q, run):
        return self.seed * 1_000_003 + q * 1009 + run


@dataclass
class BenchmarkRow:
    method: str
    reg: str
    q: int
    run: int
    selected_params: str
    test_rmse: float
    leaves: int
    train_seconds: float

    def as_tuple(self):
        return (self.method, self.reg, self.q, self.run, self.selected_params,
                f"{self.test_rmse:.6f}", self.leaves, f"{self.train_seconds:.3f}")


def _folds(train, spec, seed):
    fold = fold_assignment(train.n, spec.folds, seed)
    out = []
    for k in range(spec.folds):
        tr = train.subset(np.flatnonzero(fold != k))
        out.append((tr, build_sorted_index(tr), train.subset(np.flatnonzero(fold == k))))
    return out


def _rgf_config(spec, reg, lam):
    return TrainerConfig(loss="square", reg=RegConfig(reg, lam=lam, gamma=spec.rgf_gamma),
                         correction=spec.correction, max_leaf=spec.rgf_max_leaf, report_every=0)


def select_rgf(spec, reg, folds):
    scores = []
    for lam in spec.rgf_lambdas:
        cfg = _rgf_config(spec, reg, lam)
        vals = [evaluate(train_rgf(tr, cfg, index=idx)[0], held) for tr, idx, held in folds]
        scores.append(float(np.mean(vals)))
    return spec.rgf_lambdas[int(np.argmin(scores))], scores


def select_gbdt(spec, folds):
    """Grid over (J, s); K chosen from the staged held-out RMSE curve."""
    best = None
    for J in spec.gbdt_J:
        for s in spec.gbdt_s:
            cfg = GBDTConfig(J=J, K=spec.gbdt_K_max, s=s, variant="gbdt")
            curve = np.zeros(spec.gbdt_K_max + 1)
            for tr, idx, held in folds:
                forest, _ = boost(tr, cfg, index=idx)
                for k, pred in enumerate(staged_predict(forest, held.X)):
                    curve[k] += np.sqrt(np.mean((pred - held.y) ** 2)) / len(folds)
            K = int(np.argmin(curve[1:])) + 1
            if best is None or curve[K] < best[0]:
                best = (float(curve[K]), J, s, K)
    return best


def run_benchmark(spec, progress=None):
    """Run every (q, run) cell and return a list of :class:`BenchmarkRow`."""
    rows = []
    for q in spec.q_values:
        for run in range(spec.runs):
            seed = spec.run_seed(q, run)
            train, test, _ = synthesize(SynthConfig(q=q, num_target_trees=spec.num_target_trees,
                                                    dim=spec.dim, n_train=spec.n_train,
                                                    n_test=spec.n_test, seed=seed))
            index = build_sorted_index(train)
            folds = _folds(train, spec, seed)
            for reg in spec.rgf_regs:
                t0 = time.perf_counter()
                lam, _ = select_rgf(spec, reg, folds)
                forest, _ = train_rgf(train, _rgf_config(spec, reg, lam), index=index)
                rows.append(BenchmarkRow("rgf", reg, q, run, f"lambda={lam:g}",
                                         evaluate(forest, test), forest.n_leaves,
                                         time.perf_counter() - t0))
                if progress:
                    progress(rows[-1])
            if spec.include_gbdt:
                t0 = time.perf_counter()
                _, J, s, K = select_gbdt(spec, folds)
                forest, _ = boost(train, GBDTConfig(J=J, K=K, s=s, variant="gbdt"), index=index)
                rows.append(BenchmarkRow("gbdt", "-", q, run, f"J={J};s={s:g};K={K}",
                                         evaluate(forest, test), forest.n_leaves,
                                         time.perf_counter() - t0))
                if progress:
                    progress(rows[-1])
    return rows


def to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.as_tuple())
    return buf.getvalue()


def summarize(rows):
    """Mean test RMSE per (method, reg, q)."""
    acc = {}
    for r in rows:
        acc.setdefault((r.method, r.reg, r.q), []).append(r.test_rmse)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def format_table(rows):
    means = summarize(rows)
    qs = sorted({k[2] for k in means})
    methods = sorted({k[:2] for k in means}, key=lambda m: (m[0] != "rgf", m[1]))
    head = f"{'method':<24}" + "".join(f"{'q=' + str(q):>10}" for q in qs)
    lines = [head, "-" * len(head)]
    for m in methods:
        name = m[0] if m[1] == "-" else f"{m[0]}-{m[1]}"
        cells = "".join(f"{means[(m[0], m[1], q)]:>10.4f}" if (m[0], m[1], q) in means
                        else f"{'':>10}" for q in qs)
        lines.append(f"{name:<24}{cells}")
    return "\n".join(lines) + "\n"


def with_overrides(spec, **kw):
    return replace(spec, **kw)
