"""The regularized greedy forest training loop, evaluation and cross-validation."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import SplitMix64
from .correction import CorrectionConfig, correct_weights, should_correct
from .dataset import build_sorted_index
from .growth import NEW_TREE, ForestState, apply_operation, best_operation, confirm_operation
from .loss import MARGIN_KINDS, Objective, resolve
from .regularizers import RegConfig


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters of one training run.

    ``reg.lam`` is used for weight correction and ``lam_g`` (default: the same
    value) for scoring structure changes.
    """

    loss: str = "square"
    reg: RegConfig = field(default_factory=RegConfig)
    lam_g: float | None = None
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    recent_trees: int = 1
    min_node: int = 1
    max_leaf: int = 1000
    report_every: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "loss", resolve(self.loss))
        if self.reg.lam <= 0 or (self.lam_g is not None and self.lam_g <= 0):
            raise ValueError("lambda and lambda_g must be positive")
        if self.max_leaf < 1:
            raise ValueError("max_leaf must be >= 1")
        if self.recent_trees < 1 or self.min_node < 1:
            raise ValueError("recent_trees and min_node must be >= 1")

    @property
    def growth_reg(self):
        return self.reg if self.lam_g is None else self.reg.with_lam(self.lam_g)


@dataclass
class ReportRecord:
    leaves: int
    objective: float
    loss: float
    monitor: float | None = None


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    operations: int = 0
    corrections: int = 0
    stop_reason: str = ""
    seconds: float = 0.0
    model_path: str | None = None


def _metric_for(loss):
    return "accuracy" if loss in MARGIN_KINDS else "rmse"


def train_rgf(data, config, monitor=None, index=None, callback=None):
    """Train a forest from scratch.

    Parameters
    ----------
    data : Dataset
    config : TrainerConfig
    monitor : Dataset, optional
        Held-out data evaluated at every report record.
    index : SortedFeatureIndex, optional
        Reused presorted index of ``data``.
    callback : callable, optional
        Called as ``callback(event, state, info)`` after every accepted
        operation (``event="op"``, info the applied op) and every correction
        sweep round (``event="correct"``, info the CorrectionResult).

    Returns
    -------
    (Forest, TrainReport)
    """
    if data.n == 0:
        raise ValueError("empty dataset")
    t0 = time.perf_counter()
    objective = Objective.for_dataset(config.loss, data)
    index = index if index is not None else build_sorted_index(data)
    state = ForestState(data, objective, index=index, recent_trees=config.recent_trees)
    greg = config.growth_reg
    creg = config.reg
    report = TrainReport()
    metric = _metric_for(config.loss)

    def record():
        mon = None
        if monitor is not None:
            mon = evaluate(state.forest, monitor, metric)
        report.records.append(ReportRecord(state.forest.n_leaves, state.objective_value(creg),
                                           state.loss(), mon))

    since_correction = 0
    next_report = config.report_every
    while True:
        if state.forest.n_leaves >= config.max_leaf:
            report.stop_reason = "max_leaf"
            break
        op = best_operation(state, greg, min_node=config.min_node)
        if op is not None:
            op = confirm_operation(state, op)
        if op is None:
            report.stop_reason = "no_improvement"
            break
        apply_operation(state, op)
        report.operations += 1
        since_correction += 2 if op.kind == NEW_TREE else 1
        if callback is not None:
            callback("op", state, op)
        if should_correct(since_correction, config.correction):
            res = correct_weights(state, config.correction, creg)
            report.corrections += 1
            since_correction = 0
            if callback is not None:
                callback("correct", state, res)
        if config.report_every and state.forest.n_leaves >= next_report:
            record()
            while next_report <= state.forest.n_leaves:
                next_report += config.report_every
    if len(state.forest):
        res = correct_weights(state, config.correction, creg)
        report.corrections += 1
        if callback is not None:
            callback("correct", state, res)
    record()
    report.seconds = time.perf_counter() - t0
    return state.forest, report


def evaluate(model, dataset, metric="rmse"):
    """RMSE, or accuracy of the sign of the prediction against +-1 labels."""
    if dataset.y is None:
        raise ValueError("evaluation needs targets")
    pred = model.predict(dataset.X) if hasattr(model, "predict") else np.asarray(model)
    return score(pred, dataset.y, metric)


def score(pred, y, metric="rmse"):
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise ValueError("prediction/target count mismatch")
    if metric == "rmse":
        return float(np.sqrt(np.mean((pred - y) ** 2)))
    if metric == "accuracy":
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("accuracy requires +-1 labels")
        return float(np.mean(np.where(pred > 0, 1.0, -1.0) == y))
    raise ValueError(f"unknown metric {metric!r}")


def fold_assignment(n, folds, seed):
    """Shuffled, balanced fold id per instance."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > n:
        raise ValueError("more folds than instances")
    perm = SplitMix64(seed).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    fold[perm] = np.arange(n) % folds
    return fold


@dataclass
class CVResult:
    best: object
    best_index: int
    scores: list


def cross_validate(data, grid, folds=2, seed=0, metric=None, fit=None):
    """Pick the grid entry with the best mean held-out score.

    ``fit(train, config)`` must return a model with ``predict``; it defaults
    to :func:`train_rgf`.  Ties go to the earlier grid entry.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    if fit is None:
        def fit(train, cfg):
            return train_rgf(train, cfg)[0]
    if metric is None:
        loss = getattr(grid[0], "loss", "square")
        metric = _metric_for(resolve(loss))
    fold = fold_assignment(data.n, folds, seed)
    scores = []
    for cfg in grid:
        vals = []
        for k in range(folds):
            train = data.subset(np.flatnonzero(fold != k))
            held = data.subset(np.flatnonzero(fold == k))
            vals.append(evaluate(fit(train, cfg), held, metric))
        scores.append(float(np.mean(vals)))
    better = np.argmin if metric == "rmse" else np.argmax
    best = int(better(scores))
    return CVResult(grid[best], best, scores)


def with_lam(config, lam, lam_g=None):
    return replace(config, reg=config.reg.with_lam(lam), lam_g=lam_g)
