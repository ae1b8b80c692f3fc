"""Regularized greedy forest learning with gradient boosting baselines."""

from .boosting import GBDTConfig, boost, fit_regression_tree
from .correction import CorrectionConfig, correct_weights, should_correct
from .dataset import Dataset, SynthConfig, build_sorted_index, load_dataset, synthesize
from .forest import Forest, Tree, load, save
from .regularizers import RegConfig, penalty
from .trainer import TrainerConfig, cross_validate, evaluate, train_rgf

__all__ = [
    "CorrectionConfig", "Dataset", "Forest", "GBDTConfig", "RegConfig", "SynthConfig",
    "TrainerConfig", "Tree", "boost", "build_sorted_index", "correct_weights",
    "cross_validate", "evaluate", "fit_regression_tree", "load", "load_dataset", "penalty",
    "save", "should_correct", "synthesize", "train_rgf",
]

__version__ = "0.1.0"
