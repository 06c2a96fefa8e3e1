"""Automatic induction of soft-routed oblique decision trees and forests."""

from .dataset import DatasetView, load_dataset, load_table, preprocess, split
from .forest import ForestConfig, ForestModel, forest_predict, train_forest
from .soft_tree import Frontier, TreeModel, TreeSuperstructure, log_loss, predict
from .training import OptimizerConfig, finetune, relative_improvement, search, train_baseline

__version__ = "0.1.0"

__all__ = [
    "DatasetView", "load_dataset", "load_table", "preprocess", "split",
    "ForestConfig", "ForestModel", "forest_predict", "train_forest",
    "Frontier", "TreeModel", "TreeSuperstructure", "log_loss", "predict",
    "OptimizerConfig", "finetune", "relative_improvement", "search", "train_baseline",
]
