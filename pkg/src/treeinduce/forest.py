"""Forests of independently induced trees combined by probability averaging."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import DatasetView
from .soft_tree import SCHEMA_VERSION, TreeError, TreeModel, nll
from .training import (
    FitResult,
    OptimizerConfig,
    RunReport,
    finetune,
    search,
    search_result,
    train_baseline,
)


def member_seeds(master_seed: int, n_trees: int) -> list[int]:
    """Per-member seeds spawned from ``master_seed``; pairwise distinct."""
    children = np.random.SeedSequence(master_seed).spawn(n_trees)
    seeds = [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]
    if len(set(seeds)) != len(seeds):
        raise ValueError("seed collision among forest members")
    return seeds


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 5
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")

    @property
    def seeds(self) -> list[int]:
        return member_seeds(self.seed, self.n_trees)

    def member_config(self, i: int) -> OptimizerConfig:
        return replace(self.optimizer, seed=self.seeds[i])

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "seed": self.seed, "seeds": self.seeds,
                "optimizer": self.optimizer.to_dict()}


@dataclass
class ForestModel:
    members: list[TreeModel]

    def __post_init__(self):
        if not self.members:
            raise TreeError("forest needs at least one member")
        dims = {(m.tree.p, m.tree.n_classes) for m in self.members}
        if len(dims) != 1:
            raise TreeError("forest members disagree on feature or class count")

    def predict(self, X) -> np.ndarray:
        return forest_predict(self, X)

    def log_loss(self, X, y) -> float:
        return nll(np.atleast_2d(self.predict(X)), np.asarray(y))

    def to_dict(self, config: ForestConfig | None = None) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "forest",
            "config": config.to_dict() if config is not None else None,
            "members": [m.to_dict() for m in self.members],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ForestModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise TreeError(f"unsupported schema_version {doc.get('schema_version')}")
        return cls([TreeModel.from_dict(m) for m in doc["members"]])

    def to_json(self, config: ForestConfig | None = None) -> str:
        return json.dumps(self.to_dict(config))


def forest_predict(model: ForestModel, X) -> np.ndarray:
    """Unweighted mean of the members' class distributions."""
    preds = [m.predict(X) for m in model.members]
    return np.mean(preds, axis=0)


@dataclass
class ForestResult:
    searched: ForestModel
    finetuned: ForestModel
    reports: list[RunReport]
    train_loss: float
    test_loss: float | None
    finetuned_train_loss: float
    finetuned_test_loss: float | None


def _train_member(data: DatasetView, cfg: OptimizerConfig) -> tuple[FitResult, FitResult, RunReport]:
    state, report = search(data, cfg)
    searched = search_result(state, data)
    tuned = finetune(state, data, cfg)
    report.finetuned_train_loss = tuned.train_loss
    report.finetuned_test_loss = tuned.test_loss
    return searched, tuned, report


def _losses(model: ForestModel, data: DatasetView) -> tuple[float, float | None]:
    train = data.train()
    test = data.test() if data.train_mask is not None else None
    return (model.log_loss(train.X, train.y),
            model.log_loss(test.X, test.y) if test is not None and len(test) else None)


def _run(fn, data, configs, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda c: fn(data, c), configs))
    return [fn(data, c) for c in configs]


def train_forest(data: DatasetView, config: ForestConfig, workers: int = 1) -> ForestResult:
    """Search and fine-tune every member independently with its own seed.

    Members share nothing mutable, so ``workers > 1`` runs them on threads
    with results identical to the serial order.
    """
    configs = [config.member_config(i) for i in range(config.n_trees)]
    results = _run(_train_member, data, configs, workers)
    searched = ForestModel([r[0].model for r in results])
    tuned = ForestModel([r[1].model for r in results])
    train_loss, test_loss = _losses(searched, data)
    ft_train, ft_test = _losses(tuned, data)
    return ForestResult(searched, tuned, [r[2] for r in results],
                        train_loss, test_loss, ft_train, ft_test)


def train_forest_baseline(data: DatasetView, config: ForestConfig, workers: int = 1) -> tuple[ForestModel, float, float | None]:
    """Forest of fixed full-depth trees using the same member seeds."""
    configs = [config.member_config(i) for i in range(config.n_trees)]
    fits = _run(train_baseline, data, configs, workers)
    model = ForestModel([f.model for f in fits])
    return (model, *_losses(model, data))
