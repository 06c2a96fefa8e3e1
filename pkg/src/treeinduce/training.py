"""Stacked-variant training, the architecture search loop, fine-tuning and
the fixed-depth baseline."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import gating as gt
from .dataset import DatasetView, EmptyPartition
from .soft_tree import (
    DEFAULT_DEPTH_CAP,
    Frontier,
    Gradients,
    TreeModel,
    TreeSuperstructure,
    log_loss,
    mixture_backward,
    nll,
)
from .structure import CandidateSet, Variant, VariantKind, commit, sample_candidates

logger = logging.getLogger(__name__)

# independent generator stream for fine-tuning shuffles
_FINETUNE_STREAM = 1


class NonpositiveBaseline(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 0.05
    batch_size: int = 32
    epochs_per_iteration: int = 20
    iterations: int = 10
    baseline_epochs: int = 200
    finetune_epochs: int = 200
    seed: int = 0
    depth: int = 5
    depth_cap: int = DEFAULT_DEPTH_CAP
    tau0: float = 1.0
    discount: float = 0.99
    n_candidates: int = 3

    def __post_init__(self):
        if not self.step_size >= 0:
            raise ValueError("step_size must be nonnegative")
        for name in ("batch_size", "epochs_per_iteration", "iterations", "n_candidates"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("baseline_epochs", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 1 <= self.depth <= self.depth_cap:
            raise ValueError(f"depth must lie in [1, {self.depth_cap}]")
        self.schedule  # validates tau0 / discount

    @property
    def schedule(self) -> gt.AnnealSchedule:
        return gt.AnnealSchedule(self.tau0, self.discount)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchState:
    tree: TreeSuperstructure
    base: Frontier
    candidates: CandidateSet
    gating: gt.GatingState
    schedule: gt.AnnealSchedule
    rng: np.random.Generator
    iteration: int = 0
    train_gating: bool = True

    @classmethod
    def single(cls, tree: TreeSuperstructure, frontier: Frontier, rng: np.random.Generator) -> "SearchState":
        """State that trains one frontier with no gate."""
        schedule = gt.AnnealSchedule()
        return cls(
            tree=tree,
            base=frontier,
            candidates=CandidateSet((Variant(0, VariantKind.BASE, frontier),)),
            gating=gt.GatingState.reset(1, schedule),
            schedule=schedule,
            rng=rng,
            train_gating=False,
        )


def combined_backward(state: SearchState, X, y) -> tuple[float, Gradients, np.ndarray]:
    """Combined log-loss with gradients for the tree and the gating logits."""
    pi = gt.weights(state.gating)
    res = mixture_backward(state.tree, state.candidates.frontiers, pi, X, y)
    if res.component_true_prob is None:
        return res.loss, res.grads, np.zeros(len(pi))
    dloss_dpi = res.dloss_dprob @ res.component_true_prob
    return res.loss, res.grads, gt.weights_jacobian(state.gating).T @ dloss_dpi


def combined_loss(state: SearchState, X, y) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        raise EmptyPartition("combined loss of an empty batch")
    probs = gt.combined_predict(state.tree, state.candidates, state.gating, np.asarray(X))
    return nll(np.atleast_2d(probs), y)


def sgd_epoch(state: SearchState, X, y, step_size: float, batch_size: int):
    """One seeded, shuffled pass of plain mini-batch gradient descent.

    The last short batch is kept.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    order = state.rng.permutation(len(y))
    for start in range(0, len(y), batch_size):
        idx = order[start:start + batch_size]
        _, grads, g_gate = combined_backward(state, X[idx], y[idx])
        state.tree.apply(grads, step_size)
        if state.train_gating:
            state.gating = gt.GatingState(
                state.gating.logits - step_size * g_gate, state.gating.tau, state.gating.step
            )


@dataclass
class IterationRecord:
    iteration: int
    tau: float
    tau_next: float
    candidates: list[str]
    posterior: list[float]
    chosen: int
    chosen_variant: str
    n_leaves: int
    depth: int
    combined_train_loss: float
    train_loss: float
    test_loss: float | None


@dataclass
class RunReport:
    config: dict
    records: list[IterationRecord] = field(default_factory=list)
    initial_frontier: list[int] = field(default_factory=list)
    final_frontier: list[int] = field(default_factory=list)
    final_train_loss: float | None = None
    final_test_loss: float | None = None
    finetuned_train_loss: float | None = None
    finetuned_test_loss: float | None = None

    @property
    def taus(self) -> list[float]:
        return [r.tau for r in self.records]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    model: TreeModel
    train_loss: float
    test_loss: float | None


def _test_partition(data: DatasetView):
    try:
        part = data.test()
    except EmptyPartition:
        return None
    return part if len(part) else None


def _evaluate(model: TreeModel, data: DatasetView) -> FitResult:
    train = data.train()
    test = _test_partition(data)
    return FitResult(
        model=model,
        train_loss=model.log_loss(train.X, train.y),
        test_loss=model.log_loss(test.X, test.y) if test is not None else None,
    )


def fit_frontier(tree: TreeSuperstructure, frontier: Frontier, X, y, epochs: int,
                 config: OptimizerConfig, rng: np.random.Generator):
    """Train ``tree`` in place on a single fixed frontier."""
    state = SearchState.single(tree, frontier, rng)
    for _ in range(epochs):
        sgd_epoch(state, X, y, config.step_size, config.batch_size)


SamplingOverride = Callable[[int, "SearchState", np.ndarray], np.ndarray]


def search(data: DatasetView, config: OptimizerConfig,
           sampling_override: SamplingOverride | None = None) -> tuple[SearchState, RunReport]:
    """Induce an architecture by repeated stacked training and posterior sampling.

    Each iteration builds pruned / base / grafted candidates over the shared
    superstructure, resets the gate, trains tree and gate jointly, samples the
    next base from the gate's posterior and anneals the temperature.
    ``sampling_override(t, state, pi)`` (tests only) may replace the sampling
    distribution.
    """
    train = data.train()
    test = _test_partition(data)
    rng = np.random.default_rng(config.seed)
    schedule = config.schedule
    tree = TreeSuperstructure.initialize(config.depth, data.p, data.class_count, rng, config.depth_cap)
    base = Frontier.full(config.depth)
    state = SearchState(
        tree=tree,
        base=base,
        candidates=CandidateSet((Variant(0, VariantKind.BASE, base),)),
        gating=gt.GatingState.reset(1, schedule),
        schedule=schedule,
        rng=rng,
    )
    report = RunReport(config=config.to_dict(), initial_frontier=list(base.nodes))

    for t in range(1, config.iterations + 1):
        state.iteration = t
        state.candidates = sample_candidates(state.base, state.tree, rng, config.n_candidates)
        state.gating = gt.GatingState.reset(len(state.candidates), schedule, step=state.gating.step)
        tau = state.gating.tau
        for _ in range(config.epochs_per_iteration):
            sgd_epoch(state, train.X, train.y, config.step_size, config.batch_size)
        combined_train = combined_loss(state, train.X, train.y)

        pi = gt.posterior(state.gating)
        probs = pi if sampling_override is None else np.asarray(sampling_override(t, state, pi))
        chosen = int(rng.choice(len(probs), p=probs / probs.sum()))
        variant = state.candidates[chosen]
        state.base = commit(variant)
        state.gating = gt.anneal(state.gating, schedule)

        train_loss = log_loss(state.tree, state.base, train.X, train.y)
        test_loss = log_loss(state.tree, state.base, test.X, test.y) if test is not None else None
        rec = IterationRecord(
            iteration=t,
            tau=tau,
            tau_next=state.gating.tau,
            candidates=[v.describe() for v in state.candidates],
            posterior=pi.tolist(),
            chosen=chosen,
            chosen_variant=variant.describe(),
            n_leaves=len(state.base),
            depth=state.base.depth,
            combined_train_loss=combined_train,
            train_loss=train_loss,
            test_loss=test_loss,
        )
        report.records.append(rec)
        logger.info(
            "iter %d tau=%.6f posterior=[%s] chose=%s leaves=%d train=%.5f test=%s",
            t, tau, ", ".join(f"{v:.4f}" for v in pi), rec.chosen_variant, rec.n_leaves,
            train_loss, "n/a" if test_loss is None else f"{test_loss:.5f}",
        )

    report.final_frontier = list(state.base.nodes)
    report.final_train_loss = report.records[-1].train_loss
    report.final_test_loss = report.records[-1].test_loss
    return state, report


def search_result(state: SearchState, data: DatasetView) -> FitResult:
    """The post-search model (current base frontier) and its losses."""
    return _evaluate(TreeModel(state.tree.copy(), state.base), data)


def finetune(state: SearchState, data: DatasetView, config: OptimizerConfig) -> FitResult:
    """Train only the selected frontier, without the gate, on a copy of the tree."""
    tree = state.tree.copy()
    rng = np.random.default_rng([config.seed, _FINETUNE_STREAM])
    train = data.train()
    fit_frontier(tree, state.base, train.X, train.y, config.finetune_epochs, config, rng)
    return _evaluate(TreeModel(tree, state.base), data)


def train_baseline(data: DatasetView, config: OptimizerConfig) -> FitResult:
    """Fixed full-depth tree, initialized exactly as ``search`` initializes."""
    train = data.train()
    rng = np.random.default_rng(config.seed)
    tree = TreeSuperstructure.initialize(config.depth, data.p, data.class_count, rng, config.depth_cap)
    frontier = Frontier.full(config.depth)
    fit_frontier(tree, frontier, train.X, train.y, config.baseline_epochs, config, rng)
    return _evaluate(TreeModel(tree, frontier), data)


def relative_improvement(baseline_loss: float, model_loss: float) -> float:
    """Percentage reduction of ``model_loss`` relative to ``baseline_loss``."""
    if not baseline_loss > 0:
        raise NonpositiveBaseline(f"baseline loss must be positive, got {baseline_loss}")
    return 100.0 * (baseline_loss - model_loss) / baseline_loss
