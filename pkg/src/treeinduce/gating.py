"""Input-independent simplex gating over candidate variants.

The gate is a softmax of free logits divided by a temperature.  The same
weights serve as the model posterior from which the next architecture is
sampled; shrinking the temperature concentrates that posterior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .soft_tree import TreeSuperstructure, mixture_predict, n_nodes, softmax
from .structure import CandidateSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnealSchedule:
    tau0: float = 1.0
    discount: float = 0.99

    def __post_init__(self):
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")

    def tau_at(self, step: int) -> float:
        # closed form; repeated multiplication drifts from tau0 * discount**t after a few steps
        return self.tau0 * self.discount**step


@dataclass(frozen=True)
class GatingState:
    logits: np.ndarray
    tau: float
    step: int = 0  # anneal steps taken

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 1 or not np.all(np.isfinite(logits)):
            raise ValueError("gating logits must be a finite vector")
        if not self.tau > 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "logits", logits)

    @classmethod
    def reset(cls, k: int, schedule: AnnealSchedule, step: int = 0) -> "GatingState":
        return cls(np.zeros(k), schedule.tau_at(step), step)

    @property
    def k(self) -> int:
        return len(self.logits)


def weights(state: GatingState) -> np.ndarray:
    return softmax(state.logits / state.tau)


def weights_jacobian(state: GatingState) -> np.ndarray:
    """d weights_j / d logits_k = w_j (delta_jk - w_k) / tau."""
    w = weights(state)
    return (np.diag(w) - np.outer(w, w)) / state.tau


def anneal(state: GatingState, schedule: AnnealSchedule) -> GatingState:
    """Advance the temperature one discount step; logits are unchanged."""
    step = state.step + 1
    return replace(state, tau=schedule.tau_at(step), step=step)


def posterior(state: GatingState) -> np.ndarray:
    """The gating weights read as the posterior over candidate architectures."""
    pi = weights(state)
    logger.debug("posterior over candidates: %s", np.array2string(pi, precision=4))
    return pi


def combined_predict(tree: TreeSuperstructure, candidates: CandidateSet, state: GatingState, X) -> np.ndarray:
    """``sum_j pi_j * predict(frontier_j, x)`` with the same weights for every input."""
    pi = weights(state)
    frontiers = candidates.frontiers
    depth = max(f.depth for f in frontiers)
    coef = np.zeros(n_nodes(depth))
    for f, w in zip(frontiers, pi):
        coef[list(f.nodes)] += w
    single = np.asarray(X).ndim == 1
    out = mixture_predict(tree, coef, depth, X)
    return out[0] if single else out
