"""Soft-routed oblique tree over a complete binary superstructure.

Nodes are stored in heap order (root 0, children of ``i`` at ``2i+1`` and
``2i+2``).  Every node owns an oblique split ``(w, b)`` and a leaf logit
vector, so any frontier (antichain covering all root-to-bottom paths) can be
evaluated over the same arrays.  Node ``i`` routes an input right with
probability ``sigmoid(w_i . x + b_i)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset import EmptyPartition

SCHEMA_VERSION = 1
PROB_FLOOR = 1e-12
DEFAULT_DEPTH_CAP = 10


class TreeError(ValueError):
    pass


class LeafNotInFrontier(TreeError):
    pass


class CapacityExceeded(TreeError):
    pass


class InvalidFrontier(TreeError):
    pass


def node_depth(i: int) -> int:
    return (i + 1).bit_length() - 1


def n_nodes(depth: int) -> int:
    return 2 ** (depth + 1) - 1


def children(i: int) -> tuple[int, int]:
    return 2 * i + 1, 2 * i + 2


def parent(i: int) -> int:
    if i == 0:
        raise TreeError("root has no parent")
    return (i - 1) // 2


def ancestors(i: int) -> list[int]:
    """Strict ancestors of ``i``, root first."""
    out = []
    while i > 0:
        i = (i - 1) // 2
        out.append(i)
    return out[::-1]


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class Frontier:
    """The set of nodes at which routing stops and leaf classifiers fire."""

    nodes: tuple[int, ...]

    def __init__(self, nodes: Iterable[int]):
        object.__setattr__(self, "nodes", tuple(sorted(int(n) for n in nodes)))
        self._validate()

    def _validate(self):
        if not self.nodes:
            raise InvalidFrontier("empty frontier")
        if self.nodes[0] < 0:
            raise InvalidFrontier("negative node index")
        if len(set(self.nodes)) != len(self.nodes):
            raise InvalidFrontier("duplicate nodes")
        members = set(self.nodes)
        for n in self.nodes:
            if members.intersection(ancestors(n)):
                raise InvalidFrontier(f"node {n} lies below another frontier node")
        # an antichain covers every path iff its dyadic masses sum to one
        D = self.depth
        if sum(2 ** (D - node_depth(n)) for n in self.nodes) != 2**D:
            raise InvalidFrontier("frontier does not cover every root-to-bottom path")

    @classmethod
    def full(cls, depth: int) -> "Frontier":
        return cls(range(2**depth - 1, 2 ** (depth + 1) - 1))

    @classmethod
    def root(cls) -> "Frontier":
        return cls([0])

    @property
    def depth(self) -> int:
        return max(node_depth(n) for n in self.nodes)

    def __contains__(self, node) -> bool:
        return node in self.nodes

    def __iter__(self):
        return iter(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def internal_nodes(self) -> list[int]:
        """Nodes strictly above the frontier, i.e. the active splits."""
        inner = set()
        for n in self.nodes:
            inner.update(ancestors(n))
        return sorted(inner)

    def graft(self, leaf: int) -> "Frontier":
        if leaf not in self:
            raise LeafNotInFrontier(f"node {leaf} is not a frontier leaf")
        return Frontier([n for n in self.nodes if n != leaf] + list(children(leaf)))

    def prune(self, node: int) -> "Frontier":
        left, right = children(node)
        if left not in self or right not in self:
            raise InvalidFrontier(f"children of node {node} are not both frontier leaves")
        return Frontier([n for n in self.nodes if n not in (left, right)] + [node])

    def indicator(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[list(self.nodes)] = 1.0
        return out


class TreeSuperstructure:
    """Complete binary tree of split and leaf parameters, grown lazily to ``cap``."""

    def __init__(self, weights, bias, logits, cap: int = DEFAULT_DEPTH_CAP):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.logits = np.asarray(logits, dtype=np.float64)
        self.cap = int(cap)
        m = self.weights.shape[0]
        depth = (m + 1).bit_length() - 2
        if m != n_nodes(depth) or self.bias.shape != (m,) or self.logits.shape[0] != m:
            raise TreeError("parameter arrays are not a complete binary tree")
        if not 1 <= depth <= self.cap:
            raise TreeError(f"depth {depth} outside [1, {self.cap}]")
        if not all(np.all(np.isfinite(a)) for a in (self.weights, self.bias, self.logits)):
            raise TreeError("non-finite parameters")

    @classmethod
    def initialize(cls, depth: int, p: int, n_classes: int, rng: np.random.Generator,
                   cap: int = DEFAULT_DEPTH_CAP) -> "TreeSuperstructure":
        if not 1 <= depth <= cap:
            raise TreeError(f"depth {depth} outside [1, {cap}]")
        m = n_nodes(depth)
        bound = 1.0 / np.sqrt(p)
        return cls(
            rng.uniform(-bound, bound, size=(m, p)),
            np.zeros(m),
            np.zeros((m, n_classes)),
            cap=cap,
        )

    @property
    def max_depth(self) -> int:
        return (self.weights.shape[0] + 1).bit_length() - 2

    @property
    def p(self) -> int:
        return self.weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "TreeSuperstructure":
        return TreeSuperstructure(self.weights.copy(), self.bias.copy(), self.logits.copy(), self.cap)

    def grow(self, depth: int, rng: np.random.Generator):
        """Allocate levels down to ``depth`` with freshly initialized parameters."""
        if depth > self.cap:
            raise CapacityExceeded(f"depth {depth} exceeds cap {self.cap}")
        if depth <= self.max_depth:
            return
        extra = n_nodes(depth) - self.size
        bound = 1.0 / np.sqrt(self.p)
        self.weights = np.vstack([self.weights, rng.uniform(-bound, bound, size=(extra, self.p))])
        self.bias = np.concatenate([self.bias, np.zeros(extra)])
        self.logits = np.vstack([self.logits, np.zeros((extra, self.n_classes))])

    def init_split(self, node: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(self.p)
        self.weights[node] = rng.uniform(-bound, bound, size=self.p)
        self.bias[node] = 0.0

    def apply(self, grads: "Gradients", step_size: float):
        self.weights -= step_size * grads.weights
        self.bias -= step_size * grads.bias
        self.logits -= step_size * grads.logits

    def restricted(self, frontier: Frontier) -> "TreeSuperstructure":
        """Copy of the nodes at or above ``frontier``; deeper nodes are zeroed."""
        d = max(frontier.depth, 1)
        keep = frontier.internal_nodes() + list(frontier.nodes)
        m = n_nodes(d)
        out = TreeSuperstructure(np.zeros((m, self.p)), np.zeros(m), np.zeros((m, self.n_classes)), self.cap)
        out.weights[keep] = self.weights[keep]
        out.bias[keep] = self.bias[keep]
        out.logits[keep] = self.logits[keep]
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "max_depth": self.max_depth,
            "cap": self.cap,
            "p": self.p,
            "n_classes": self.n_classes,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "logits": self.logits.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TreeSuperstructure":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise TreeError(f"unsupported schema_version {doc.get('schema_version')}")
        tree = cls(doc["weights"], doc["bias"], doc["logits"], cap=doc["cap"])
        if (tree.max_depth, tree.p, tree.n_classes) != (doc["max_depth"], doc["p"], doc["n_classes"]):
            raise TreeError("declared dimensions disagree with parameter arrays")
        return tree


@dataclass
class Gradients:
    weights: np.ndarray
    bias: np.ndarray
    logits: np.ndarray

    @classmethod
    def zeros_like(cls, tree: TreeSuperstructure) -> "Gradients":
        return cls(np.zeros_like(tree.weights), np.zeros_like(tree.bias), np.zeros_like(tree.logits))

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in (self.weights, self.bias, self.logits))))


def _as_batch(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[None, :] if X.ndim == 1 else X


def _forward(tree: TreeSuperstructure, X: np.ndarray, depth: int):
    """Right-routing probabilities of the ``2^depth - 1`` splits and reach
    probabilities of all ``2^(depth+1) - 1`` nodes."""
    n_split = 2**depth - 1
    s = sigmoid(X @ tree.weights[:n_split].T + tree.bias[:n_split])
    mu = np.empty((X.shape[0], n_nodes(depth)))
    mu[:, 0] = 1.0
    for d in range(depth):
        lo, hi = 2**d - 1, 2 ** (d + 1) - 1
        parent_mu, s_lvl = mu[:, lo:hi], s[:, lo:hi]
        nxt = mu[:, hi:2 * hi + 1]
        nxt[:, 0::2] = parent_mu * (1.0 - s_lvl)
        nxt[:, 1::2] = parent_mu * s_lvl
    return s, mu


def route_probability(tree: TreeSuperstructure, node: int, x) -> float:
    """Probability that ``x`` is routed to the right child of ``node``."""
    x = np.asarray(x, dtype=np.float64)
    return float(sigmoid(x @ tree.weights[node] + tree.bias[node]))


def path_probability(tree: TreeSuperstructure, frontier: Frontier, leaf: int, x) -> float:
    if leaf not in frontier:
        raise LeafNotInFrontier(f"node {leaf} is not in the frontier")
    prob = 1.0
    node = leaf
    while node > 0:
        up = (node - 1) // 2
        right = route_probability(tree, up, x)
        prob *= right if node == 2 * up + 2 else 1.0 - right
        node = up
    return prob


def mixture_predict(tree: TreeSuperstructure, coef: np.ndarray, depth: int, X) -> np.ndarray:
    """``sum_n coef_n * reach_n(x) * softmax(logits_n)`` over nodes down to ``depth``."""
    X = _as_batch(X)
    _, mu = _forward(tree, X, depth)
    Q = softmax(tree.logits[: n_nodes(depth)])
    return (mu * coef) @ Q


def predict(tree: TreeSuperstructure, frontier: Frontier, X) -> np.ndarray:
    """Class distribution(s) of the tree cut at ``frontier``; 1-D in, 1-D out."""
    single = np.asarray(X).ndim == 1
    X = _as_batch(X)
    _, mu = _forward(tree, X, frontier.depth)
    leaves = list(frontier.nodes)
    out = mu[:, leaves] @ softmax(tree.logits[leaves])
    return out[0] if single else out


def nll(probs: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-probability of the true classes, floored at 1e-12."""
    py = probs[np.arange(len(y)), y]
    return float(np.mean(-np.log(np.maximum(py, PROB_FLOOR))))


def log_loss(tree: TreeSuperstructure, frontier: Frontier, X, y) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        raise EmptyPartition("log-loss of an empty partition")
    return nll(predict(tree, frontier, X), y)


@dataclass
class MixtureResult:
    loss: float
    grads: Gradients
    component_true_prob: np.ndarray | None  # (N, K) per-frontier p(y|x)
    true_prob: np.ndarray  # (N,) mixture p(y|x)
    dloss_dprob: np.ndarray  # (N,) d(mean loss)/d p(y|x), zero where floored


def mixture_backward(
    tree: TreeSuperstructure,
    frontiers: Sequence[Frontier],
    mix: np.ndarray,
    X,
    y,
) -> MixtureResult:
    """Loss and exact gradients of the mean log-loss of ``sum_j mix_j * predict(F_j)``.

    The mixture collapses to per-node coefficients ``c_n = sum_j mix_j [n in F_j]``.
    Split gradients use conditional subtree values
    ``U_n = c_n q_n(y) + (1 - s_n) U_left + s_n U_right`` so that
    ``d p(y|x) / d z_i = reach_i * (U_right - U_left) * s_i (1 - s_i)``.
    """
    X = _as_batch(X)
    y = np.asarray(y)
    N = len(y)
    if N == 0:
        raise EmptyPartition("gradient of an empty batch")
    depth = max(f.depth for f in frontiers)
    m = n_nodes(depth)
    coef = np.zeros(m)
    for f, w in zip(frontiers, mix):
        coef[list(f.nodes)] += w

    s, mu = _forward(tree, X, depth)
    Q = softmax(tree.logits[:m])
    qy = Q[:, y].T  # (N, m)
    comp = mu * qy
    py = comp @ coef
    floored = py < PROB_FLOOR
    loss = float(np.mean(-np.log(np.where(floored, PROB_FLOOR, py))))
    g = np.where(floored, 0.0, -1.0 / np.where(floored, 1.0, py)) / N

    grads = Gradients.zeros_like(tree)

    A = g[:, None] * comp * coef  # (N, m), d loss / d log q_n(y)
    onehot = np.zeros((N, tree.n_classes))
    onehot[np.arange(N), y] = 1.0
    grads.logits[:m] = A.T @ onehot - A.sum(axis=0)[:, None] * Q

    if depth > 0:
        U = coef * qy
        n_split = 2**depth - 1
        G = np.empty((N, n_split))
        for d in range(depth - 1, -1, -1):
            lo, hi = 2**d - 1, 2 ** (d + 1) - 1
            U_left = U[:, hi:2 * hi + 1:2]
            U_right = U[:, hi + 1:2 * hi + 2:2]
            s_lvl = s[:, lo:hi]
            G[:, lo:hi] = g[:, None] * mu[:, lo:hi] * (U_right - U_left) * s_lvl * (1.0 - s_lvl)
            U[:, lo:hi] += (1.0 - s_lvl) * U_left + s_lvl * U_right
        grads.weights[:n_split] = G.T @ X
        grads.bias[:n_split] = G.sum(axis=0)

    component = None
    if len(frontiers) > 1:
        component = np.stack([comp[:, list(f.nodes)].sum(axis=1) for f in frontiers], axis=1)
    return MixtureResult(loss, grads, component, py, g)


def backward(tree: TreeSuperstructure, frontier: Frontier, X, y) -> tuple[float, Gradients]:
    """Batch-mean log-loss of one frontier and its exact parameter gradients."""
    res = mixture_backward(tree, [frontier], np.ones(1), X, y)
    return res.loss, res.grads


@dataclass
class TreeModel:
    """A superstructure together with the frontier that defines its architecture."""

    tree: TreeSuperstructure
    frontier: Frontier

    def predict(self, X) -> np.ndarray:
        return predict(self.tree, self.frontier, X)

    def log_loss(self, X, y) -> float:
        return log_loss(self.tree, self.frontier, X, y)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "superstructure": self.tree.to_dict(),
            "frontier": list(self.frontier.nodes),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TreeModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise TreeError(f"unsupported schema_version {doc.get('schema_version')}")
        tree = TreeSuperstructure.from_dict(doc["superstructure"])
        frontier = Frontier(doc["frontier"])
        if frontier.depth > tree.max_depth:
            raise TreeError("frontier deeper than the stored superstructure")
        return cls(tree, frontier)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def to_dot(tree: TreeSuperstructure, frontier: Frontier, feature_names=None,
           class_names=None, top_k: int = 3) -> str:
    """Graphviz description of the tree cut at ``frontier``.

    Split nodes show their heaviest features by absolute weight; leaves show
    the argmax class of their classifier.
    """
    lines = ["digraph tree {", "  node [fontname=\"Helvetica\"];"]
    internal = frontier.internal_nodes()
    for n in internal:
        top = np.argsort(-np.abs(tree.weights[n]), kind="stable")[:top_k]
        terms = []
        for j in top:
            name = feature_names[j] if feature_names is not None else f"x{j}"
            terms.append(f"{tree.weights[n, j]:+.3g}*{name}")
        label = " ".join(terms) + f" {tree.bias[n]:+.3g} > 0"
        lines.append(f"  n{n} [shape=box, label=\"{label}\"];")
    for n in frontier.nodes:
        k = int(np.argmax(tree.logits[n]))
        name = class_names[k] if class_names is not None else str(k)
        lines.append(f"  n{n} [shape=ellipse, label=\"class {name}\"];")
    for n in internal:
        left, right = children(n)
        lines.append(f"  n{n} -> n{left} [label=\"no\"];")
        lines.append(f"  n{n} -> n{right} [label=\"yes\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"
