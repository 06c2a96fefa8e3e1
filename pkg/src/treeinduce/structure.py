"""Prune / base / graft routing variants over a shared superstructure."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .soft_tree import (
    CapacityExceeded,
    Frontier,
    TreeSuperstructure,
    children,
    node_depth,
)


class VariantKind(str, enum.Enum):
    PRUNED = "pruned"
    BASE = "base"
    GRAFTED = "grafted"


@dataclass(frozen=True)
class Variant:
    id: int
    kind: VariantKind
    frontier: Frontier
    target: int | None = None
    # stands in for a prune/graft slot that had no legal target
    duplicate: bool = False

    def describe(self) -> str:
        if self.kind is VariantKind.BASE:
            return "base (duplicate)" if self.duplicate else "base"
        return f"{self.kind.value}({self.target})"


@dataclass(frozen=True)
class CandidateSet:
    variants: tuple[Variant, ...]

    def __post_init__(self):
        bases = [v for v in self.variants if v.kind is VariantKind.BASE and not v.duplicate]
        if len(bases) != 1:
            raise ValueError("candidate set needs exactly one base variant")
        if [v.id for v in self.variants] != list(range(len(self.variants))):
            raise ValueError("variant ids must be 0..K-1 in order")

    def __len__(self):
        return len(self.variants)

    def __getitem__(self, i) -> Variant:
        return self.variants[i]

    def __iter__(self):
        return iter(self.variants)

    @property
    def base(self) -> Variant:
        return next(v for v in self.variants if v.kind is VariantKind.BASE and not v.duplicate)

    @property
    def frontiers(self) -> list[Frontier]:
        return [v.frontier for v in self.variants]


def prunable_nodes(frontier: Frontier) -> list[int]:
    """Split nodes whose two children are both frontier leaves."""
    members = set(frontier.nodes)
    return [n for n in frontier.internal_nodes() if set(children(n)) <= members]


def graftable_nodes(frontier: Frontier, cap: int) -> list[int]:
    return [n for n in frontier.nodes if node_depth(n) < cap]


def apply_graft_init(tree: TreeSuperstructure, leaf: int, rng: np.random.Generator):
    """Prepare ``leaf`` to become a split without changing any prediction.

    Both children receive a copy of the leaf's current logits, so the new
    split mixes two identical classifiers.  The leaf's split is redrawn.
    """
    d = node_depth(leaf)
    if d >= tree.cap:
        raise CapacityExceeded(f"node {leaf} at depth {d} cannot be grafted (cap {tree.cap})")
    tree.grow(d + 1, rng)
    for child in children(leaf):
        tree.logits[child] = tree.logits[leaf]
    tree.init_split(leaf, rng)


def sample_candidates(
    base: Frontier,
    tree: TreeSuperstructure,
    rng: np.random.Generator,
    n_candidates: int = 3,
    init_grafts: bool = True,
) -> CandidateSet:
    """Pruned variant(s), the base, and grafted variant(s) with uniform targets.

    With ``n_candidates`` K the set holds ``(K-1)//2`` pruned slots and the
    remaining non-base slots grafted, each target drawn independently.  A slot
    with no legal target becomes a duplicate of the base so K stays fixed.
    Grafted targets are initialized in place with :func:`apply_graft_init`.
    """
    if n_candidates < 1:
        raise ValueError("need at least one candidate")
    n_prune = (n_candidates - 1) // 2
    n_graft = n_candidates - 1 - n_prune
    prunable = prunable_nodes(base)
    graftable = graftable_nodes(base, tree.cap)

    slots = []
    for _ in range(n_prune):
        if prunable:
            target = prunable[rng.integers(len(prunable))]
            slots.append((VariantKind.PRUNED, target, base.prune(target), False))
        else:
            slots.append((VariantKind.BASE, None, base, True))
    slots.append((VariantKind.BASE, None, base, False))
    for _ in range(n_graft):
        if graftable:
            target = graftable[rng.integers(len(graftable))]
            if init_grafts:
                apply_graft_init(tree, target, rng)
            slots.append((VariantKind.GRAFTED, target, base.graft(target), False))
        else:
            slots.append((VariantKind.BASE, None, base, True))

    return CandidateSet(tuple(
        Variant(id=i, kind=kind, frontier=f, target=t, duplicate=dup)
        for i, (kind, t, f, dup) in enumerate(slots)
    ))


def commit(variant: Variant) -> Frontier:
    """The variant's frontier becomes the next base architecture.

    Parameters are untouched; every node keeps its weights across the move.
    """
    return variant.frontier
