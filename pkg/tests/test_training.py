import math
from dataclasses import replace

import numpy as np
import pytest

from treeinduce import gating as gt
from treeinduce.dataset import load_dataset
from treeinduce.soft_tree import Frontier, log_loss, predict
from treeinduce.structure import CandidateSet, Variant, VariantKind, sample_candidates
from treeinduce.training import (
    NonpositiveBaseline,
    OptimizerConfig,
    SearchState,
    combined_backward,
    combined_loss,
    finetune,
    relative_improvement,
    search,
    search_result,
    sgd_epoch,
    train_baseline,
)

from .conftest import random_tree, write_csv

SMALL = OptimizerConfig(iterations=3, epochs_per_iteration=2, baseline_epochs=5, finetune_epochs=5, depth=3)


def make_state(rng, depth=3, p=3, C=3, base=None, logits=None, tau=0.8):
    tree = random_tree(rng, depth, p, C)
    base = base or Frontier([1, 5, 6])
    cands = sample_candidates(base, tree, rng)
    sched = gt.AnnealSchedule()
    g = gt.GatingState(rng.normal(size=len(cands)) if logits is None else np.asarray(logits, float), tau)
    return SearchState(tree, base, cands, g, sched, rng)


def test_combined_loss_one_hot_base(rng):
    state = make_state(rng, logits=[0.0, 10.0, 0.0], tau=1e-3)
    X = rng.normal(size=(40, 3))
    y = rng.integers(3, size=40)
    assert abs(combined_loss(state, X, y) - log_loss(state.tree, state.base, X, y)) < 1e-12


def test_combined_loss_identical_variants(rng):
    state = make_state(rng)
    f = state.base
    state.candidates = CandidateSet(tuple(Variant(i, VariantKind.BASE, f, duplicate=i != 0) for i in range(3)))
    X = rng.normal(size=(40, 3))
    y = rng.integers(3, size=40)
    assert abs(combined_loss(state, X, y) - log_loss(state.tree, f, X, y)) < 1e-12


def test_combined_loss_scalar_oracle(rng):
    state = make_state(rng)
    X = rng.normal(size=(25, 3))
    y = rng.integers(3, size=25)
    pi = gt.weights(state.gating)
    total = 0.0
    for x, k in zip(X, y):
        mix = sum(pi[j] * predict(state.tree, v.frontier, x)[k] for j, v in enumerate(state.candidates))
        total -= math.log(max(mix, 1e-12))
    assert abs(combined_loss(state, X, y) - total / len(y)) < 1e-10


def test_end_to_end_gradient(rng):
    state = make_state(rng, depth=2, base=Frontier([1, 2]))
    X = rng.normal(size=(16, 3))
    y = rng.integers(3, size=16)
    _, g, g_gate = combined_backward(state, X, y)
    h = 1e-5
    loss = lambda: combined_loss(state, X, y)  # noqa: E731
    for arr, ga in ((state.tree.weights, g.weights), (state.tree.bias, g.bias), (state.tree.logits, g.logits)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            down = loss()
            arr[idx] = old
            fd = (up - down) / (2 * h)
            assert abs(fd - ga[idx]) / max(abs(fd), abs(ga[idx]), 1e-6) < 1e-4
    y0 = state.gating.logits.copy()
    for k in range(len(y0)):
        for sign in (1, -1):
            e = np.zeros_like(y0)
            e[k] = sign * h
            state.gating = gt.GatingState(y0 + e, state.gating.tau)
            if sign == 1:
                up = loss()
            else:
                down = loss()
        fd = (up - down) / (2 * h)
        assert abs(fd - g_gate[k]) / max(abs(fd), abs(g_gate[k]), 1e-6) < 1e-4


def test_sgd_zero_step_is_identity(rng):
    state = make_state(rng)
    before = [a.tobytes() for a in (state.tree.weights, state.tree.bias, state.tree.logits, state.gating.logits)]
    sgd_epoch(state, rng.normal(size=(50, 3)), rng.integers(3, size=50), 0.0, 8)
    after = [a.tobytes() for a in (state.tree.weights, state.tree.bias, state.tree.logits, state.gating.logits)]
    assert before == after


def test_sgd_single_step_descends(rng):
    state = make_state(rng)
    X = rng.normal(size=(32, 3))
    y = rng.integers(3, size=32)
    before = combined_loss(state, X, y)
    _, g, gg = combined_backward(state, X, y)
    grad_norm = math.sqrt(g.norm() ** 2 + float(gg @ gg))
    w0 = np.concatenate([state.tree.weights.ravel(), state.tree.bias, state.tree.logits.ravel(), state.gating.logits])
    sgd_epoch(state, X, y, 0.01, 32)
    w1 = np.concatenate([state.tree.weights.ravel(), state.tree.bias, state.tree.logits.ravel(), state.gating.logits])
    assert combined_loss(state, X, y) < before
    assert np.linalg.norm(w1 - w0) <= 0.01 * grad_norm + 1e-15


def test_sgd_deterministic():
    def run():
        rng = np.random.default_rng(5)
        state = make_state(rng)
        data_rng = np.random.default_rng(6)
        sgd_epoch(state, data_rng.normal(size=(70, 3)), data_rng.integers(3, size=70), 0.05, 16)
        return state.tree.weights.tobytes(), state.gating.logits.tobytes()

    assert run() == run()


@pytest.fixture
def data(gaussian_csv):
    return load_dataset(gaussian_csv, "label", seed=1)


def test_search_single_iteration_tau(data):
    _, report = search(data, replace(SMALL, iterations=1))
    assert len(report.records) == 1
    assert report.records[0].tau == 1.0
    assert report.records[0].tau_next == 0.99


def test_search_records(data):
    state, report = search(data, SMALL)
    assert len(report.records) == SMALL.iterations
    assert report.taus == [0.99**t for t in range(SMALL.iterations)]
    for r in report.records:
        assert abs(sum(r.posterior) - 1) < 1e-12 and min(r.posterior) >= 0
        assert len(r.candidates) == 3
    assert report.final_frontier == list(state.base.nodes)


def test_search_forced_base_keeps_frontier(data):
    def force_base(t, state, pi):
        out = np.zeros(len(pi))
        out[state.candidates.base.id] = 1.0
        return out

    state, report = search(data, replace(SMALL, depth=5, iterations=4), sampling_override=force_base)
    assert state.base == Frontier.full(5)
    assert all(r.chosen_variant == "base" for r in report.records)


def test_search_deterministic(data):
    _, a = search(data, SMALL)
    _, b = search(data, SMALL)
    assert a.to_dict() == b.to_dict()


def test_weight_transfer_across_commit(data):
    """Parameters are bit-identical across a commit; nothing is reinitialized."""
    seen = []

    def spy(t, state, pi):
        seen.append((state.tree.copy(), state.base))
        return pi

    state, report = search(data, replace(SMALL, iterations=1), sampling_override=spy)
    before, old_base = seen[0]
    shared = sorted(set(old_base.internal_nodes() + list(old_base.nodes))
                    & set(state.base.internal_nodes() + list(state.base.nodes)))
    assert shared
    for a, b in ((before.weights, state.tree.weights), (before.bias, state.tree.bias),
                 (before.logits, state.tree.logits)):
        assert a.tobytes() == b.tobytes()


def test_finetune_zero_epochs(data):
    state, report = search(data, SMALL)
    post = search_result(state, data)
    tuned = finetune(state, data, replace(SMALL, finetune_epochs=0))
    assert tuned.train_loss == post.train_loss == report.final_train_loss
    assert tuned.test_loss == post.test_loss


def test_finetune_leaves_search_state_alone(data):
    state, _ = search(data, SMALL)
    gate = state.gating.logits.copy()
    weights = state.tree.weights.copy()
    finetune(state, data, SMALL)
    np.testing.assert_array_equal(state.gating.logits, gate)
    np.testing.assert_array_equal(state.tree.weights, weights)


def test_finetune_improves_separable_toy(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for k in range(2):
        X = rng.normal(loc=4.0 * k, scale=0.5, size=(40, 2))
        rows += [[f"{v:.6f}" for v in x] + [f"k{k}"] for x in X]
    view = load_dataset(write_csv(tmp_path / "toy.csv", ["a", "b", "y"], rows), "y", seed=0)
    cfg = OptimizerConfig(depth=1, iterations=2, epochs_per_iteration=2, finetune_epochs=30)
    state, _ = search(view, cfg)
    before = search_result(state, view).train_loss
    after = finetune(state, view, cfg).train_loss
    assert after <= before + 1e-9


def test_baseline_examples(data):
    cfg = replace(SMALL, depth=5)
    a = train_baseline(data, cfg)
    b = train_baseline(data, cfg)
    assert len(a.model.frontier) == 32
    assert (a.train_loss, a.test_loss) == (b.train_loss, b.test_loss)


def test_relative_improvement():
    assert relative_improvement(0.693, 0.600) == pytest.approx(13.42, abs=5e-3)
    assert relative_improvement(0.5, 0.5) == 0.0
    assert relative_improvement(0.5, 0.6) < 0
    with pytest.raises(NonpositiveBaseline):
        relative_improvement(0.0, 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(iterations=0)
    with pytest.raises(ValueError):
        OptimizerConfig(depth=11)
    with pytest.raises(ValueError):
        OptimizerConfig(discount=0.0)
