import csv

import numpy as np
import pytest

from treeinduce.soft_tree import Frontier, TreeSuperstructure, node_depth

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def random_tree(rng, depth, p, n_classes, scale=1.5):
    """Superstructure with non-trivial biases and logits."""
    tree = TreeSuperstructure.initialize(depth, p, n_classes, rng)
    tree.weights *= scale * np.sqrt(p)
    tree.bias[:] = rng.normal(scale=0.5, size=tree.size)
    tree.logits[:] = rng.normal(size=tree.logits.shape)
    return tree


def random_frontier(rng, depth):
    """Random frontier no deeper than ``depth``, grown by random grafts."""
    nodes = [0]
    for _ in range(rng.integers(0, 2**depth)):
        open_ = [n for n in nodes if node_depth(n) < depth]
        if not open_:
            break
        n = open_[rng.integers(len(open_))]
        nodes.remove(n)
        nodes += [2 * n + 1, 2 * n + 2]
    return Frontier(nodes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def iris_like_csv(tmp_path):
    """150-row, 4-feature, 3-class table with well separated classes."""
    rng = np.random.default_rng(7)
    rows = []
    for k, name in enumerate(["setosa", "versicolor", "virginica"]):
        X = rng.normal(loc=2.0 * k, scale=0.6, size=(50, 4))
        rows += [[f"{v:.4f}" for v in x] + [name] for x in X]
    return write_csv(tmp_path / "iris_like.csv", ["a", "b", "c", "d", "species"], rows)


@pytest.fixture
def gaussian_csv(tmp_path):
    """Two overlapping Gaussian classes in five dimensions."""
    rng = np.random.default_rng(3)
    rows = []
    for k in range(2):
        X = rng.normal(loc=0.8 * k, size=(60, 5))
        rows += [[f"{v:.6f}" for v in x] + [f"c{k}"] for x in X]
    return write_csv(tmp_path / "gauss.csv", [f"x{i}" for i in range(5)] + ["label"], rows)
