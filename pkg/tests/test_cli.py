import csv
import json
import re
import statistics

import numpy as np
import pytest

from treeinduce import benchmark as bm
from treeinduce.cli import main
from treeinduce.dataset import load_dataset
from treeinduce.serialize import ModelDocument

FAST = ["--iterations", "2", "--epochs-per-iter", "2", "--finetune-epochs", "3",
        "--baseline-epochs", "3", "--depth", "2"]


def test_train_writes_artifacts(iris_like_csv, tmp_path):
    out = tmp_path / "run"
    code = main(["train", str(iris_like_csv), "--out", str(out), "--seed", "3", *FAST])
    assert code == 0
    for name in ("model.json", "report.json", "train.log", "search_trace.png"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert len(report["run"]["records"]) == 2
    assert report["schema_version"] == 1
    log = (out / "train.log").read_text()
    assert "iter 1 tau=1.000000" in log and "posterior=" in log


def test_train_default_label_is_last_column(iris_like_csv, tmp_path):
    assert main(["train", str(iris_like_csv), "--out", str(tmp_path / "r"), "--no-plots", *FAST]) == 0
    doc = ModelDocument.load(tmp_path / "r" / "model.json")
    assert doc.label_column == "species"
    assert doc.classes == ("setosa", "versicolor", "virginica")


@pytest.mark.parametrize("flags", [["--iterations", "0"], ["--discount", "1.5"], ["--depth", "0"],
                                   ["--train-fraction", "1.0"]])
def test_flag_validation_exit_2(iris_like_csv, tmp_path, flags):
    with pytest.raises(SystemExit) as exc:
        main(["train", str(iris_like_csv), "--out", str(tmp_path / "x"), *flags])
    assert exc.value.code == 2


def test_runtime_failure_exit_1(tmp_path):
    assert main(["train", str(tmp_path / "missing.csv"), "--label-column", "y",
                 "--out", str(tmp_path / "x")]) == 1
    assert main(["export-dot", str(tmp_path / "missing.json"), str(tmp_path / "o.dot")]) == 1


def test_model_roundtrip_predictions(iris_like_csv, tmp_path):
    out = tmp_path / "run"
    main(["train", str(iris_like_csv), "--out", str(out), "--no-plots", *FAST])
    doc = ModelDocument.load(out / "model.json")
    view = load_dataset(iris_like_csv, "species", seed=0)
    report = json.loads((out / "report.json").read_text())
    held_out = view.test()
    assert doc.model.log_loss(held_out.X, held_out.y) == pytest.approx(
        report["finetuned"]["test_loss"], abs=1e-12)

    pred = tmp_path / "pred.csv"
    assert main(["predict", str(out / "model.json"), str(iris_like_csv), "--out", str(pred)]) == 0
    with open(pred, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["predicted", "p_setosa", "p_versicolor", "p_virginica"]
    probs = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert len(probs) == 150
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    # predict recomputes the same probabilities from the raw file
    X = doc.stats.transform(view.stats.retained, view.retained_raw)
    np.testing.assert_allclose(probs, doc.model.predict(X), atol=1e-12)


def _dot_counts(text):
    nodes = len(re.findall(r"^\s*n\d+ \[", text, flags=re.M))
    edges = text.count("->")
    return nodes, edges


def test_export_dot(iris_like_csv, tmp_path):
    out = tmp_path / "run"
    main(["train", str(iris_like_csv), "--out", str(out), "--no-plots", *FAST])
    dot = tmp_path / "tree.dot"
    assert main(["export-dot", str(out / "model.json"), str(dot)]) == 0
    doc = ModelDocument.load(out / "model.json")
    f = doc.model.frontier
    nodes, edges = _dot_counts(dot.read_text())
    assert nodes == len(f) + len(f.internal_nodes())
    assert edges == nodes - 1


def test_export_dot_depth_one(iris_like_csv, tmp_path):
    out = tmp_path / "run"
    main(["train", str(iris_like_csv), "--out", str(out), "--no-plots", "--depth", "1",
          "--iterations", "1", "--epochs-per-iter", "1", "--finetune-epochs", "0", "--candidates", "1"])
    dot = tmp_path / "tree.dot"
    main(["export-dot", str(out / "model.json"), str(dot)])
    assert _dot_counts(dot.read_text()) == (3, 2)


def test_forest_train_and_member_export(iris_like_csv, tmp_path):
    out = tmp_path / "forest"
    assert main(["train", str(iris_like_csv), "--out", str(out), "--forest", "2", "--no-plots", *FAST]) == 0
    doc = ModelDocument.load(out / "model.json")
    assert doc.kind == "forest" and len(doc.model.members) == 2
    report = json.loads((out / "report.json").read_text())
    assert len(report["members"]) == 2 and report["config"]["n_trees"] == 2
    assert main(["export-dot", str(out / "model.json"), str(tmp_path / "m1.dot"), "--member", "1"]) == 0
    assert main(["export-dot", str(out / "model.json"), str(tmp_path / "m9.dot"), "--member", "9"]) == 1


# benchmark ------------------------------------------------------------------------

def _fake_report(values_by_dataset, kinds=("tree", "forest")):
    rows = []
    keys = [bm.model_key(k, s) for k in kinds for s in bm.STAGES]
    for name, v in values_by_dataset.items():
        rows.append({"dataset": name, "seeds": [0],
                     "improvement": {k: {"train": v, "test": v} for k in keys}})
    return {"config": {"kinds": list(kinds)}, "datasets": rows, "aggregate": bm.aggregate(rows, keys)}


def test_aggregate_arithmetic():
    rep = _fake_report({"a": 10.0, "b": 20.0})
    agg = rep["aggregate"]["tree+finetune"]
    assert agg["avg_test"] == 15.0 and agg["median_test"] == 15.0


def test_identity_table_all_zero():
    table = bm.format_table(_fake_report({"a": 0.0, "b": 0.0, "c": 0.0}))
    cells = re.findall(r"-?\d+\.\d+%", table)
    assert len(cells) == 16 and set(cells) == {"0.000%"}


def test_table_layout():
    table = bm.format_table(_fake_report({"a": 1.23456, "b": 2.0}))
    headers = [ln for ln in table.splitlines() if ln.startswith("Model")]
    assert len(headers) == 2
    for h in headers:
        cols = [c.strip() for c in h.split("|")]
        assert cols == ["Model", "Avg Impr. (Train)", "Avg Impr. (Test)",
                        "Median Impr. (Train)", "Median Impr. (Test)"]
    assert "1.617%" in table  # mean of 1.23456 and 2.0, three decimals


def test_benchmark_cli_small(iris_like_csv, gaussian_csv, tmp_path):
    out = tmp_path / "bench"
    code = main(["benchmark", str(iris_like_csv), str(gaussian_csv), "--seeds", "2", "--trees", "2",
                 "--out", str(out), *FAST])
    assert code == 0
    report = json.loads((out / "benchmark.json").read_text())
    assert [r["dataset"] for r in report["datasets"]] == ["iris_like", "gauss"]
    assert len(report["units"]) == 4
    # aggregates are recomputable from the per-dataset rows
    for key, agg in report["aggregate"].items():
        for s in ("train", "test"):
            vals = [r["improvement"][key][s] for r in report["datasets"]]
            assert agg[f"avg_{s}"] == statistics.fmean(vals)
            assert agg[f"median_{s}"] == statistics.median(vals)
    # per-dataset rows are the seed means of the unit improvements
    for row in report["datasets"]:
        units = [u for u in report["units"] if u["dataset"] == row["dataset"]]
        for key in row["improvement"]:
            assert row["improvement"][key]["test"] == statistics.fmean(
                u["improvement"][key]["test"] for u in units)
    for name in ("benchmark.csv", "table.txt", "improvement_test.png", "improvement_train.png"):
        assert (out / name).exists()
    with open(out / "benchmark.csv", newline="") as fh:
        assert len(list(csv.reader(fh))) == 3


def test_benchmark_failure_excluded(iris_like_csv, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,species\n1,a\n2,b\nzz,a\n", encoding="utf-8")
    out = tmp_path / "bench"
    code = main(["benchmark", str(iris_like_csv), str(bad), "--models", "tree", "--out", str(out),
                 "--no-plots", *FAST])
    assert code == 1
    report = json.loads((out / "benchmark.json").read_text())
    assert [r["dataset"] for r in report["datasets"]] == ["iris_like"]
    assert "bad" in report["failures"]


def test_benchmark_spec_file(iris_like_csv, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({
        "datasets": [{"path": str(iris_like_csv), "label_column": "species", "name": "iris"}],
        "kinds": ["tree"], "n_seeds": 1,
        "optimizer": {"iterations": 1, "epochs_per_iteration": 1, "baseline_epochs": 1,
                      "finetune_epochs": 1, "depth": 2},
    }))
    out = tmp_path / "bench"
    assert main(["benchmark", "--spec", str(spec), "--out", str(out), "--no-plots"]) == 0
    report = json.loads((out / "benchmark.json").read_text())
    assert list(report["aggregate"]) == ["tree", "tree+finetune"]


def test_benchmark_needs_data(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["benchmark", "--out", str(tmp_path)])
    assert exc.value.code == 2
