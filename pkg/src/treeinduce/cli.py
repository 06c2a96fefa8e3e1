"""Command-line entry point: ``treeinduce {train,benchmark,export-dot,predict}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import benchmark as bm
from .dataset import DEFAULT_FREQ_RATIO, DEFAULT_UNIQUE_PCT, load_dataset, load_table
from .forest import ForestConfig, train_forest
from .serialize import ModelDocument
from .soft_tree import SCHEMA_VERSION, TreeModel, to_dot
from .training import OptimizerConfig, finetune, search, search_result

logger = logging.getLogger("treeinduce")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _discount(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {v}")
    return v


def _add_optimizer_flags(p):
    g = p.add_argument_group("optimization")
    g.add_argument("--depth", type=_positive_int, default=5, help="starting depth (default 5)")
    g.add_argument("--depth-cap", type=_positive_int, default=10)
    g.add_argument("--iterations", type=_positive_int, default=10, help="search iterations T")
    g.add_argument("--epochs-per-iter", type=_positive_int, default=20)
    g.add_argument("--baseline-epochs", type=_nonneg_int, default=200)
    g.add_argument("--finetune-epochs", type=_nonneg_int, default=200)
    g.add_argument("--tau0", type=_positive_float, default=1.0)
    g.add_argument("--discount", type=_discount, default=0.99)
    g.add_argument("--step-size", type=_positive_float, default=0.05)
    g.add_argument("--batch-size", type=_positive_int, default=32)
    g.add_argument("--candidates", type=_positive_int, default=3, help="variants per iteration K")
    g.add_argument("--seed", type=int, default=0)


def _add_data_flags(p):
    g = p.add_argument_group("data")
    g.add_argument("--label-column", default=None, help="label column (default: last column)")
    g.add_argument("--delimiter", default=",")
    g.add_argument("--train-fraction", type=float, default=0.7)
    g.add_argument("--nzv-freq-ratio", type=_positive_float, default=DEFAULT_FREQ_RATIO)
    g.add_argument("--nzv-unique-pct", type=_positive_float, default=DEFAULT_UNIQUE_PCT)


def _optimizer_config(args) -> OptimizerConfig:
    return OptimizerConfig(
        step_size=args.step_size,
        batch_size=args.batch_size,
        epochs_per_iteration=args.epochs_per_iter,
        iterations=args.iterations,
        baseline_epochs=args.baseline_epochs,
        finetune_epochs=args.finetune_epochs,
        seed=args.seed,
        depth=args.depth,
        depth_cap=args.depth_cap,
        tau0=args.tau0,
        discount=args.discount,
        n_candidates=args.candidates,
    )


def _label_column(path, delimiter, given):
    if given is not None:
        return given
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh, delimiter=delimiter))
    return header[-1].strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treeinduce", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="induce a tree (or forest) on one dataset")
    p.add_argument("data", help="delimited training file with a header row")
    p.add_argument("--test", default=None, help="predefined test file; skips the random split")
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--forest", type=_positive_int, default=None, metavar="N", help="train a forest of N trees")
    p.add_argument("--workers", type=_positive_int, default=1, help="threads for forest members")
    p.add_argument("--no-plots", action="store_true")
    _add_data_flags(p)
    _add_optimizer_flags(p)

    p = sub.add_parser("benchmark", help="baseline-relative improvement tables over datasets")
    p.add_argument("data", nargs="*", help="delimited dataset files")
    p.add_argument("--spec", default=None, help="JSON benchmark spec (datasets, kinds, ...)")
    p.add_argument("--models", default="tree,forest", help="comma list from {tree,forest}")
    p.add_argument("--seeds", type=_positive_int, default=1, help="number of seeds averaged per dataset")
    p.add_argument("--trees", type=_positive_int, default=5, help="forest size")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    p.add_argument("--out", default="benchmark", help="output directory")
    p.add_argument("--no-plots", action="store_true")
    _add_data_flags(p)
    _add_optimizer_flags(p)

    p = sub.add_parser("export-dot", help="write a Graphviz view of a trained model")
    p.add_argument("model")
    p.add_argument("out")
    p.add_argument("--member", type=_nonneg_int, default=0, help="forest member to export")

    p = sub.add_parser("predict", help="class probabilities for rows of a delimited file")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out", default="-", help="output CSV (default stdout)")
    p.add_argument("--delimiter", default=",")
    return parser


def _setup_logging(verbose: bool, logfile: Path | None = None):
    root = logging.getLogger("treeinduce")
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    err = logging.StreamHandler(sys.stderr)
    err.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(err)
    if logfile is not None:
        fh = logging.FileHandler(logfile, mode="w", encoding="utf-8")
        fh.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(fh)
    root.propagate = False


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")
    logger.info("wrote %s", path)


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(args.verbose, out / "train.log")
    started = time.perf_counter()
    cfg = _optimizer_config(args)
    label = _label_column(args.data, args.delimiter, args.label_column)
    data = load_dataset(args.data, label, delimiter=args.delimiter, test_path=args.test,
                        train_fraction=args.train_fraction, seed=args.seed,
                        nzv_freq_ratio=args.nzv_freq_ratio, nzv_unique_pct=args.nzv_unique_pct)
    logger.info("data: %d train / %d test rows, %d features, %d classes",
                len(data.train()), len(data.test()), data.p, data.class_count)

    report = {
        "schema_version": SCHEMA_VERSION,
        "data": {"path": str(args.data), "test_path": args.test, "label_column": label,
                 "n_train": len(data.train()), "n_test": len(data.test()),
                 "classes": list(data.classes)},
        "preprocessing": data.stats.to_dict(),
    }
    forest_cfg = None
    if args.forest:
        forest_cfg = ForestConfig(n_trees=args.forest, seed=args.seed, optimizer=cfg)
        res = train_forest(data, forest_cfg, workers=args.workers)
        model = res.finetuned
        report["kind"] = "forest"
        report["config"] = forest_cfg.to_dict()
        report["members"] = [r.to_dict() for r in res.reports]
        report["search"] = {"train_loss": res.train_loss, "test_loss": res.test_loss}
        report["finetuned"] = {"train_loss": res.finetuned_train_loss, "test_loss": res.finetuned_test_loss}
        traces = [(f"member{i}", r.records) for i, r in enumerate(res.reports)]
    else:
        state, run = search(data, cfg)
        found = search_result(state, data)
        tuned = finetune(state, data, cfg)
        run.finetuned_train_loss, run.finetuned_test_loss = tuned.train_loss, tuned.test_loss
        model = tuned.model
        report["kind"] = "tree"
        report["run"] = run.to_dict()
        report["search"] = {"train_loss": found.train_loss, "test_loss": found.test_loss}
        report["finetuned"] = {"train_loss": tuned.train_loss, "test_loss": tuned.test_loss}
        traces = [("search", run.records)]

    doc = ModelDocument(model=model, stats=data.stats, classes=data.classes, label_column=label)
    _write(out / "model.json", doc.dumps(forest_cfg))
    _write(out / "report.json", json.dumps(report, indent=1) + "\n")
    if not args.no_plots:
        from .plots import plot_search_trace

        for name, records in traces:
            path = out / f"{name}_trace.png"
            plot_search_trace(records, path, title=f"{Path(args.data).stem} ({name})")
            logger.info("wrote %s", path)
    logger.info("search: train %.5f test %.5f; fine-tuned: train %.5f test %.5f (%.1f s)",
                report["search"]["train_loss"], report["search"]["test_loss"],
                report["finetuned"]["train_loss"], report["finetuned"]["test_loss"],
                time.perf_counter() - started)
    return 0


def _benchmark_spec(args) -> bm.BenchmarkSpec:
    kinds = tuple(k.strip() for k in args.models.split(",") if k.strip())
    common = dict(kinds=kinds, seed=args.seed, n_seeds=args.seeds, n_trees=args.trees,
                  train_fraction=args.train_fraction, optimizer=_optimizer_config(args), jobs=args.jobs)
    if args.spec:
        overrides = {"jobs": args.jobs}
        return bm.BenchmarkSpec.from_json(args.spec, **overrides)
    entries = tuple(
        bm.DatasetEntry(path=p, label_column=_label_column(p, args.delimiter, args.label_column),
                        delimiter=args.delimiter)
        for p in args.data
    )
    return bm.BenchmarkSpec(datasets=entries, **common)


def cmd_benchmark(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(args.verbose, out / "benchmark.log")
    spec = _benchmark_spec(args)
    started = time.perf_counter()
    report = bm.run_benchmark(spec)
    logger.info("benchmark finished in %.1f s", time.perf_counter() - started)

    _write(out / "benchmark.json", json.dumps(report, indent=1) + "\n")
    if report["datasets"]:
        bm.write_rows_csv(report, out / "benchmark.csv")
        table = bm.format_table(report)
        _write(out / "table.txt", table)
        sys.stdout.write(table)
        if not args.no_plots:
            from .plots import plot_improvements

            keys = [bm.model_key(k, st) for k in spec.kinds for st in bm.STAGES]
            for split in bm.SPLITS:
                plot_improvements(report["datasets"], keys, out / f"improvement_{split}.png", split=split)
    return 1 if report["failures"] else 0


def cmd_export_dot(args) -> int:
    doc = ModelDocument.load(args.model)
    model = doc.model
    if doc.kind == "forest":
        if args.member >= len(model.members):
            raise ValueError(f"forest has {len(model.members)} members")
        model = model.members[args.member]
    assert isinstance(model, TreeModel)
    Path(args.out).write_text(
        to_dot(model.tree, model.frontier, feature_names=doc.stats.retained, class_names=doc.classes),
        encoding="utf-8",
    )
    return 0


def cmd_predict(args) -> int:
    doc = ModelDocument.load(args.model)
    table = load_table(args.data, doc.label_column, args.delimiter)
    X = doc.stats.transform(table.names, table.columns)
    probs = np.atleast_2d(doc.model.predict(X))
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(fh)
        w.writerow(["predicted"] + [f"p_{c}" for c in doc.classes])
        for row in probs:
            w.writerow([doc.classes[int(np.argmax(row))]] + [repr(float(v)) for v in row])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


COMMANDS = {
    "train": cmd_train,
    "benchmark": cmd_benchmark,
    "export-dot": cmd_export_dot,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "benchmark" and not args.data and not args.spec:
        parser.error("benchmark needs dataset files or --spec")
    if hasattr(args, "train_fraction") and not 0 < args.train_fraction < 1:
        parser.error("--train-fraction must lie in (0, 1)")
    if hasattr(args, "depth") and args.depth > args.depth_cap:
        parser.error("--depth exceeds --depth-cap")
    _setup_logging(getattr(args, "verbose", False))
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        if getattr(args, "verbose", False):
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
