"""Baseline-relative log-loss benchmark over several datasets and seeds."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .dataset import load_dataset
from .forest import ForestConfig, member_seeds, train_forest, train_forest_baseline
from .soft_tree import SCHEMA_VERSION
from .training import OptimizerConfig, finetune, relative_improvement, search, search_result, train_baseline

logger = logging.getLogger(__name__)

KINDS = ("tree", "forest")
STAGES = ("search", "finetune")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class DatasetEntry:
    path: str
    label_column: str
    test_path: str | None = None
    delimiter: str = ","
    name: str | None = None

    @property
    def label(self) -> str:
        return self.name or Path(self.path).stem


@dataclass(frozen=True)
class BenchmarkSpec:
    datasets: tuple[DatasetEntry, ...]
    kinds: tuple[str, ...] = KINDS
    seed: int = 0
    n_seeds: int = 1
    n_trees: int = 5
    train_fraction: float = 0.7
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    jobs: int = 1

    def __post_init__(self):
        if not self.datasets:
            raise ValueError("benchmark needs at least one dataset")
        bad = set(self.kinds) - set(KINDS)
        if bad or not self.kinds:
            raise ValueError(f"model kinds must be drawn from {KINDS}, got {self.kinds}")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")

    @property
    def seeds(self) -> list[int]:
        return member_seeds(self.seed, self.n_seeds)

    @classmethod
    def from_json(cls, path, **overrides) -> "BenchmarkSpec":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = tuple(DatasetEntry(**d) for d in doc.pop("datasets"))
        opt = OptimizerConfig(**doc.pop("optimizer", {}))
        if "kinds" in doc:
            doc["kinds"] = tuple(doc["kinds"])
        doc.update(overrides)
        return cls(datasets=entries, optimizer=opt, **doc)


def model_key(kind: str, stage: str) -> str:
    return kind if stage == "search" else f"{kind}+finetune"


def run_unit(entry: DatasetEntry, seed: int, spec: BenchmarkSpec) -> dict:
    """Baselines and induced models for one dataset under one seed."""
    data = load_dataset(entry.path, entry.label_column, delimiter=entry.delimiter,
                        test_path=entry.test_path, train_fraction=spec.train_fraction, seed=seed)
    cfg = replace(spec.optimizer, seed=seed)
    losses = {}
    if "tree" in spec.kinds:
        base = train_baseline(data, cfg)
        state, report = search(data, cfg)
        found = search_result(state, data)
        tuned = finetune(state, data, cfg)
        losses["tree"] = {
            "baseline": {"train": base.train_loss, "test": base.test_loss},
            "search": {"train": found.train_loss, "test": found.test_loss},
            "finetune": {"train": tuned.train_loss, "test": tuned.test_loss},
            "leaves": len(state.base),
        }
    if "forest" in spec.kinds:
        fcfg = ForestConfig(n_trees=spec.n_trees, seed=seed, optimizer=cfg)
        _, b_train, b_test = train_forest_baseline(data, fcfg)
        res = train_forest(data, fcfg)
        losses["forest"] = {
            "baseline": {"train": b_train, "test": b_test},
            "search": {"train": res.train_loss, "test": res.test_loss},
            "finetune": {"train": res.finetuned_train_loss, "test": res.finetuned_test_loss},
            "leaves": [len(m.frontier) for m in res.searched.members],
        }
    improvement = {}
    for kind, rec in losses.items():
        for stage in STAGES:
            improvement[model_key(kind, stage)] = {
                s: relative_improvement(rec["baseline"][s], rec[stage][s]) for s in SPLITS
            }
    logger.info("%s seed %d: %s", entry.label, seed,
                ", ".join(f"{k} test {v['test']:+.3f}%" for k, v in improvement.items()))
    return {"dataset": entry.label, "seed": seed, "losses": losses, "improvement": improvement}


def _mean(vals):
    return float(statistics.fmean(vals))


def aggregate(rows: list[dict], keys: list[str]) -> dict:
    """Mean and median of per-dataset improvements, per model key and split."""
    out = {}
    for key in keys:
        out[key] = {}
        for s in SPLITS:
            vals = [r["improvement"][key][s] for r in rows]
            out[key][f"avg_{s}"] = _mean(vals)
            out[key][f"median_{s}"] = float(statistics.median(vals))
    return out


def dataset_row(label: str, units: list[dict]) -> dict:
    keys = list(units[0]["improvement"])
    return {
        "dataset": label,
        "seeds": [u["seed"] for u in units],
        "improvement": {k: {s: _mean([u["improvement"][k][s] for u in units]) for s in SPLITS} for k in keys},
    }


def _run_unit_safe(args):
    entry, seed, spec = args
    try:
        return entry, seed, run_unit(entry, seed, spec), None
    except Exception as exc:  # reported per dataset, never fatal to the run
        return entry, seed, None, f"{type(exc).__name__}: {exc}"


def run_benchmark(spec: BenchmarkSpec) -> dict:
    work = [(entry, seed, spec) for entry in spec.datasets for seed in spec.seeds]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_run_unit_safe, work))
    else:
        results = [_run_unit_safe(w) for w in work]

    units, failures = {}, {}
    for entry, seed, unit, err in results:
        if err is not None:
            logger.error("%s seed %d failed: %s", entry.label, seed, err)
            failures.setdefault(entry.label, []).append({"seed": seed, "error": err})
        else:
            units.setdefault(entry.label, []).append(unit)

    rows = [dataset_row(e.label, units[e.label]) for e in spec.datasets
            if e.label in units and e.label not in failures]
    keys = [model_key(k, st) for k in spec.kinds for st in STAGES]
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "kinds": list(spec.kinds), "seed": spec.seed, "seeds": spec.seeds, "n_trees": spec.n_trees,
            "train_fraction": spec.train_fraction, "optimizer": spec.optimizer.to_dict(),
            "datasets": [asdict(e) for e in spec.datasets],
        },
        "datasets": rows,
        "units": [u for e in spec.datasets for u in units.get(e.label, [])],
        "aggregate": aggregate(rows, keys) if rows else {},
        "failures": failures,
    }
    if "tree" in spec.kinds and "forest" in spec.kinds and rows:
        report["forest_vs_tree"] = forest_vs_tree(rows)
    return report


def forest_vs_tree(rows: list[dict]) -> dict:
    out = {}
    for stage in STAGES:
        t, f = model_key("tree", stage), model_key("forest", stage)
        diffs = [r["improvement"][f]["test"] - r["improvement"][t]["test"] for r in rows]
        out[stage] = {"forest_better": sum(d > 0 for d in diffs), "n": len(diffs),
                      "mean_test_gap": _mean(diffs)}
    return out


HEADER = ("Model", "Avg Impr. (Train)", "Avg Impr. (Test)", "Median Impr. (Train)", "Median Impr. (Test)")


def format_table(report: dict) -> str:
    """Improvement tables without and with fine tuning, percentages to 3 places."""
    agg = report["aggregate"]
    kinds = report["config"]["kinds"]
    buf = io.StringIO()
    for stage, title in (("search", "Average improvement over baseline"),
                         ("finetune", "Average improvement over baseline, with fine tuning")):
        buf.write(title + "\n")
        widths = [max(len(HEADER[0]), 8)] + [len(h) for h in HEADER[1:]]
        buf.write(" | ".join(h.ljust(w) for h, w in zip(HEADER, widths)) + "\n")
        buf.write("-+-".join("-" * w for w in widths) + "\n")
        for kind in kinds:
            a = agg.get(model_key(kind, stage))
            if a is None:
                continue
            cells = [kind.capitalize()] + [
                f"{a[c]:.3f}%" for c in ("avg_train", "avg_test", "median_train", "median_test")
            ]
            buf.write(" | ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths))) + "\n")
        buf.write("\n")
    if "forest_vs_tree" in report:
        for stage, v in report["forest_vs_tree"].items():
            buf.write(f"forest vs tree ({stage}): forest better on {v['forest_better']}/{v['n']} datasets, "
                      f"mean test gap {v['mean_test_gap']:+.3f} points\n")
    return buf.getvalue()


def write_rows_csv(report: dict, path):
    keys = [model_key(k, st) for k in report["config"]["kinds"] for st in STAGES]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "n_seeds"] + [f"{k}_{s}_impr_pct" for k in keys for s in SPLITS])
        for r in report["datasets"]:
            w.writerow([r["dataset"], len(r["seeds"])] + [f"{r['improvement'][k][s]:.6f}" for k in keys for s in SPLITS])
