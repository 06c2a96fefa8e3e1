"""Versioned JSON documents for trained models and their preprocessing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .dataset import PreprocessStats
from .forest import ForestConfig, ForestModel
from .soft_tree import SCHEMA_VERSION, TreeError, TreeModel


@dataclass
class ModelDocument:
    model: TreeModel | ForestModel
    stats: PreprocessStats
    classes: tuple[str, ...]
    label_column: str

    @property
    def kind(self) -> str:
        return "forest" if isinstance(self.model, ForestModel) else "tree"

    def to_dict(self, forest_config: ForestConfig | None = None) -> dict:
        if isinstance(self.model, ForestModel):
            body = self.model.to_dict(forest_config)
        else:
            body = self.model.to_dict()
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "label_column": self.label_column,
            "classes": list(self.classes),
            "preprocessing": self.stats.to_dict(),
            "model": body,
        }

    def dumps(self, forest_config: ForestConfig | None = None) -> str:
        return json.dumps(self.to_dict(forest_config), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelDocument":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise TreeError(f"unsupported schema_version {doc.get('schema_version')}")
        kind = doc.get("kind")
        if kind == "tree":
            model = TreeModel.from_dict(doc["model"])
        elif kind == "forest":
            model = ForestModel.from_dict(doc["model"])
        else:
            raise TreeError(f"unknown model kind {kind!r}")
        return cls(
            model=model,
            stats=PreprocessStats.from_dict(doc["preprocessing"]),
            classes=tuple(doc["classes"]),
            label_column=doc["label_column"],
        )

    @classmethod
    def load(cls, path) -> "ModelDocument":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
