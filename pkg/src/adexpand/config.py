"""Pipeline configuration file: JSON with "paths" and "parameters" sections.

Validation is fail-fast: unknown keys are rejected and every parameter is
bounds-checked at load so a bad config never reaches the pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ParseError

_PATH_KEYS = {
    "keywords",
    "embeddings",
    "campaigns",
    "labels",
    "dataset",
    "new_dataset",
    "holdout",
    "queries",
    "output_dir",
}

_PARAMETER_DEFAULTS = {
    "dim": 256,
    "clusters": 8,
    "seed": 7,
    "quantile_pct": 99.9999,
    "min_cluster_size": 10,
    "k_neighbors": 100,
    "trees": 100,
    "learning_rate": 0.1,
    "adjustment_trees": 2,
    "adjustment_depth": 5,
    "precision_target": 0.8,
    "markets": [],
}


@dataclass
class PipelineConfig:
    paths: dict[str, str] = field(default_factory=dict)
    dim: int = 256
    clusters: int = 8
    seed: int = 7
    quantile_pct: float = 99.9999
    min_cluster_size: int = 10
    k_neighbors: int = 100
    trees: int = 100
    learning_rate: float = 0.1
    adjustment_trees: int = 2
    adjustment_depth: int = 5
    precision_target: float = 0.8
    markets: list[str] = field(default_factory=list)

    @property
    def quantile_fraction(self) -> float:
        return self.quantile_pct / 100.0

    def validate(self) -> None:
        if self.dim < 16:
            raise ParseError("dim must be at least 16")
        if self.clusters < 1:
            raise ParseError("clusters must be at least 1")
        if self.seed < 0:
            raise ParseError("seed must be non-negative")
        if not 0.0 < self.quantile_pct <= 100.0:
            raise ParseError("quantile_pct must be in (0, 100]")
        if self.min_cluster_size < 0:
            raise ParseError("min_cluster_size must be non-negative")
        if self.k_neighbors < 1:
            raise ParseError("k_neighbors must be at least 1")
        if self.trees < 1:
            raise ParseError("trees must be at least 1")
        if not 0.0 < self.learning_rate <= 2.0:
            raise ParseError("learning_rate must be in (0, 2]")
        if not 1 <= self.adjustment_trees <= 2:
            raise ParseError("adjustment_trees must be 1 or 2")
        if not 1 <= self.adjustment_depth <= 5:
            raise ParseError("adjustment_depth must be in [1, 5]")
        if not 0.0 < self.precision_target <= 1.0:
            raise ParseError("precision_target must be in (0, 1]")
        if not isinstance(self.markets, list) or any(
            not isinstance(m, str) for m in self.markets
        ):
            raise ParseError("markets must be a list of strings")


def load_config(path: str) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    unknown_sections = set(doc) - {"paths", "parameters"}
    if unknown_sections:
        raise ParseError(f"{path}: unknown sections {sorted(unknown_sections)}")
    paths = doc.get("paths", {})
    unknown_paths = set(paths) - _PATH_KEYS
    if unknown_paths:
        raise ParseError(f"{path}: unknown path keys {sorted(unknown_paths)}")
    parameters = doc.get("parameters", {})
    unknown_params = set(parameters) - set(_PARAMETER_DEFAULTS)
    if unknown_params:
        raise ParseError(f"{path}: unknown parameter keys {sorted(unknown_params)}")
    merged = dict(_PARAMETER_DEFAULTS)
    merged.update(parameters)
    config = PipelineConfig(paths={k: str(v) for k, v in paths.items()}, **merged)
    config.validate()
    return config
