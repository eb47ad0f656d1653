"""Run configuration: one JSON file drives the whole pipeline.

Unspecified keys fall back to the defaults below, so an empty config file
(or none at all) reproduces the stock desk-scale setup. A run is
reproducible from the config plus its global seed alone: every stage draws
from named substreams of that seed.
"""

from __future__ import annotations

import copy
import json
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .ebm import TrainConfig
from .errors import UsageError
from .evaluation import ExperimentSpec
from .scene import WorldModel, default_world

CONFIG_VERSION = 1

DEFAULT_CONFIG: dict = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "out_dir": "runs/default",
    "object": "bottle",
    "candidate_count": 57,
    "world": {},
    "data": {
        "n_feasibility": 75000,
        "n_shared": 11400,
        "split_fractions": [2.0 / 3.0, 1.0 / 5.0, 2.0 / 15.0],
    },
    "train": {},
    "experiments": {
        "data_efficiency": {
            "n_feasibility": 12000,
            "n_shared": 12000,
            "ratios": [1.0, 0.5, 0.15, 0.05],
            "methods": ["J", "D", "L", "F"],
            "seeds": [0, 1, 2],
            "train": {"epochs": 15, "patience": 4},
        },
        "unseen_grasps": {
            "master_candidate_count": 922,
            "candidate_sizes": [57, 83, 109, 352],
            "n_feasibility": 10000,
            "n_shared_val": 3000,
            "n_shared_test": 11000,
            "methods": ["J", "L", "F"],
            "seeds": [0, 1, 2],
            "train": {"epochs": 15, "patience": 4},
        },
        "unseen_objects": {
            "objects": ["bottle", "bunny", "mug", "drill"],
            "candidate_count": 60,
            "n_feasibility": 10000,
            "n_shared_val": 3000,
            "n_shared_test": 3500,
            "methods": ["J", "L"],
            "train_combos": [["bottle"], ["bottle", "bunny"], ["bottle", "mug"]],
            "seeds": [0, 1, 2],
            "train": {"epochs": 15, "patience": 4},
        },
        "success_rate": {"methods": ["R", "A", "J"], "n_trials": 500, "seeds": [0]},
        "bench": {"candidate_sizes": [57, 109, 352], "n_trials": 30},
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    """Materialized configuration with typed accessors."""

    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG))

    @staticmethod
    def from_file(path: str | Path | None) -> "RunConfig":
        if path is None:
            return RunConfig()
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file {path} not found")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        version = doc.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise UsageError(f"config version {version} unsupported (expected {CONFIG_VERSION})")
        return RunConfig(_deep_merge(DEFAULT_CONFIG, doc))

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["out_dir"])

    @property
    def object_name(self) -> str:
        return self.raw["object"]

    @property
    def candidate_count(self) -> int:
        return int(self.raw["candidate_count"])

    def world(self) -> WorldModel:
        overrides = self.raw.get("world") or {}
        if not overrides:
            return default_world()
        base = default_world().to_dict()
        return WorldModel.from_dict(_deep_merge(base, overrides))

    def train_config(self, **extra) -> TrainConfig:
        params = dict(self.raw.get("train") or {})
        params.update(extra)
        if "hidden_sizes" in params:
            params["hidden_sizes"] = tuple(params["hidden_sizes"])
        return TrainConfig(**params)

    def data_params(self) -> dict:
        d = self.raw["data"]
        return {
            "n_feasibility": int(d["n_feasibility"]),
            "n_shared": int(d["n_shared"]),
            "split_fractions": tuple(d["split_fractions"]),
        }

    def experiment_spec(self, name: str) -> ExperimentSpec:
        exp = self.raw.get("experiments", {}).get(name)
        if exp is None:
            raise UsageError(f"no experiment named {name!r} in the config")
        params = dict(exp)
        train_overrides = params.pop("train", {})
        base_train = dict(self.raw.get("train") or {})
        base_train.update(train_overrides)
        if "hidden_sizes" in base_train:
            base_train["hidden_sizes"] = tuple(base_train["hidden_sizes"])
        valid = {f.name for f in fields(ExperimentSpec)}
        unknown = set(params) - valid
        if unknown:
            raise UsageError(f"unknown experiment keys for {name!r}: {sorted(unknown)}")
        for key in ("objects", "candidate_sizes", "ratios", "methods", "seeds", "split_fractions"):
            if key in params:
                params[key] = tuple(params[key])
        if "train_combos" in params:
            params["train_combos"] = tuple(tuple(c) for c in params["train_combos"])
        params.setdefault("name", name)
        params.setdefault("data_seed", self.seed)
        spec = ExperimentSpec(train=TrainConfig(**base_train), **params)
        return spec

    def digest(self) -> str:
        doc = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(doc.encode()).hexdigest()

    # Artifact path conventions. Everything lives under out_dir.
    def grasps_path(self, obj: str, count: int) -> Path:
        return self.out_dir / "grasps" / f"{obj}-{count}.json"

    def dataset_path(self, obj: str, kind: str, seed: int, split: str | None = None) -> Path:
        suffix = f"-{split}" if split else ""
        return self.out_dir / "data" / obj / f"{kind}-{seed}{suffix}.jsonl"

    def model_path(self, kind: str, obj: str, count: int, seed: int, ratio: float = 1.0) -> Path:
        tag = "" if ratio == 1.0 else f"-r{int(round(ratio * 100))}"
        return self.out_dir / "models" / f"{kind}-{obj}-{count}-s{seed}{tag}.json"

    def history_path(self, kind: str, obj: str, count: int, seed: int, ratio: float = 1.0) -> Path:
        return self.model_path(kind, obj, count, seed, ratio).with_suffix(".history.csv")

    def thresholds_path(self, obj: str, count: int) -> Path:
        return self.out_dir / f"thresholds-{obj}-{count}.json"

    def reports_dir(self, experiment: str, tag: str) -> Path:
        return self.out_dir / "reports" / experiment / tag
