"""Run configuration: one JSON file, every default materialized on load."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .imaging import ImageError, PreprocessConfig


class ConfigError(ValueError):
    pass


TASKS = ("multiclass", "binary")
SELECTION_THRESHOLDS = {"multiclass": 0.5, "binary": 0.7}

DEFAULTS = {
    "task": "multiclass",
    "seed": 0,
    "data_root": None,
    "synth": {"counts": [130, 60, 90, 45, 15], "width": 64, "height": 64, "gap_jitter": 1},
    "split_ratios": [0.7, 0.15, 0.15],
    "preprocess": {
        "crop": {"x_frac": 0.0, "y_frac": 0.0, "w_frac": 1.0, "h_frac": 1.0},
        "clahe": {"clip_limit": 3.0, "tiles_x": 8, "tiles_y": 8, "n_bins": 256},
        "augment": {"flip_probability": 0.5, "zoom_fraction": 0.1},
        "target_width": 32,
        "target_height": 32,
        "augment_train": True,
    },
    "training": {
        "learning_rate": 0.001,
        "momentum": 0.9,
        "batch_size": 8,
        "dropout": 0.2,
        "dense_units": 320,
        "class_weight": "balanced",
    },
    "backbones": [
        {"name": "wide3", "channels": [8, 16, 32], "epochs": 40},
        {"name": "mid3", "channels": [6, 12, 24], "epochs": 40},
        {"name": "slim3", "channels": [4, 8, 16], "epochs": 40},
    ],
    "selection_threshold": None,
    "meta": {
        "grids": {
            "knn": {"k": [2, 4, 6, 8, 12]},
            "gbdt": {"depth": [3, 10, 15], "iterations": [100], "learning_rate": [0.1, 0.00005]},
            "random_forest": {"n_trees": [100], "max_depth": [None, 6], "features_per_split": ["sqrt"]},
        },
        "folds": 5,
        "search_mode": "exhaustive",
        "n_draws": 10,
        "search_metric": "balanced_accuracy",
        "selection_metric": "balanced_accuracy",
        "selection_split": "val",
    },
    "stacking_mode": "in_sample",
    "stack_folds": 5,
}


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path}{k}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k != "grids":
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(raw: dict | None = None, **overrides) -> dict:
    """Merge ``raw`` over the defaults, apply non-None ``overrides`` and validate."""
    cfg = _merge(DEFAULTS, raw or {})
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    if cfg["task"] not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {cfg['task']!r}")
    if cfg["selection_threshold"] is None:
        cfg["selection_threshold"] = SELECTION_THRESHOLDS[cfg["task"]]
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    if cfg["stacking_mode"] not in ("in_sample", "out_of_fold"):
        raise ConfigError(f"stacking_mode must be 'in_sample' or 'out_of_fold', got {cfg['stacking_mode']!r}")
    names = [b.get("name") for b in cfg["backbones"]]
    if not names or len(set(names)) != len(names) or any(not n for n in names):
        raise ConfigError("backbones need unique, non-empty names")
    for b in cfg["backbones"]:
        if not b.get("channels") or int(b.get("epochs", -1)) < 0:
            raise ConfigError(f"backbone {b.get('name')}: needs channels and epochs >= 0")
    if not cfg["meta"]["grids"]:
        raise ConfigError("meta.grids must name at least one meta-learner")
    try:
        preprocess_config(cfg, train=True)
    except (ImageError, TypeError) as exc:
        raise ConfigError(f"preprocess: {exc}") from exc
    return cfg


def load(path, **overrides) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return resolve(raw, **overrides)


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def preprocess_config(cfg: dict, train: bool) -> PreprocessConfig:
    p = cfg["preprocess"]
    return PreprocessConfig.from_dict({
        "crop": p["crop"],
        "clahe": p["clahe"],
        "augment": {**p["augment"], "seed": cfg["seed"]},
        "target_width": p["target_width"],
        "target_height": p["target_height"],
        "augmentation": bool(train and p["augment_train"]),
    })


def dump(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"
