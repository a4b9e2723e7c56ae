"""Experiment configuration: one JSON document with defaults for every field."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .hmm import HiddenMarkovModel, InvalidArgumentError
from .inventory import InventoryModel
from .models import (
    PARTITION_INVENTORY,
    REGIME_HORIZON,
    REGIME_INVENTORY,
    deterministic_model,
    partition_demo_model,
    regime_demand_model,
)

PRESETS = {
    "regime": regime_demand_model,
    "partition": partition_demo_model,
    "deterministic": deterministic_model,
}
PRESET_INVENTORY = {"regime": REGIME_INVENTORY, "partition": PARTITION_INVENTORY}

DEFAULTS = {
    "true_model": {"preset": "regime"},
    "inventory": dict(REGIME_INVENTORY),
    "grid": {"N": 10_000, "d": 2, "K": 200, "mc_samples": 10_000, "restarts": 1},
    "svm": {"C_list": [10.0, 50.0], "max_epochs": 20_000, "tol": 1e-4, "method": "crammer_singer"},
    "training": {
        "n_states": 3,
        "dataset_sizes": [5, 10, 25, 50, 100, 250],
        "trajectory_length": REGIME_HORIZON,
        "n_restarts": 5,
        "em_tol": 1e-6,
        "em_max_iters": 500,
    },
    "evaluation": {"horizon": REGIME_HORIZON, "n_sims": 10_000},
    "bound": {"positions": [0], "n_sims": 10_000, "horizon": REGIME_HORIZON},
    "mesh_resolution": 50,
    "seed": 0,
    "output_dir": "out",
}

_COUNTS = {
    "grid": ["N", "d", "K", "mc_samples", "restarts"],
    "svm": ["max_epochs"],
    "training": ["n_states", "trajectory_length", "n_restarts", "em_max_iters"],
    "evaluation": ["horizon", "n_sims"],
    "bound": ["n_sims", "horizon"],
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise InvalidArgumentError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k != "true_model":
            if not isinstance(v, dict):
                raise InvalidArgumentError(f"config key {path + k!r} must be an object")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    true_model: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["true_model"]))
    inventory: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["inventory"]))
    grid: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["grid"]))
    svm: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["svm"]))
    training: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["training"]))
    evaluation: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["evaluation"]))
    bound: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["bound"]))
    mesh_resolution: int = DEFAULTS["mesh_resolution"]
    seed: int = 0
    output_dir: str = "out"
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise InvalidArgumentError("config must be a JSON object")
        merged = _merge(DEFAULTS, data)
        cfg = cls(**merged, base_dir=Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in DEFAULTS}

    def validate(self) -> None:
        for section, keys in _COUNTS.items():
            for k in keys:
                v = getattr(self, section)[k]
                if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                    raise InvalidArgumentError(f"{section}.{k} must be a positive integer, got {v!r}")
        sizes = self.training["dataset_sizes"]
        if not sizes or any(not isinstance(s, int) or s < 1 for s in sizes):
            raise InvalidArgumentError("training.dataset_sizes must be positive integers")
        if not self.svm["C_list"] or any(float(c) <= 0 for c in self.svm["C_list"]):
            raise InvalidArgumentError("svm.C_list must hold positive numbers")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise InvalidArgumentError("seed must be a nonnegative integer")
        if not isinstance(self.mesh_resolution, int) or self.mesh_resolution < 2:
            raise InvalidArgumentError("mesh_resolution must be an integer >= 2")
        self.inventory_params()

    def true_hmm(self) -> HiddenMarkovModel:
        return resolve_model(self.true_model, self.base_dir)

    def inventory_params(self) -> dict:
        inv = dict(self.inventory)
        if {"h", "p", "c"} <= inv.keys():
            beta, tau = float(inv["beta"]), int(inv["tau"])
            inv = {"tau": tau, "beta": beta, "h_tilde": beta**tau * inv["h"] + inv["c"], "p_tilde": beta**tau * inv["p"] - inv["c"]}
        missing = {"tau", "h_tilde", "p_tilde", "beta"} - inv.keys()
        if missing:
            raise InvalidArgumentError(f"inventory is missing {sorted(missing)}")
        if not 0 <= float(inv["beta"]) < 1:
            raise InvalidArgumentError("inventory.beta must lie in [0, 1)")
        if not isinstance(inv["tau"], int) or inv["tau"] < 0:
            raise InvalidArgumentError("inventory.tau must be a nonnegative integer")
        if not (float(inv["h_tilde"]) > 0 and float(inv["p_tilde"]) > 0):
            raise InvalidArgumentError("adjusted costs h_tilde and p_tilde must be positive")
        return {k: inv[k] for k in ("tau", "h_tilde", "p_tilde", "beta")}

    def inventory_model(self, hmm: HiddenMarkovModel) -> InventoryModel:
        return InventoryModel(hmm, **self.inventory_params())


def resolve_model(source, base_dir=".") -> HiddenMarkovModel:
    """A model from ``{"preset": name, ...kwargs}``, ``{"path": file}`` or an inline model dict."""
    if isinstance(source, str):
        source = {"path": source}
    if not isinstance(source, dict):
        raise InvalidArgumentError("model must be a preset, a path or an inline model")
    if "preset" in source:
        kwargs = {k: v for k, v in source.items() if k != "preset"}
        try:
            return PRESETS[source["preset"]](**kwargs)
        except KeyError:
            raise InvalidArgumentError(f"unknown preset {source['preset']!r}; choose from {sorted(PRESETS)}") from None
        except TypeError as exc:
            raise InvalidArgumentError(f"bad preset arguments: {exc}") from None
    if "path" in source:
        path = Path(base_dir) / source["path"]
        return HiddenMarkovModel.load(path)
    try:
        return HiddenMarkovModel.from_dict(source)
    except (KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"inline model is malformed: {exc}") from None
