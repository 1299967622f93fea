# run_config.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Run configuration: loading, validation and the objects built from it.

A run configuration is a TOML file (the documented format) or a JSON file
with the same structure.  Every key is optional; the defaults reproduce
the rotated parabolic cylinder example.  Unknown keys are an error.
"""

import copy
import itertools
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Self, Type

import numpy as np
import tomlkit

from surrogate_kit.convenience_types import Box
from surrogate_kit.debug import debug_print
from surrogate_kit.error_model import BoundConstants, ErrorModelConfig
from surrogate_kit.errors import InputError
from surrogate_kit.file_locations import get_default_run_dir
from surrogate_kit.work_budget import BudgetController, WorkModel

# Keys which may be absent use None here; TOML has no null.
DEFAULTS: dict = {
    "name": "run",
    "tolerance": 1e-2,
    "max_iterations": 200,
    "max_work": 1e7,
    "seed": 0,
    "output_dir": None,
    "workers": 1,
    "freeze_hyperparameters_after": None,
    "model": {
        "name": "parabolic-cylinder",
        "noise": "gaussian",
        "angles": [0.0, 2.0, 4.0],
        "base": "parabolic-cylinder",
        "coarsest_tolerance": 0.1,
        "ratio": 0.5,
    },
    "likelihood": {
        "covariance_diagonal": [1e-2, 1e-3, 1e-2],
        "covariance": None,
    },
    "error_model": {
        "q": 2.0,
        "alpha": 0.0,
        "beta": 0.0,
        "regularization": None,
        "epsilon_mode": "trace",
        "weight_mode": "transport",
        "integration": "grid",
        "grid_points": 25,
        "mc_points": 10000,
        "mc_seed": 0,
        "bound_constants": None,
    },
    "work": {
        "kind": "generic",
        "exponent": 0.5,
        "order": None,
        "spatial_dim": None,
        "minimum_work": 1.0,
        "max_tolerance": None,
    },
    "budget": {
        "initial_increment": 100.0,
        "growth": 1.1,
        "stall_factor": 1.1,
        "stall_threshold": 0.02,
    },
    "candidates": {
        "strategy": "acquisition",
        "k": 1,
        "filter_tolerance": None,
    },
    "initial_design": {
        "kind": "boundary",
        "tolerance": 0.1,
        "points": None,
    },
    "baseline": {
        "tolerance": 1e-4,
        "stall_window": 25,
        "stall_threshold": 0.01,
    },
    "reconstruction": {
        "p_true": [0.5, 0.5],
        "measurement": None,
        "starts": 5,
        "grid_points": 5,
    },
    "reliability": {
        "points": 1600,
        "draws": 10,
        "starts": 3,
        "grid_points": 5,
        "seed": 0,
    },
}

initial_design_kinds = ["boundary", "explicit"]


def check_keys(settings: dict, defaults: dict, where: str = "") -> None:
    """Raise InputError for any key not in the documented set."""
    for key, value in settings.items():
        if key not in defaults:
            location = f"[{where}] " if where else ""
            raise InputError(f"Unknown configuration key {location}{key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise InputError(f"Configuration key {key!r} must be a section")
            check_keys(value, defaults[key], key)


def merge_defaults(settings: dict, defaults: dict = DEFAULTS) -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in settings.items():
        if isinstance(defaults.get(key), dict):
            merged[key] = merge_defaults(value, defaults[key])
        else:
            merged[key] = value
    return merged


@dataclass
class RunConfig:
    """Validated settings for one run, plus the objects built from them."""

    settings: dict
    source: Path | None = None

    def __post_init__(self) -> None:
        check_keys(self.settings, DEFAULTS)
        self.settings = merge_defaults(self.settings)
        if not self.tolerance > 0:
            raise InputError("tolerance must be positive")
        if self.max_iterations < 1 or not self.max_work > 0:
            raise InputError("max_iterations and max_work must be positive")
        if self.workers < 1:
            raise InputError("workers must be at least 1")
        # Build once to validate the sections
        self.error_model_config()
        self.work_model()
        self.budget_controller()
        self.likelihood_covariance()

    @classmethod
    def from_file(cls: Type[Self], file: os.PathLike | str) -> Self:
        """Load a run configuration, TOML or JSON by suffix."""
        path = Path(file)
        match path.suffix:
            case ".toml":
                settings = cls.read_toml(path)
            case ".json":
                settings = cls.read_json(path)
            case _:
                raise InputError(f"Configuration must be .toml or .json, not {path.name}")
        return cls(settings, source=path)

    # These are here largely for namespacing purposes, to keep names short.
    @staticmethod
    def read_toml(file: os.PathLike | str) -> dict:
        path = Path(file)
        if not path.is_file():
            raise InputError(f"No configuration file {path}")
        with open(path, "r") as f:
            settings = tomlkit.loads(f.read()).unwrap()
        debug_print(2, "Run configuration TOML file loaded")
        return settings

    @staticmethod
    def read_json(file: os.PathLike | str) -> dict:
        path = Path(file)
        if not path.is_file():
            raise InputError(f"No configuration file {path}")
        with open(path, "r") as f:
            settings = json.load(f)
        if not isinstance(settings, dict):
            raise InputError("JSON configuration must be an object")
        debug_print(2, "Run configuration JSON file loaded")
        return settings

    def with_overrides(self, **overrides) -> Self:
        """Same configuration with some keys replaced (None = keep).

        A dict value updates the section of that name key by key.
        """
        settings = copy.deepcopy(self.settings)
        for key, value in overrides.items():
            if value is None:
                continue
            if isinstance(value, dict) and isinstance(settings.get(key), dict):
                settings[key] |= {k: v for k, v in value.items() if v is not None}
            else:
                settings[key] = value
        return type(self)(settings, self.source)

    def to_dict(self) -> dict:
        """Plain, JSON-ready echo of the settings."""
        return json.loads(json.dumps(self.settings))

    def __getitem__(self, key: str):
        return self.settings[key]

    @property
    def name(self) -> str:
        return str(self.settings["name"])

    @property
    def tolerance(self) -> float:
        return float(self.settings["tolerance"])

    @property
    def max_iterations(self) -> int:
        return int(self.settings["max_iterations"])

    @property
    def max_work(self) -> float:
        return float(self.settings["max_work"])

    @property
    def seed(self) -> int:
        return int(self.settings["seed"])

    @property
    def workers(self) -> int:
        return int(self.settings["workers"])

    @property
    def freeze_hyperparameters_after(self) -> int | None:
        value = self.settings["freeze_hyperparameters_after"]
        return None if value is None else int(value)

    @property
    def output_dir(self) -> Path:
        if self.settings["output_dir"] is not None:
            return Path(self.settings["output_dir"])
        return get_default_run_dir(self.name)

    def error_model_config(self) -> ErrorModelConfig:
        section = dict(self.settings["error_model"])
        constants = section.pop("bound_constants")
        if constants is not None:
            section["bound_constants"] = BoundConstants(**constants)
        return ErrorModelConfig(**section)

    def work_model(self) -> WorkModel:
        return WorkModel(**self.settings["work"])

    def budget_controller(self) -> BudgetController:
        section = self.settings["budget"]
        return BudgetController(
            increment=float(section["initial_increment"]),
            growth=float(section["growth"]),
            stall_factor=float(section["stall_factor"]),
            stall_threshold=float(section["stall_threshold"]),
        )

    def likelihood_covariance(self) -> np.ndarray:
        section = self.settings["likelihood"]
        if section["covariance"] is not None:
            covariance = np.atleast_2d(np.asarray(section["covariance"], dtype=float))
        else:
            covariance = np.diag(np.asarray(section["covariance_diagonal"], dtype=float))
        if covariance.shape[0] != covariance.shape[1]:
            raise InputError("Likelihood covariance must be square")
        if not np.all(np.linalg.eigvalsh(covariance) > 0):
            raise InputError("Likelihood covariance must be positive definite")
        return covariance

    def initial_design_points(self, domain: Box) -> np.ndarray:
        """Initial evaluation points.

        boundary: every point of {lower, middle, upper}**d lying on the
        boundary; for d = 2 the 4 corners and 4 edge midpoints.
        """
        section = self.settings["initial_design"]
        match section["kind"]:
            case "boundary":
                levels = np.column_stack(
                    [domain.lower, 0.5 * (domain.lower + domain.upper), domain.upper]
                )
                points = []
                for choice in itertools.product(range(3), repeat=domain.dim):
                    if any(index != 1 for index in choice):
                        points.append([levels[axis, index] for axis, index in enumerate(choice)])
                return np.array(points)
            case "explicit":
                if section["points"] is None:
                    raise InputError("Explicit initial design needs points")
                return np.atleast_2d(np.asarray(section["points"], dtype=float))
            case other:
                raise InputError(
                    f"Unknown initial design kind {other!r}; choose from {initial_design_kinds}"
                )

    @property
    def initial_tolerance(self) -> float:
        return float(self.settings["initial_design"]["tolerance"])
