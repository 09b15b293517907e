"""Scenario configuration.

Configs are YAML mappings merged over built-in defaults, so an empty file
reproduces the reference FitzHugh-Nagumo setup. Every scenario name selects
its own defaults for the sweep (energies, laws).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

SCENARIOS = ("fig4", "fig8", "fig9", "custom")

BASE_DEFAULTS: dict[str, Any] = {
    "scenario": "fig8",
    "model": {"source": "fhn", "a": 1 / 3, "b": 1 / 4, "eta": 1 / 4, "D": 0.007, "file": None},
    "grid": 256,
    "dt": None,
    "target": {"mu": 0.0, "gamma": 1.0, "harmonic": 3},
    "initial": {"mu": math.pi, "gamma": 0.5, "harmonic": 1},
    "design": {"r": 2, "E": 0.02, "lam": 0.0, "K_max": 20, "amplitude": None},
    "bounds": {"lo": -0.2, "hi": 0.2},
    "T": 500.0,
    "log_every": 1.0,
    "log_w2": True,
    "snapshot_every": 50.0,
    "seed": 0,
    "workers": 1,
    "out": "runs",
    "energies": [],
    "laws": [],
}

SCENARIO_DEFAULTS: dict[str, dict[str, Any]] = {
    "fig4": {"energies": [0.02, 0.01, 0.005, 0.001]},
    "fig8": {
        "laws": [
            {"variant": "proposed", "k": 0.0},
            {"variant": "proposed", "k": 0.1},
            {"variant": "proposed", "k": 1.0},
            {"variant": "proposed", "k": 50.0},
            {"variant": "baseline_l2", "k": 0.1},
            {"variant": "baseline_l2", "k": 1.0},
            {"variant": "baseline_l2", "k": 50.0},
            {"variant": "baseline_cancel", "k": 0.1},
            {"variant": "baseline_cancel", "k": 1.0},
            {"variant": "baseline_cancel", "k": 50.0},
        ]
    },
    "fig9": {
        "laws": [
            {"variant": "error_aware", "k": 1.0, "e": 0.015},
            {"variant": "error_aware", "k": 1.0, "e": 0.3},
            {"variant": "baseline_l2", "k": 1.0, "e": 0.3},
            {"variant": "baseline_cancel", "k": 1.0, "e": 0.3},
        ]
    },
    "custom": {},
}

VARIANTS = ("feedforward_only", "proposed", "baseline_l2", "baseline_cancel", "error_aware")


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ScenarioConfig:
    scenario: str
    model: dict
    grid: int
    dt: float | None
    target: dict
    initial: dict
    design: dict
    bounds: dict
    T: float
    log_every: float
    log_w2: bool
    snapshot_every: float
    seed: int
    workers: int
    out: str
    energies: list[float] = field(default_factory=list)
    laws: list[dict] = field(default_factory=list)

    @classmethod
    def from_mapping(cls, data: dict | None = None, base_dir: Path | None = None) -> ScenarioConfig:
        data = data or {}
        unknown = set(data) - set(BASE_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        scenario = data.get("scenario", BASE_DEFAULTS["scenario"])
        if scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
        merged = _merge(_merge(BASE_DEFAULTS, SCENARIO_DEFAULTS[scenario]), data)
        cfg = cls(**merged)
        if cfg.model.get("file") and base_dir is not None:
            path = Path(cfg.model["file"])
            if not path.is_absolute():
                cfg.model["file"] = str(base_dir / path)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> ScenarioConfig:
        if path is None:
            return cls.from_mapping({})
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        data = yaml.safe_load(path.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_mapping(data, base_dir=path.parent)

    def with_overrides(self, grid: int | None = None, dt: float | None = None, seed: int | None = None,
                       out: str | None = None) -> ScenarioConfig:
        data = self.to_dict()
        for key, value in (("grid", grid), ("dt", dt), ("seed", seed), ("out", out)):
            if value is not None:
                data[key] = value
        return ScenarioConfig.from_mapping(data)

    def to_dict(self) -> dict:
        return {key: copy.deepcopy(getattr(self, key)) for key in BASE_DEFAULTS}

    def validate(self) -> None:
        src = self.model.get("source")
        if src not in ("fhn", "file"):
            raise ConfigError("model.source must be 'fhn' or 'file'")
        if src == "file":
            file = self.model.get("file")
            if not file or not Path(file).exists():
                raise ConfigError(f"model file {file!r} does not exist")
        if not self.model.get("D", 0) > 0:
            raise ConfigError("model.D must be positive")
        if self.grid < 16 or self.grid % 2:
            raise ConfigError("grid must be an even integer >= 16")
        if self.dt is not None and not 0 < self.dt <= 1e-2:
            raise ConfigError("dt must lie in (0, 0.01]")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.bounds["lo"] > self.bounds["hi"]:
            raise ConfigError("bounds.lo must not exceed bounds.hi")
        d = self.design
        if d["r"] not in (1, 2) or not d["E"] > 0 or d["lam"] < 0 or not 0 < d["K_max"] < self.grid // 2:
            raise ConfigError(f"invalid design parameters {d}")
        for g in (self.target, self.initial):
            if not g["gamma"] > 0 or int(g["harmonic"]) < 1:
                raise ConfigError(f"invalid wrapped Cauchy parameters {g}")
        for law in self.laws:
            if law.get("variant") not in VARIANTS:
                raise ConfigError(f"unknown law variant {law.get('variant')!r}")
            if law.get("k", 0.0) < 0 or law.get("e", 0.0) < 0:
                raise ConfigError(f"negative gain or error bound in {law}")
        if any(not e > 0 for e in self.energies):
            raise ConfigError("energies must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
