"""YAML run configuration with strict validation.

Every section is optional and falls back to the reference Lorenz63 setup;
unknown keys anywhere are an error so that a typo cannot silently change an
experiment.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Optional

import yaml

from .drivers import SYSTEMS
from .errors import ValidationError
from .reservoir import ReservoirParams
from .search import AXES, GATES, SearchPlan
from .training import KINDS, FeatureSpec

DEFAULTS = {
    "driver": {
        "system": "lorenz63",
        "params": {},
        "dt": 0.01,
        "duration": 1200.0,
        "transient": 100.0,
        "seed": 0,
        "standardize": True,
        "lyapunov_time": 2000.0,
    },
    "reservoir": {
        "n_nodes": 2000,
        "spectral_radius": 0.9,
        "pnz": 0.02,
        "gamma": 5.0,
        "sigma": 0.2,
        "seed": 7,
    },
    "training": {
        "features": "linear_plus_squares",
        "bias": True,
        "beta": 1e-6,
        "washout": 20.0,
        "train_time": 500.0,
    },
    "gs": {
        "test_time": 50.0,
        "transient": 10.0,
        "tolerance": 1e-8,
        "seeds": [1, 2],
    },
    "evaluation": {
        "threshold": 0.4,
        "n_starts": 20,
        "horizon": 20.0,
        "sync_time": 10.0,
        "k_exponents": None,
        "lyapunov_steps": 20000,
        "spectrum_tol": 0.15,
        "seed": 0,
    },
    "search": None,
    "output": {"directory": "run"},
}

SEARCH_DEFAULTS = {
    "axes": {},
    "trials_per_cell": 1,
    "gate": "gs_then_train",
    "base_seed": 0,
    "spectrum": False,
}


def _merge(defaults: dict, given, where: str) -> dict:
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ValidationError(f"{where}: expected a mapping, got {type(given).__name__}")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ValidationError(f"{where}: unknown key(s) {unknown}; allowed {sorted(defaults)}")
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


def _number(d, key, where, positive=False, nonneg=False, integer=False):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{where}.{key}: expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ValidationError(f"{where}.{key}: must be finite")
    if integer and int(v) != v:
        raise ValidationError(f"{where}.{key}: expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ValidationError(f"{where}.{key}: must be > 0, got {v!r}")
    if nonneg and v < 0:
        raise ValidationError(f"{where}.{key}: must be >= 0, got {v!r}")
    d[key] = int(v) if integer else float(v)


def _flag(d, key, where):
    if not isinstance(d[key], bool):
        raise ValidationError(f"{where}.{key}: expected true/false, got {d[key]!r}")


@dataclass(frozen=True)
class RunConfig:
    driver: dict
    reservoir: dict
    training: dict
    gs: dict
    evaluation: dict
    search: Optional[dict]
    output: dict

    @classmethod
    def from_dict(cls, raw) -> "RunConfig":
        if raw is None:
            raw = {}
        top = _merge(DEFAULTS, raw, "config")
        sections = {}
        for name in ("driver", "reservoir", "training", "gs", "evaluation", "output"):
            sections[name] = _merge(DEFAULTS[name], top[name], name)
        sections["search"] = None if top["search"] is None else _merge(SEARCH_DEFAULTS, top["search"], "search")
        cfg = cls(**sections)
        cfg._validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ValidationError(f"config {path} is not valid YAML: {exc}") from exc
        return cls.from_dict(raw)

    def _validate(self):
        d = self.driver
        if d["system"] not in SYSTEMS:
            raise ValidationError(f"driver.system: unknown system {d['system']!r}; choose from {sorted(SYSTEMS)}")
        if not isinstance(d["params"], dict):
            raise ValidationError("driver.params: expected a mapping")
        for key in ("dt", "duration", "lyapunov_time"):
            _number(d, key, "driver", positive=True)
        _number(d, "transient", "driver", nonneg=True)
        _number(d, "seed", "driver", nonneg=True, integer=True)
        _flag(d, "standardize", "driver")

        r = self.reservoir
        for key in ("n_nodes", "seed"):
            _number(r, key, "reservoir", nonneg=True, integer=True)
        for key in ("spectral_radius", "pnz", "gamma"):
            _number(r, key, "reservoir", positive=True)
        _number(r, "sigma", "reservoir", nonneg=True)
        ReservoirParams(input_dim=1, **r)

        t = self.training
        if t["features"] not in KINDS:
            raise ValidationError(f"training.features: expected one of {KINDS}, got {t['features']!r}")
        _flag(t, "bias", "training")
        _number(t, "beta", "training", nonneg=True)
        _number(t, "washout", "training", nonneg=True)
        _number(t, "train_time", "training", positive=True)

        g = self.gs
        for key in ("test_time", "tolerance"):
            _number(g, key, "gs", positive=True)
        _number(g, "transient", "gs", nonneg=True)
        seeds = g["seeds"]
        if (not isinstance(seeds, list) or len(seeds) != 2 or len(set(seeds)) != 2
                or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)):
            raise ValidationError(f"gs.seeds: expected two distinct non-negative integers, got {seeds!r}")

        e = self.evaluation
        for key in ("threshold", "horizon", "spectrum_tol"):
            _number(e, key, "evaluation", positive=True)
        _number(e, "sync_time", "evaluation", nonneg=True)
        for key in ("n_starts", "lyapunov_steps"):
            _number(e, key, "evaluation", positive=True, integer=True)
        _number(e, "seed", "evaluation", nonneg=True, integer=True)
        if e["k_exponents"] is not None:
            _number(e, "k_exponents", "evaluation", positive=True, integer=True)

        s = self.search
        if s is not None:
            if s["gate"] not in GATES:
                raise ValidationError(f"search.gate: expected one of {GATES}, got {s['gate']!r}")
            if not isinstance(s["axes"], dict):
                raise ValidationError("search.axes: expected a mapping of axis -> list of values")
            unknown = sorted(set(s["axes"]) - set(AXES))
            if unknown:
                raise ValidationError(f"search.axes: unknown axis {unknown}; allowed {list(AXES)}")
            for k, vals in s["axes"].items():
                if not isinstance(vals, list) or not vals:
                    raise ValidationError(f"search.axes.{k}: expected a non-empty list")
                for v in vals:
                    ok = not isinstance(v, bool) and isinstance(v, (int, float)) and math.isfinite(v)
                    if not ok or v < 0 or (v == 0 and k != "sigma"):
                        raise ValidationError(f"search.axes.{k}: invalid value {v!r}")
            if not s["axes"]:
                raise ValidationError("search.axes: at least one axis is required")
            _number(s, "trials_per_cell", "search", positive=True, integer=True)
            _number(s, "base_seed", "search", nonneg=True, integer=True)
            _flag(s, "spectrum", "search")

        o = self.output
        if not isinstance(o["directory"], str) or not o["directory"]:
            raise ValidationError("output.directory: expected a non-empty path")

    # -- derived objects ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "driver": copy.deepcopy(self.driver),
            "reservoir": copy.deepcopy(self.reservoir),
            "training": copy.deepcopy(self.training),
            "gs": copy.deepcopy(self.gs),
            "evaluation": copy.deepcopy(self.evaluation),
            "search": copy.deepcopy(self.search),
            "output": copy.deepcopy(self.output),
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None) -> "RunConfig":
        """Apply CLI overrides; ``seed`` replaces the reservoir and search seeds."""
        d = self.to_dict()
        if seed is not None:
            d["reservoir"]["seed"] = seed
            if d["search"] is not None:
                d["search"]["base_seed"] = seed
        if out is not None:
            d["output"]["directory"] = out
        return RunConfig.from_dict(d)

    def reservoir_params(self, input_dim: int) -> ReservoirParams:
        return ReservoirParams(input_dim=input_dim, **self.reservoir)

    def feature_spec(self) -> FeatureSpec:
        return FeatureSpec(self.training["features"], self.training["bias"])

    def search_plan(self, input_dim: int) -> SearchPlan:
        if self.search is None:
            raise ValidationError("config has no search section")
        s, e, g, t = self.search, self.evaluation, self.gs, self.training
        return SearchPlan(
            base=self.reservoir_params(input_dim),
            axes=s["axes"],
            trials_per_cell=s["trials_per_cell"],
            gate=s["gate"],
            base_seed=s["base_seed"],
            features=self.feature_spec(),
            beta=t["beta"],
            washout=t["washout"],
            train_time=t["train_time"],
            gs_test_time=g["test_time"],
            gs_transient=g["transient"],
            gs_tolerance=g["tolerance"],
            n_starts=e["n_starts"],
            horizon=e["horizon"],
            sync_time=e["sync_time"],
            threshold=e["threshold"],
            spectrum=s["spectrum"],
            k_exponents=e["k_exponents"],
            lyapunov_steps=e["lyapunov_steps"],
            spectrum_tol=e["spectrum_tol"],
        )
