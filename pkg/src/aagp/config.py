"""
Run configuration: one YAML document per run.

Every section and key is listed in ``SCHEMA``; unknown keys are rejected,
keys marked ``REQUIRED`` must be present whenever their section is used,
and relative paths resolve against the config file's directory.  See the
README for an annotated example.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ConfigError
from .model import ModelParams, Priors

REQUIRED = object()
THREADS_ENV = "AAGP_THREADS"

SCHEMA = {
    "seed": REQUIRED,
    "output_dir": "out",
    "threads": None,
    "data": {"dataset": None, "truth": None},
    "simulate": {
        "scenario": REQUIRED, "n_sites": 225, "n_times": 20, "seed": REQUIRED,
        "lower": [0.0, 0.0, 0.0], "upper": [20.0, 20.0, 20.0], "truth": {},
    },
    "detrend": {"panel": REQUIRED, "n_harmonics": 3, "season_length": 184, "days": None,
                "metric": "chordal"},
    "priors": {
        "mu_b": 0.0, "V_b": 1000.0, "a_tau": 2.0, "b_tau": 0.01, "a1": 2.0, "b1": 0.01,
        "a2": 2.0, "b2": 0.01, "bounds": {},
    },
    "knots": {"m": 100, "design": "latin_hypercube", "seed": REQUIRED, "file": None,
              "lower": None, "upper": None},
    "model": {"alpha": 0.5, "space_family": "squared_exponential",
              "time_family": "squared_exponential", "fixed": {}},
    "chain": {"n_iter": 25000, "burn_in": 15000, "thin": 1, "seed": REQUIRED, "proposal_scale": 0.2,
              "adapt": True, "adapt_window": 50, "n_chains": 1, "checkpoint_every": None},
    "holdout": {"fraction": 0.9, "seed": REQUIRED},
    "predict": {"targets": None, "draws": None, "knots": None, "include_noise": False,
                "seed": REQUIRED, "n_warmup": 100, "n_inner": 10},
    "variogram": {"days": REQUIRED, "bin_edges": None, "max_distance": None, "n_bins": 15},
}
PATH_KEYS = {("data", "dataset"), ("data", "truth"), ("detrend", "panel"), ("knots", "file"),
             ("predict", "targets"), ("predict", "draws"), ("predict", "knots")}
TRUTH_KEYS = {"b", "tau2", "sigma2_1", "sigma2_2", "a", "c", "beta", "phi_s", "phi_u"}


class RunConfig:
    """Validated configuration document."""

    def __init__(self, doc: dict, base_dir="."):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping at the top level")
        self.base_dir = Path(base_dir)
        self.raw = copy.deepcopy(doc)
        _check_keys(doc, SCHEMA, "")
        if "seed" not in doc:
            raise ConfigError("missing required key 'seed'")
        self.doc = doc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls(doc or {}, path.parent)

    def section(self, name: str, required: bool = True) -> dict:
        """Section with defaults filled in; raises if a required key is absent."""
        if name not in self.doc:
            if required:
                raise ConfigError(f"missing required section '{name}'")
            given = {}
        else:
            given = self.doc[name] or {}
        out = {}
        for key, default in SCHEMA[name].items():
            if key in given:
                out[key] = given[key]
            elif default is REQUIRED:
                raise ConfigError(f"missing required key '{name}.{key}'")
            else:
                out[key] = copy.deepcopy(default)
        for key in list(out):
            if (name, key) in PATH_KEYS and out[key] is not None:
                out[key] = self.base_dir / out[key]
        return out

    def path(self, section: str, key: str, must_exist: bool = True) -> Path:
        value = self.section(section, required=True)[key]
        if value is None:
            raise ConfigError(f"missing required key '{section}.{key}'")
        if must_exist and not Path(value).exists():
            raise ConfigError(f"file for '{section}.{key}' does not exist: {value}")
        return Path(value)

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def output_dir(self) -> Path:
        return self.base_dir / self.doc.get("output_dir", SCHEMA["output_dir"])

    def threads(self, flag=None) -> int:
        if flag is not None:
            return int(flag)
        if self.doc.get("threads") is not None:
            return int(self.doc["threads"])
        return int(os.environ.get(THREADS_ENV, "1"))

    def priors(self, p: int) -> Priors:
        s = self.section("priors")
        mu = np.broadcast_to(np.asarray(s["mu_b"], dtype=float), (p,)).copy()
        V = np.asarray(s["V_b"], dtype=float)
        V = V * np.eye(p) if V.ndim == 0 else (np.diag(V) if V.ndim == 1 else V)
        bounds = dict(Priors.default(p).bounds)
        for k, v in (s["bounds"] or {}).items():
            if k not in bounds:
                raise ConfigError(f"unknown key 'priors.bounds.{k}'")
            bounds[k] = tuple(float(x) for x in v)
        try:
            return Priors(mu, V, s["a_tau"], s["b_tau"], s["a1"], s["b1"], s["a2"], s["b2"], bounds)
        except ValueError as exc:
            raise ConfigError(f"invalid priors: {exc}") from exc

    def truth(self, default: ModelParams) -> ModelParams:
        over = self.section("simulate")["truth"] or {}
        unknown = set(over) - TRUTH_KEYS
        if unknown:
            raise ConfigError(f"unknown keys in 'simulate.truth': {sorted(unknown)}")
        kw = {k: (np.asarray(v, float) if k == "b" else float(v)) for k, v in over.items()}
        return default.replace(**kw)


def _check_keys(doc, schema, prefix):
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key '{name}'")
        sub = schema[key]
        if isinstance(sub, dict) and sub and key not in ("truth", "bounds", "fixed"):
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"'{name}' must be a section")
            _check_keys(value, sub, name + ".")


