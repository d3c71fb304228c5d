"""Run configuration: flat ``dotted.key = <JSON literal>`` lines.

Comments start with ``#``.  Every key has a default; unknown keys and
out-of-range values raise :class:`ConfigError` naming the offending field.
Serialization writes all keys sorted, so parse -> dump -> parse is the identity.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .configuration import Configuration, PoissonWindow, make_poisson_window
from .model import KERNEL_FAMILIES, POTENTIAL_FAMILIES, JumpKernel, ModelParams, Potential

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "parse_config", "load_config"]

CHECKS = ("moments", "fp_residual", "type_growth", "alpha_convergence", "chentsov",
          "hierarchy_spectral", "metric_axioms", "combinatorics")

DEFAULTS: dict[str, object] = {
    "model.kernel.family": "gaussian",
    "model.kernel.scale": 1.0,
    "model.potential.family": "box",
    "model.potential.height": 0.0,
    "model.potential.range": 1.0,
    "model.d": 1,
    "model.alpha": 0.0,
    "initial.kind": "poisson",
    "initial.kappa": 0.5,
    "initial.low": [-5.0],
    "initial.high": [5.0],
    "initial.file": None,
    "run.t_max": 1.0,
    "run.query_times": [0.0, 0.25, 0.5, 0.75, 1.0],
    "run.replicas": 100,
    "run.base_seed": 0,
    "run.torus": None,
    "hierarchy.R": 10.0,
    "hierarchy.M": 64,
    "hierarchy.N_max": 2,
    "hierarchy.J_max": 1,
    "hierarchy.closure": "zero",
    "hierarchy.scheme": "rk4",
    "hierarchy.dt": 0.005,
    "hierarchy.n_terms": 8,
    "hierarchy.t": 0.5,
    "hierarchy.theta0": 0.0,
    "hierarchy.theta_prime": None,
    "hierarchy.kappa": 0.5,
    "hierarchy.amplitude": 0.0,
    "hierarchy.self_interaction": False,
    "verify.checks": ["moments", "fp_residual", "type_growth"],
    "verify.n_sigma": None,
    "verify.tau": 0.6,
    "verify.theta_amplitude": 0.5,
    "output.dir": "out",
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


@dataclass(frozen=True)
class RunConfig:
    values: dict
    base_dir: Path = Path(".")

    def __getitem__(self, key: str):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def with_overrides(self, **kv) -> "RunConfig":
        vals = dict(self.values)
        for k, v in kv.items():
            vals[k.replace("__", ".")] = v
        cfg = RunConfig(vals, self.base_dir)
        cfg.validate()
        return cfg

    def dumps(self) -> str:
        return "".join(f"{k} = {json.dumps(self.values[k])}\n" for k in sorted(self.values))

    # ---------------------------------------------------------------- typed views
    def model_params(self) -> ModelParams:
        d = self["model.d"]
        kern = JumpKernel(self["model.kernel.family"], float(self["model.kernel.scale"]), d)
        pot = Potential(self["model.potential.family"], float(self["model.potential.height"]),
                        float(self["model.potential.range"]), d)
        return ModelParams(kern, pot, float(self["model.alpha"]))

    def source(self) -> PoissonWindow | Configuration:
        if self["initial.kind"] == "poisson":
            return make_poisson_window(self["initial.kappa"], (self["initial.low"], self["initial.high"]))
        return Configuration.from_csv(self.base_dir / self["initial.file"])

    def window(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self["initial.low"], float), np.asarray(self["initial.high"], float)

    # ---------------------------------------------------------------- validation
    def validate(self):
        v = self.values
        for k in v:
            if k not in DEFAULTS:
                raise ConfigError(k, "unknown key")
        d = v["model.d"]
        if d not in (1, 2):
            raise ConfigError("model.d", "must be 1 or 2")
        if v["model.kernel.family"] not in KERNEL_FAMILIES:
            raise ConfigError("model.kernel.family", f"must be one of {KERNEL_FAMILIES}")
        if v["model.potential.family"] not in POTENTIAL_FAMILIES:
            raise ConfigError("model.potential.family", f"must be one of {POTENTIAL_FAMILIES}")
        for key in ("model.kernel.scale", "model.potential.range"):
            if not (_num(v[key]) and v[key] > 0):
                raise ConfigError(key, "must be a positive number")
        if not (_num(v["model.potential.height"]) and v["model.potential.height"] >= 0):
            raise ConfigError("model.potential.height", "must be a nonnegative number")
        if not (_num(v["model.alpha"]) and 0 <= v["model.alpha"] <= 1):
            raise ConfigError("model.alpha", "must lie in [0, 1]")
        if v["initial.kind"] not in ("poisson", "fixed"):
            raise ConfigError("initial.kind", "must be 'poisson' or 'fixed'")
        if v["initial.kind"] == "poisson":
            if not (_num(v["initial.kappa"]) and v["initial.kappa"] > 0):
                raise ConfigError("initial.kappa", "must be positive")
            lo, hi = v["initial.low"], v["initial.high"]
            for key, w in (("initial.low", lo), ("initial.high", hi)):
                if not (isinstance(w, list) and len(w) == d and all(_num(x) for x in w)):
                    raise ConfigError(key, f"must be a list of {d} numbers")
            if any(b <= a for a, b in zip(lo, hi)):
                raise ConfigError("initial.high", "window must have positive extent")
        else:
            f = v["initial.file"]
            if not isinstance(f, str) or not (self.base_dir / f).is_file():
                raise ConfigError("initial.file", f"configuration file {f!r} not found")
        if not (_num(v["run.t_max"]) and v["run.t_max"] > 0):
            raise ConfigError("run.t_max", "must be positive")
        q = v["run.query_times"]
        if not (isinstance(q, list) and all(_num(t) and 0 <= t <= v["run.t_max"] for t in q)):
            raise ConfigError("run.query_times", "must be a list of times in [0, t_max]")
        if not (_int(v["run.replicas"]) and v["run.replicas"] >= 1):
            raise ConfigError("run.replicas", "must be a positive integer")
        if not (_int(v["run.base_seed"]) and 0 <= v["run.base_seed"] < 2**64):
            raise ConfigError("run.base_seed", "must be an unsigned 64-bit integer")
        if v["run.torus"] is not None and not (_num(v["run.torus"]) and v["run.torus"] > 0):
            raise ConfigError("run.torus", "must be null or a positive side length")
        if not (_int(v["hierarchy.M"]) and 4 <= v["hierarchy.M"] <= 256):
            raise ConfigError("hierarchy.M", "must be an integer in 4..256")
        if not (_num(v["hierarchy.R"]) and v["hierarchy.R"] > 0):
            raise ConfigError("hierarchy.R", "must be positive")
        if v["hierarchy.N_max"] not in (1, 2, 3):
            raise ConfigError("hierarchy.N_max", "must be 1, 2 or 3")
        if v["hierarchy.J_max"] not in (0, 1, 2):
            raise ConfigError("hierarchy.J_max", "must be 0, 1 or 2")
        if v["hierarchy.closure"] not in ("zero", "poisson_factorized", None):
            raise ConfigError("hierarchy.closure", "must be 'zero', 'poisson_factorized' or null")
        if v["hierarchy.scheme"] not in ("rk4", "series"):
            raise ConfigError("hierarchy.scheme", "must be 'rk4' or 'series'")
        if not (_num(v["hierarchy.dt"]) and 0 < v["hierarchy.dt"] <= 0.01):
            raise ConfigError("hierarchy.dt", "must lie in (0, 0.01]")
        if not (_int(v["hierarchy.n_terms"]) and v["hierarchy.n_terms"] >= 1):
            raise ConfigError("hierarchy.n_terms", "must be a positive integer")
        if not (_num(v["hierarchy.t"]) and v["hierarchy.t"] >= 0):
            raise ConfigError("hierarchy.t", "must be nonnegative")
        tp = v["hierarchy.theta_prime"]
        if tp is not None and not (_num(tp) and tp > v["hierarchy.theta0"]):
            raise ConfigError("hierarchy.theta_prime", "must exceed hierarchy.theta0")
        if not (_num(v["hierarchy.kappa"]) and v["hierarchy.kappa"] > 0):
            raise ConfigError("hierarchy.kappa", "must be positive")
        if not (_num(v["hierarchy.amplitude"]) and 0 <= v["hierarchy.amplitude"] < v["hierarchy.kappa"]):
            raise ConfigError("hierarchy.amplitude", "must lie in [0, hierarchy.kappa)")
        if not isinstance(v["hierarchy.self_interaction"], bool):
            raise ConfigError("hierarchy.self_interaction", "must be true or false")
        checks = v["verify.checks"]
        if not (isinstance(checks, list) and all(c in CHECKS for c in checks)):
            raise ConfigError("verify.checks", f"entries must be among {CHECKS}")
        ns = v["verify.n_sigma"]
        if ns is not None and not (_num(ns) and ns > 0):
            raise ConfigError("verify.n_sigma", "must be null or positive")
        if not (_num(v["verify.tau"]) and v["verify.tau"] >= 0):
            raise ConfigError("verify.tau", "must be nonnegative")
        if not (_num(v["verify.theta_amplitude"]) and v["verify.theta_amplitude"] >= 0):
            raise ConfigError("verify.theta_amplitude", "must be nonnegative")
        if not isinstance(v["output.dir"], str):
            raise ConfigError("output.dir", "must be a string")


def parse_config(text: str, base_dir=".") -> RunConfig:
    values = dict(DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, _, lit = line.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown key")
        try:
            values[key] = json.loads(lit.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(key, f"value is not a JSON literal ({exc.msg})") from None
    cfg = RunConfig(values, Path(base_dir))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("--config", f"file {str(path)!r} not found")
    return parse_config(path.read_text(), path.parent)
