"""Experiment configuration: YAML files validated against a fixed schema.

Unknown keys are rejected with the offending key named, and every default is
filled in explicitly so that a written manifest fully describes the run.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

SCENARIOS = ("uniform_wave", "uniform_hierarchy", "cumulant_scaling", "gaussian_case", "nongaussian_fp", "coeffs_only")


class ConfigError(ValueError):
    """Schema violation; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


_NUM = (int, float)

# key -> (allowed types, default); ``None`` default means optional
TOP_LEVEL: dict[str, tuple[tuple, Any]] = {
    "scenario": ((str,), None),
    "seed": ((int,), 0),
    "output_dir": ((str,), "out"),
    "domain": ((str,), None),
    "kernel": ((dict,), None),
    "potential": ((dict,), None),
    "f0": ((dict,), None),
    "beta": (_NUM, 0.0),
    "R": (_NUM, None),
    "n_particles": ((list,), [8]),
    "n_samples": ((int,), 1024),
    "block_size": ((int,), 256),
    "n_workers": ((int,), None),
    "h": (_NUM, 0.25),
    "tau": (_NUM, 0.3),
    "tau_grid": ((list,), [0.2, 0.4, 0.6]),
    "cutoff": ((int,), 1),
    "max_level": ((int,), 4),
    "n_angular": ((int,), 16),
    "eps_schedule": ((list,), [1e-2, 5e-3, 2.5e-3]),
    "n_panels": ((int,), 24),
    "cesaro_T": ((list,), [200.0]),
    "fp_taus": ((list,), [0.0, 1.0, 10.0, 100.0]),
}

KERNEL_KEYS = {"modes", "family", "amplitude", "width", "radius", "coefficients"}
POTENTIAL_KEYS = {"family", "amplitude", "width", "radius", "coefficients"}
F0_KEYS = {"cosines", "center", "width", "radius"}


@dataclass
class ExperimentConfig:
    scenario: str
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __getattr__(self, name):
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    @property
    def domain(self) -> str:
        return self.values["domain"]


def _check_type(key: str, value, types: tuple):
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(key, f"expected {'/'.join(t.__name__ for t in types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(key, f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")


def _check_section(name: str, section: Mapping, allowed: set):
    for k in section:
        if k not in allowed:
            raise ConfigError(f"{name}.{k}", "unknown key")


def _default_domain(scenario: str, cfg: Mapping) -> str:
    if scenario in ("uniform_wave", "uniform_hierarchy", "cumulant_scaling"):
        return "torus"
    if scenario == "coeffs_only":
        kernel = cfg.get("kernel") or {}
        return "torus" if "modes" in kernel else "plane"
    return "plane"


def validate(raw: Mapping, source: str | None = None) -> ExperimentConfig:
    """Check keys and types, fill defaults, and return the validated config."""
    if not isinstance(raw, Mapping):
        raise ConfigError("<root>", "config must be a mapping")
    for k in raw:
        if k not in TOP_LEVEL:
            raise ConfigError(str(k), "unknown key")
    if "scenario" not in raw:
        raise ConfigError("scenario", "missing required key")
    scenario = raw["scenario"]
    if scenario not in SCENARIOS:
        raise ConfigError("scenario", f"must be one of {', '.join(SCENARIOS)}")
    out: dict[str, Any] = {}
    for key, (types, default) in TOP_LEVEL.items():
        if key in raw and raw[key] is not None:
            _check_type(key, raw[key], types)
            out[key] = copy.deepcopy(raw[key])
        else:
            out[key] = copy.deepcopy(default)
    out["beta"] = float(out["beta"])
    out["h"] = float(out["h"])
    out["tau"] = float(out["tau"])
    if out["R"] is not None:
        out["R"] = float(out["R"])
    for key in ("n_particles",):
        if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in out[key]):
            raise ConfigError(key, "entries must be positive integers")
    for key in ("tau_grid", "eps_schedule", "cesaro_T", "fp_taus"):
        if not all(isinstance(v, _NUM) and not isinstance(v, bool) for v in out[key]):
            raise ConfigError(key, "entries must be numbers")
        out[key] = [float(v) for v in out[key]]
    if any(e2 >= e1 for e1, e2 in zip(out["eps_schedule"], out["eps_schedule"][1:])):
        raise ConfigError("eps_schedule", "must be strictly decreasing")
    for key in ("n_samples", "block_size", "max_level", "n_angular", "n_panels"):
        if out[key] < 1:
            raise ConfigError(key, "must be positive")
    if out["cutoff"] < 0:
        raise ConfigError("cutoff", "must be non-negative")
    if out["kernel"] is not None:
        _check_section("kernel", out["kernel"], KERNEL_KEYS)
    if out["potential"] is not None:
        _check_section("potential", out["potential"], POTENTIAL_KEYS)
    if out["f0"] is not None:
        _check_section("f0", out["f0"], F0_KEYS)
    out["domain"] = out["domain"] or _default_domain(scenario, out)
    if out["domain"] not in ("torus", "plane"):
        raise ConfigError("domain", "must be 'torus' or 'plane'")
    if out["kernel"] is None:
        raise ConfigError("kernel", "missing required key")
    if out["domain"] == "torus" and "modes" not in out["kernel"]:
        raise ConfigError("kernel.modes", "torus kernels need a mode table")
    if out["domain"] == "plane" and "family" not in out["kernel"]:
        raise ConfigError("kernel.family", "plane kernels need a radial family")
    return ExperimentConfig(scenario, out, source)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"YAML parse error: {exc}") from exc
    return validate(raw or {}, str(path))
