"""TOML configuration for the full pipeline.

``load_config`` merges a user file over the shipped defaults; ``dump_config``
writes the effective configuration back out.  Loading a dumped file yields an
identical configuration.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cbf import CbfChain, build_chain, linear_constraint
from .dynamics import MatrixBounds, RobotParams, perturbed_params
from .sim import Mode, Region, TrackingGain

DEFAULT_CONFIG = "defaults.toml"


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def default_text() -> str:
    return resources.files("ejcbf").joinpath("data", DEFAULT_CONFIG).read_text()


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path}{k}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path}{k} must be a table")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class Config:
    raw: dict

    # --- typed views -------------------------------------------------

    def robot(self) -> RobotParams:
        try:
            return RobotParams.from_dict(self.raw["robot"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[robot]: {exc}") from exc

    def prior_params(self) -> RobotParams:
        p = self.raw["prior"]
        return perturbed_params(self.robot(), p["rel_scale"], p["seed"])

    def bounds(self) -> MatrixBounds:
        r, s = self.robot(), self.raw["switch"]
        return MatrixBounds.from_g_bounds(s["gamma_G_lo"], s["gamma_G_hi"],
                                          r.motor_inertia_scale, r.stiffness_scale)

    def chain(self) -> CbfChain:
        c = self.raw["cbf"]
        return build_chain(linear_constraint(c["offset"], c["weights"]), c["alphas"], c["kappa"])

    def gain(self) -> TrackingGain:
        try:
            return TrackingGain(np.array(self.raw["control"]["gain"], dtype=float))
        except ValueError as exc:
            raise ConfigError(f"[control] gain: {exc}") from exc

    def region(self) -> Region:
        d = self.raw["data"]
        return Region.from_blocks([d["x1_half_width"], d["x2_half_width"],
                                   d["x3_half_width"], d["x4_half_width"]])

    def grid_shape(self):
        shape = self.raw["data"]["grid_shape"]
        return tuple(shape) if shape else None

    def modes(self) -> list:
        return [Mode(m) for m in self.raw["experiment"]["modes"]]

    def __getitem__(self, key):
        return self.raw[key]

    # --- editing -------------------------------------------------------

    def override(self, section: str, **values) -> "Config":
        return Config(_merge(self.raw, {section: values}))

    def validate(self) -> "Config":
        self.robot()
        self.gain()
        try:
            self.bounds()
            self.chain()
            self.region()
            self.modes()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        e = self.raw["experiment"]
        if e["n_trials"] < 1:
            raise ConfigError("experiment.n_trials must be >= 1")
        lo, hi = e["c_range"]
        if not 0 < lo <= hi:
            raise ConfigError("experiment.c_range must be positive and ordered")
        if not e["horizon"] > 0 or not self.raw["control"]["dt"] > 0:
            raise ConfigError("horizon and control.dt must be positive")
        if self.raw["control"]["solver"] not in ("specialized", "ipm"):
            raise ConfigError("control.solver must be 'specialized' or 'ipm'")
        if self.raw["gp"]["optimizer"] not in ("lbfgs", "nelder-mead"):
            raise ConfigError("gp.optimizer must be 'lbfgs' or 'nelder-mead'")
        if e["workers"] < 0:
            raise ConfigError("experiment.workers must be >= 0")
        return self


def parse_config(text: str | None = None) -> Config:
    base = tomllib.loads(default_text())
    if text is None:
        return Config(base).validate()
    try:
        user = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return Config(_merge(base, user)).validate()


def load_config(path=None) -> Config:
    if path is None:
        return parse_config()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def dump_config(cfg: Config) -> str:
    return tomli_w.dumps(cfg.raw)
