"""Experiment configuration: strict YAML parsing into pipeline objects.

Unknown keys are rejected with their path; every run report embeds the
fully resolved configuration so runs are reproducible from the report
alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .dynamics import RolloutConfig, VehicleParams
from .lateral import ReferenceCircle
from .losses import LossConfig
from .pipeline import (GenerationSpec, IdentificationProblem,
                       OptimizerSettings)


class ConfigError(ValueError):
    """Configuration rejected; message carries the offending path."""


VEHICLE_DEFAULTS = {
    "mass": 3.1, "lf": 0.159, "lr": 0.171, "Iz": 0.04712, "h_cg": 0.074,
    "mu": 1.0489, "C_Sf": 4.728, "C_Sr": 5.546, "wheel_radius": 0.05,
    "max_steer": 0.34, "gravity": 9.81,
}

ROLLOUT_DEFAULTS = {"dt": 0.002, "steps": 1000, "integrator": "rk4",
                    "v_switch": 0.1}

PROBLEM_DEFAULTS = {
    "mode": "trajectory_match", "decision": [], "ties": {},
    "init_ranges": {}, "bounds": {}, "target_speed": 1.0,
    "ema_alpha": 0.05, "scale_derivative_by_dt": True,
    "controller_stiffness": None,
}

LOSS_DEFAULTS = {"weight": None, "gamma": 0.1, "t_cls": None, "t_vs": None,
                 "stride": None}

OPTIMIZER_DEFAULTS = {
    "kind": "adam", "epochs": 100, "batch": 4, "lr": 0.05,
    "clip_norm": None, "weight_decay": 0.0,
    "early_stopping": {"enabled": True, "patience": 5, "val_every": 4},
    "sigma": None, "population": None,
}

REFERENCE_DEFAULTS = {"radius": 30.0, "side": "left", "lateral_offset": 1.0}

GENERATION_DEFAULTS = {"mode": None, "count": 16, "val_count": 2,
                       "radius_range": [25.0, 35.0], "lateral_offset": 1.0}

SEED_DEFAULTS = {"base": 0, "count": 1}

TOP_LEVEL_KEYS = ("vehicle", "rollout", "problem", "losses", "optimizer",
                  "poles", "reference", "generation", "seeds", "output_dir")


# Mapping-valued keys whose contents are data (variable name -> value),
# not schema, so strict key checking does not descend into them.
_FREEFORM = {"problem": ("ties", "init_ranges", "bounds")}


def _merge_section(name: str, raw: Any, defaults: dict) -> dict:
    if raw is None:
        return dict(defaults)
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    freeform = _FREEFORM.get(name, ())
    out = dict(defaults)
    for key, val in raw.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {name}.{key}")
        if (key not in freeform and isinstance(defaults[key], dict)
                and isinstance(val, dict)):
            sub = dict(defaults[key])
            for k2, v2 in val.items():
                if k2 not in sub:
                    raise ConfigError(f"unknown key {name}.{key}.{k2}")
                sub[k2] = v2
            out[key] = sub
        else:
            out[key] = val
    return out


def _parse_pole(entry: Any, idx: int) -> complex:
    if isinstance(entry, (int, float)):
        return complex(entry, 0.0)
    if isinstance(entry, str):
        try:
            return complex(entry.replace(" ", ""))
        except ValueError as err:
            raise ConfigError(f"poles[{idx}]: cannot parse {entry!r}") from err
    if isinstance(entry, (list, tuple)) and len(entry) == 2:
        return complex(float(entry[0]), float(entry[1]))
    raise ConfigError(f"poles[{idx}]: expected number, 're+imj' string, "
                      f"or [re, im] pair, got {entry!r}")


@dataclass
class ExperimentConfig:
    """Fully resolved configuration for one experiment."""

    vehicle_cfg: dict
    rollout_cfg: dict
    problem_cfg: dict
    loss_cfg: dict
    optimizer_cfg: dict
    poles: Optional[tuple[complex, ...]]
    reference_cfg: dict
    generation_cfg: dict
    seeds_cfg: dict
    output_dir: str = "runs/out"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        for key in raw:
            if key not in TOP_LEVEL_KEYS:
                raise ConfigError(f"unknown key {key}")
        poles_raw = raw.get("poles")
        poles = None
        if poles_raw is not None:
            if not isinstance(poles_raw, (list, tuple)):
                raise ConfigError("poles must be a list")
            poles = tuple(_parse_pole(p, i) for i, p in enumerate(poles_raw))
        return cls(
            vehicle_cfg=_merge_section("vehicle", raw.get("vehicle"), VEHICLE_DEFAULTS),
            rollout_cfg=_merge_section("rollout", raw.get("rollout"), ROLLOUT_DEFAULTS),
            problem_cfg=_merge_section("problem", raw.get("problem"), PROBLEM_DEFAULTS),
            loss_cfg=_merge_section("losses", raw.get("losses"), LOSS_DEFAULTS),
            optimizer_cfg=_merge_section("optimizer", raw.get("optimizer"), OPTIMIZER_DEFAULTS),
            poles=poles,
            reference_cfg=_merge_section("reference", raw.get("reference"), REFERENCE_DEFAULTS),
            generation_cfg=_merge_section("generation", raw.get("generation"), GENERATION_DEFAULTS),
            seeds_cfg=_merge_section("seeds", raw.get("seeds"), SEED_DEFAULTS),
            output_dir=raw.get("output_dir", "runs/out"),
        )

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {path}") from err
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse {path}: {err}") from err
        try:
            return cls.from_dict(raw if raw is not None else {})
        except ConfigError as err:
            raise ConfigError(f"{path}: {err}") from err

    # -- builders ---------------------------------------------------------

    def vehicle(self) -> VehicleParams:
        try:
            return VehicleParams(**self.vehicle_cfg)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"vehicle: {err}") from err

    def rollout(self) -> RolloutConfig:
        try:
            return RolloutConfig(**self.rollout_cfg)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"rollout: {err}") from err

    def problem(self) -> IdentificationProblem:
        cfg = self.problem_cfg
        ranges = {k: (float(v[0]), float(v[1]))
                  for k, v in cfg["init_ranges"].items()}
        bounds = {}
        for k, v in cfg["bounds"].items():
            lo = -math.inf if v[0] is None else float(v[0])
            hi = math.inf if v[1] is None else float(v[1])
            bounds[k] = (lo, hi)
        stiff = cfg["controller_stiffness"]
        try:
            return IdentificationProblem(
                mode=cfg["mode"],
                decision=tuple(cfg["decision"]),
                init_ranges=ranges,
                fixed_params=self.vehicle(),
                ties=dict(cfg["ties"]),
                bounds=bounds,
                poles=self.poles,
                target_speed=float(cfg["target_speed"]),
                ema_alpha=float(cfg["ema_alpha"]),
                scale_derivative_by_dt=bool(cfg["scale_derivative_by_dt"]),
                controller_stiffness=None if stiff is None
                else (float(stiff[0]), float(stiff[1])),
            )
        except ValueError as err:
            raise ConfigError(f"problem: {err}") from err

    def loss_config(self, mode: str, steps: int) -> LossConfig:
        cfg = self.loss_cfg
        try:
            if mode == "trajectory_match":
                weight = 100.0 if cfg["weight"] is None else float(cfg["weight"])
                return LossConfig.trajectory_match(weight=weight,
                                                   gamma=float(cfg["gamma"]))
            weight = 5000.0 if cfg["weight"] is None else float(cfg["weight"])
            t_cls = (int(steps * 2.0 / 7.0) if cfg["t_cls"] is None
                     else int(cfg["t_cls"]))
            t_vs = (int(steps * 2.5 / 7.0) if cfg["t_vs"] is None
                    else int(cfg["t_vs"]))
            return LossConfig.lane_keeping(
                t_cls=t_cls, t_vs=t_vs,
                target_speed=float(self.problem_cfg["target_speed"]),
                weight=weight)
        except ValueError as err:
            raise ConfigError(f"losses: {err}") from err

    def loss_stride(self) -> Optional[int]:
        s = self.loss_cfg["stride"]
        return None if s is None else int(s)

    def optimizer_settings(self, kind: Optional[str] = None) -> OptimizerSettings:
        cfg = self.optimizer_cfg
        es = cfg["early_stopping"]
        try:
            return OptimizerSettings(
                kind=kind or cfg["kind"],
                epochs=int(cfg["epochs"]),
                batch=int(cfg["batch"]),
                lr=float(cfg["lr"]),
                clip_norm=math.inf if cfg["clip_norm"] is None
                else float(cfg["clip_norm"]),
                weight_decay=float(cfg["weight_decay"]),
                early_stopping=bool(es["enabled"]),
                patience=int(es["patience"]),
                val_every=int(es["val_every"]),
                sigma=None if cfg["sigma"] is None else float(cfg["sigma"]),
                population=None if cfg["population"] is None
                else int(cfg["population"]),
            )
        except ValueError as err:
            raise ConfigError(f"optimizer: {err}") from err

    def generation_spec(self) -> GenerationSpec:
        cfg = self.generation_cfg
        mode = cfg["mode"] or self.problem_cfg["mode"]
        if mode == "gain_direct":
            mode = "lane_keeping"
        try:
            return GenerationSpec(
                mode=mode,
                count=int(cfg["count"]),
                val_count=int(cfg["val_count"]),
                target_speed=float(self.problem_cfg["target_speed"]),
                radius_range=(float(cfg["radius_range"][0]),
                              float(cfg["radius_range"][1])),
                lateral_offset=float(cfg["lateral_offset"]),
                poles=self.poles,
                ema_alpha=float(self.problem_cfg["ema_alpha"]),
            )
        except ValueError as err:
            raise ConfigError(f"generation: {err}") from err

    def reference(self) -> ReferenceCircle:
        cfg = self.reference_cfg
        side = cfg["side"]
        if side not in ("left", "right"):
            raise ConfigError(f"reference.side must be 'left' or 'right', got {side!r}")
        cx = -float(cfg["radius"]) if side == "left" else float(cfg["radius"])
        return ReferenceCircle(cx=cx, cy=float(cfg["lateral_offset"]),
                               radius=float(cfg["radius"]),
                               direction="ccw" if side == "left" else "cw")

    def to_dict(self) -> dict:
        return {
            "vehicle": dict(self.vehicle_cfg),
            "rollout": dict(self.rollout_cfg),
            "problem": dict(self.problem_cfg),
            "losses": dict(self.loss_cfg),
            "optimizer": dict(self.optimizer_cfg),
            "poles": None if self.poles is None
            else [[p.real, p.imag] for p in self.poles],
            "reference": dict(self.reference_cfg),
            "generation": dict(self.generation_cfg),
            "seeds": dict(self.seeds_cfg),
            "output_dir": self.output_dir,
        }
