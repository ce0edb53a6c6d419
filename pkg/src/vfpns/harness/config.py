"""Versioned JSON run configuration."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..grid import GridError, PhaseGrid

SCHEMA_VERSION = 1
RECIPES = ("well_prepared", "scaled_well_prepared")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    n_x: int = 32
    n_v: int = 32
    side: float = 2 * math.pi
    v_max: float = 6.0


@dataclass(frozen=True)
class DtPolicy:
    """``dt = min(cfl_fraction * eps * h_x / v_max, kappa * eps^3)``, then
    shrunk so that the step count is a multiple of ``records``."""

    cfl_fraction: float = 0.9
    kappa: float = 1.0
    transport_method: str = "spectral_shift"


@dataclass(frozen=True)
class InitialConfig:
    recipe: str = "well_prepared"
    density_amplitude: float = 0.5
    flow_amplitude: float = 0.5
    perturbation_amplitude: float = 0.0


@dataclass(frozen=True)
class DiagnosticsConfig:
    records: int = 10
    audit: bool = True
    phase_bl: bool = True
    phase_bl_blocks: tuple[int, int] = (4, 4)
    outer_window_fraction: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    grid: GridConfig = field(default_factory=GridConfig)
    eps_list: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05)
    T: float = 0.5
    dt_policy: DtPolicy = field(default_factory=DtPolicy)
    initial: InitialConfig = field(default_factory=InitialConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    energy_tol: float = 1e-4
    output_dir: str = "out"
    seed: int = 0

    def phase_grid(self) -> PhaseGrid:
        g = self.grid
        return PhaseGrid.build(g.n_x, g.n_v, g.side, g.v_max)

    def with_eps(self, eps_list) -> "RunConfig":
        out = dataclasses.replace(self, eps_list=tuple(float(e) for e in eps_list))
        validate(out)
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {"grid": GridConfig, "dt_policy": DtPolicy, "initial": InitialConfig, "diagnostics": DiagnosticsConfig}


def _build(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {fld.name for fld in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = {}
    for fld in dataclasses.fields(cls):
        if fld.name not in raw:
            continue
        val = raw[fld.name]
        if cls is RunConfig and fld.name in _NESTED:
            val = _build(_NESTED[fld.name], val, f"{where}.{fld.name}")
        elif isinstance(val, list):
            val = tuple(val)
        kwargs[fld.name] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _positive(value, name: str) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0 or not math.isfinite(value):
        raise ConfigError(f"{name} must be a positive number, got {value!r}")


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.schema_version}")
    g = cfg.grid
    for key in ("n_x", "n_v"):
        if not isinstance(getattr(g, key), int) or isinstance(getattr(g, key), bool):
            raise ConfigError(f"grid.{key} must be an integer")
    try:
        cfg.phase_grid()
    except GridError as exc:
        raise ConfigError(f"grid: {exc}") from exc
    if not cfg.eps_list:
        raise ConfigError("eps_list must not be empty")
    for e in cfg.eps_list:
        _positive(e, "eps")
        if e > 1:
            raise ConfigError("eps must lie in (0, 1]")
    if any(b >= a for a, b in zip(cfg.eps_list, cfg.eps_list[1:])):
        raise ConfigError("eps_list must be strictly decreasing")
    _positive(cfg.T, "T")
    _positive(cfg.dt_policy.kappa, "dt_policy.kappa")
    _positive(cfg.dt_policy.cfl_fraction, "dt_policy.cfl_fraction")
    if cfg.dt_policy.cfl_fraction > 1:
        raise ConfigError("dt_policy.cfl_fraction must be <= 1")
    if cfg.dt_policy.transport_method not in ("spectral_shift", "semi_lagrangian"):
        raise ConfigError(f"unknown transport method {cfg.dt_policy.transport_method!r}")
    if cfg.initial.recipe not in RECIPES:
        raise ConfigError(f"unknown initial recipe {cfg.initial.recipe!r}")
    if not 0 <= cfg.initial.density_amplitude < 1:
        raise ConfigError("initial.density_amplitude must lie in [0, 1)")
    if abs(cfg.initial.perturbation_amplitude) > 1:
        raise ConfigError("initial.perturbation_amplitude must satisfy |w| <= 1")
    d = cfg.diagnostics
    if not isinstance(d.records, int) or d.records < 1:
        raise ConfigError("diagnostics.records must be a positive integer")
    if len(d.phase_bl_blocks) != 2:
        raise ConfigError("diagnostics.phase_bl_blocks needs two entries")
    if not 0 <= d.outer_window_fraction < 1:
        raise ConfigError("diagnostics.outer_window_fraction must lie in [0, 1)")
    _positive(cfg.energy_tol, "energy_tol")
    if not isinstance(cfg.seed, int):
        raise ConfigError("seed must be an integer")
    return cfg


def config_from_dict(raw: dict) -> RunConfig:
    if "schema_version" not in raw:
        raise ConfigError("missing schema_version")
    return validate(_build(RunConfig, raw, "config"))


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)


def dt_for(cfg: RunConfig, eps: float) -> tuple[float, int, int]:
    """Return ``(dt, n_steps, record_stride)`` for one eps."""
    grid = cfg.phase_grid()
    pol = cfg.dt_policy
    bound = min(pol.cfl_fraction * eps * grid.space.h / grid.velocity.v_max, pol.kappa * eps**3)
    recs = cfg.diagnostics.records
    per_record = max(1, math.ceil(cfg.T / (bound * recs) - 1e-9))
    n_steps = per_record * recs
    return cfg.T / n_steps, n_steps, per_record
