"""Eps sweeps, rate fits and acceptance evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..limit import run_limit
from ..rates import FitError, RateFit, fit_rate_with_floor
from .config import ConfigError, RunConfig, dt_for
from .initial import reference_fields
from .session import EpsResult, EpsRun

log = logging.getLogger(__name__)

# metric name -> power p such that metric^p is the squared quantity bounded by C eps^2
SQUARED_METRICS = {
    "sup_l1_f": 2,
    "sup_l1_rho": 2,
    "sup_l2_v": 2,
    "int_grad_v_sq": 1,
    "int_bl_f_sq": 1,
}
FITTED_METRICS = (
    "E0",
    "E1",
    "E0_outer",
    "E1_outer",
    "sup_l1_rho",
    "sup_l2_v",
    "int_grad_v_sq",
    "flux_l1",
    "sup_bl_rho",
    "int_bl_f_sq",
    "modulated_kinetic_integral",
)
E0_BAND = (0.9, 1.3)
D_BAND = (1.7, 2.3)


class SweepError(RuntimeError):
    def __init__(self, message: str, partial: "SweepResult"):
        super().__init__(message)
        self.partial = partial


@dataclass
class SweepResult:
    config: RunConfig
    runs: list[EpsResult] = field(default_factory=list)
    fits: dict[str, RateFit] = field(default_factory=dict)
    constants: dict[str, list[float]] = field(default_factory=dict)
    limit_summary: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)

    @property
    def eps(self) -> list[float]:
        return [r.eps for r in self.runs]

    def metric(self, name: str) -> list[float]:
        return [r.metrics.get(name, float("nan")) for r in self.runs]


def _fit_all(result: SweepResult) -> None:
    if len(result.runs) < 3:
        return
    for name in FITTED_METRICS:
        vals = result.metric(name)
        if any(not np.isfinite(val) for val in vals):
            continue
        try:
            result.fits[name] = fit_rate_with_floor(list(zip(result.eps, vals)))
        except FitError as exc:
            log.warning("fit of %s skipped: %s", name, exc)
    for name, power in SQUARED_METRICS.items():
        result.constants[name] = [val**power / e**2 for e, val in zip(result.eps, result.metric(name))]
    init = [r.audit_rows[0].modulated if r.audit_rows else 0.0 for r in result.runs]
    gron = []
    for run, h0 in zip(result.runs, init):
        peak = max((row.lhs for row in run.audit_rows), default=0.0)
        gron.append(peak / (run.eps**2 + h0))
    result.constants["modulated_gronwall"] = gron
    result.constants["modulated_kinetic"] = [
        r.metrics.get("modulated_kinetic_integral", 0.0) / r.eps**2 for r in result.runs
    ]


def _nonincreasing(values: list[float], slack: float = 0.05) -> bool:
    """Errors shrink with eps; the first (largest-eps) comparison may exceed by ``slack``."""
    ok = True
    for i, (a, b) in enumerate(zip(values, values[1:])):
        tol = slack * a if i == 0 else 0.0
        ok &= b <= a + tol
    return bool(ok)


def evaluate_acceptance(result: SweepResult) -> dict:
    cfg = result.config
    acc: dict = {}
    if "E0" in result.fits:
        s = result.fits["E0"].slope
        acc["slope_E0"] = {"value": s, "band": list(E0_BAND), "pass": E0_BAND[0] <= s <= E0_BAND[1]}
    if "sup_bl_rho" in result.fits:
        s = result.fits["sup_bl_rho"].slope
        acc["slope_D"] = {"value": s, "band": list(D_BAND), "pass": D_BAND[0] <= s <= D_BAND[1]}
    small = [r for r in result.runs if r.eps <= 0.2 + 1e-12]
    acc["hilbert_improvement"] = {
        "E0": [r.metrics["E0"] for r in small],
        "E1": [r.metrics["E1"] for r in small],
        "pass": bool(small) and all(r.metrics["E1"] < r.metrics["E0"] for r in small),
    }
    acc["hilbert_improvement_outer"] = {
        "window_start": cfg.diagnostics.outer_window_fraction * cfg.T,
        "E0": [r.metrics["E0_outer"] for r in small],
        "E1": [r.metrics["E1_outer"] for r in small],
        "pass": bool(small) and all(r.metrics["E1_outer"] < r.metrics["E0_outer"] for r in small),
    }
    worst = max((r.metrics["energy_worst_excess"] for r in result.runs), default=-np.inf)
    acc["energy_inequality"] = {"worst_excess": worst, "tol": cfg.energy_tol, "pass": bool(worst <= cfg.energy_tol)}
    if cfg.diagnostics.audit and result.runs:
        rows_ok = all(row.holds for r in result.runs for row in r.audit_rows)
        slack = min(r.metrics["audit_worst_slack"] for r in result.runs)
        acc["modulated_energy"] = {"worst_slack": slack, "pass": rows_ok}
    mono = {name: _nonincreasing(result.metric(name)[::1]) for name in ("E0", "sup_l1_rho", "sup_l2_v", "sup_bl_rho")}
    acc["monotone_in_eps"] = {"metrics": mono, "pass": all(mono.values())}
    return acc


def _limit_summary(cfg: RunConfig) -> dict:
    """One stand-alone limit run at the finest step of the sweep."""
    grid = cfg.phase_grid()
    density0, flow0 = reference_fields(grid.space, cfg.initial.density_amplitude, cfg.initial.flow_amplitude)
    dt, n, stride = dt_for(cfg, min(cfg.eps_list))
    traj = run_limit(grid.space, density0, flow0, cfg.T, 0.5 * dt, record_stride=2 * stride)
    diags = traj.diagnostics
    return {
        "dt": 0.5 * dt,
        "mass_drift": max(abs(d["mass"] - 1.0) for d in diags),
        "min_rho": min(d["min_rho"] for d in diags),
        "min_density0": float(np.min(density0)),
        "max_rho": max(d["max_rho"] for d in diags),
        "max_density0": float(np.max(density0)),
        "max_sup_grad_loggrad": max(d["sup_grad_loggrad"] for d in diags),
        "records": diags,
    }


def eps_sweep(
    cfg: RunConfig,
    progress: Callable[[EpsResult], None] | None = None,
    with_limit_run: bool = True,
) -> SweepResult:
    """Run every eps of ``cfg`` and fit the rates.

    On a failed run the partial result is attached to the raised
    :class:`SweepError`.
    """
    if len(cfg.eps_list) < 3:
        raise ConfigError("a sweep needs at least three eps values")
    result = SweepResult(cfg)
    for eps in cfg.eps_list:
        try:
            res = EpsRun(cfg, eps).run().result()
        except Exception as exc:
            _fit_all(result)
            raise SweepError(f"run at eps={eps} failed: {exc}", result) from exc
        # keep the sweep lightweight: fields are not needed downstream
        res.final, res.limit_final = None, None
        result.runs.append(res)
        if progress is not None:
            progress(res)
    _fit_all(result)
    if with_limit_run:
        result.limit_summary = _limit_summary(cfg)
    result.acceptance = evaluate_acceptance(result)
    return result
