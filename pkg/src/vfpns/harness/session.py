"""One coupled run at fixed eps, compared step by step with the limit system."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import bl
from .. import entropy as ent
from ..coupled import CoupledState, EnergyLedger, RunningIntegral, StepData, run_coupled
from ..fluid import FluidState, pressure_field
from ..grid import spectral_grad, vector_grad
from ..hilbert import correctors
from ..io import read_checkpoint, write_checkpoint
from ..kinetic import StepPlan
from ..limit import LimitState, LimitStepper, effective_velocity
from .audit import AuditRow, ModulatedEnergyLedger, audit_terms
from .config import RunConfig, dt_for
from .initial import initial_state

log = logging.getLogger(__name__)


@dataclass
class Trackers:
    """Running suprema and time integrals of the comparison metrics."""

    E0: float = 0.0
    E1: float = 0.0
    E0_outer: float = 0.0
    E1_outer: float = 0.0
    l1_rho: float = 0.0
    l2_v: float = 0.0
    bl_rho: float = 0.0
    bl_f_sq_samples: list = field(default_factory=list)
    grad_gap: RunningIntegral = field(default_factory=RunningIntegral)
    flux_gap: RunningIntegral = field(default_factory=RunningIntegral)

    def state(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("grad_gap", "flux_gap")}
        out["grad_gap"] = self.grad_gap.state()
        out["flux_gap"] = self.flux_gap.state()
        return out

    @classmethod
    def from_state(cls, st: dict) -> "Trackers":
        st = dict(st)
        grad = RunningIntegral.from_state(st.pop("grad_gap"))
        flux = RunningIntegral.from_state(st.pop("flux_gap"))
        st["bl_f_sq_samples"] = [list(p) for p in st["bl_f_sq_samples"]]
        return cls(**st, grad_gap=grad, flux_gap=flux)


class LimitComparison:
    """Observer advancing the limit system in lockstep with the coupled run."""

    def __init__(self, cfg: RunConfig, grid, eps: float, dt: float, density0: np.ndarray, flow0: np.ndarray):
        self.cfg, self.grid, self.eps = cfg, grid, eps
        self.stepper = LimitStepper(grid.space, dt, substeps=2)
        self.limit = LimitState(density0.copy(), FluidState(flow0.copy(), pressure_field(grid.space, flow0), 0.0), 0.0)
        self.limit_step = 0
        self.trackers = Trackers()
        self.audit = ModulatedEnergyLedger() if cfg.diagnostics.audit else None
        self.audit_rows: list[AuditRow] = []
        self._last_audit: AuditRow | None = None
        self.metric = bl.torus_metric(grid.space.n_x, grid.space.side)
        self.outer_start = cfg.diagnostics.outer_window_fraction * cfg.T

    # -- observer protocol
    def on_step(self, data: StepData) -> None:
        while self.limit_step < data.step:
            self.limit = self.stepper.step(self.limit)
            self.limit_step += 1
        grid, space, eps = self.grid, self.grid.space, self.eps
        lim_density, lim_flow = self.limit.density, self.limit.flow
        tr = self.trackers
        corr = correctors(grid, lim_density, lim_flow)
        e0 = ent.l1_distance(grid, data.dist, corr.f0)
        e1 = ent.l1_distance(grid, data.dist, corr.f0 + eps * corr.f1)
        tr.E0, tr.E1 = max(tr.E0, e0), max(tr.E1, e1)
        if data.t >= self.outer_start - 1e-12:
            tr.E0_outer, tr.E1_outer = max(tr.E0_outer, e0), max(tr.E1_outer, e1)
        tr.l1_rho = max(tr.l1_rho, float(np.sum(np.abs(data.density - lim_density)) * space.cell_area))
        gap = data.flow - lim_flow
        tr.l2_v = max(tr.l2_v, math.sqrt(float(np.sum(gap * gap)) * space.cell_area))
        jac = vector_grad(space, gap)
        tr.grad_gap.push(data.t, float(np.sum(jac * jac)) * space.cell_area)
        target = lim_density[None] * (lim_flow - spectral_grad(space, np.log(lim_density)))
        tr.flux_gap.push(data.t, float(np.sum(np.abs(data.momentum / eps - target))) * space.cell_area)
        if self.audit is not None:
            row = self.audit.update(data.t, audit_terms(grid, data, lim_density, lim_flow, eps))
            self._last_audit = row

    def on_record(self, data: StepData, record: ent.DiagnosticsRecord) -> None:
        grid, space = self.grid, self.grid.space
        lim_density, lim_flow = self.limit.density, self.limit.flow
        ref = correctors(grid, lim_density, lim_flow).f0
        record.l1_dist_f = ent.l1_distance(grid, data.dist, ref)
        record.l1_dist_rho = float(np.sum(np.abs(data.density - lim_density)) * space.cell_area)
        gap = data.flow - lim_flow
        record.l2_dist_v = math.sqrt(float(np.sum(gap * gap)) * space.cell_area)
        record.h1_dist_v = math.sqrt(ent.h1_norm_sq(space, gap[0]) + ent.h1_norm_sq(space, gap[1]))
        d_dens, _ = bl.bl_distance(bl.grid_measure(space, data.density), bl.grid_measure(space, lim_density), self.metric)
        record.bl_dist_rho = d_dens
        self.trackers.bl_rho = max(self.trackers.bl_rho, d_dens)
        if self.cfg.diagnostics.phase_bl:
            blocks = tuple(self.cfg.diagnostics.phase_bl_blocks)
            mu, metric = bl.coarse_phase_measure(grid, data.dist, blocks)
            nu, _ = bl.coarse_phase_measure(grid, ref, blocks)
            record.bl_dist_f = bl.bl_distance(mu, nu, metric)[0]
            self.trackers.bl_f_sq_samples.append([data.t, record.bl_dist_f**2])
        if self._last_audit is not None:
            self.audit_rows.append(self._last_audit)

    # -- persistence
    def state(self) -> dict:
        out = {"limit_step": self.limit_step, "limit_t": self.limit.t, "trackers": self.trackers.state()}
        if self.audit is not None:
            a = self.audit
            out["audit"] = {
                "initial": a.initial,
                "dissipation": a.dissipation.state(),
                "source": a.source.state(),
                "source_flipped": a.source_flipped.state(),
                "modulated_kinetic": a.modulated_kinetic.state(),
                "worst_slack": a.worst_slack,
                "max_modulated": a.max_modulated,
                "rows": [asdict(r) for r in self.audit_rows],
            }
        return out

    def restore(self, st: dict, density: np.ndarray, flow: np.ndarray) -> None:
        self.limit_step = int(st["limit_step"])
        self.limit = LimitState(density, FluidState(flow, pressure_field(self.grid.space, flow), st["limit_t"]), st["limit_t"])
        self.trackers = Trackers.from_state(st["trackers"])
        if self.audit is not None and "audit" in st:
            a = st["audit"]
            self.audit = ModulatedEnergyLedger(
                a["initial"],
                RunningIntegral.from_state(a["dissipation"]),
                RunningIntegral.from_state(a["source"]),
                RunningIntegral.from_state(a["source_flipped"]),
                RunningIntegral.from_state(a["modulated_kinetic"]),
                a["worst_slack"],
                a["max_modulated"],
            )
            self.audit_rows = [AuditRow(**r) for r in a["rows"]]


def _trapezoid(samples: list) -> float:
    if len(samples) < 2:
        return 0.0
    arr = np.asarray(samples, dtype=float)
    return float(np.sum(0.5 * (arr[1:, 1] + arr[:-1, 1]) * np.diff(arr[:, 0])))


@dataclass
class EpsResult:
    eps: float
    dt: float
    n_steps: int
    metrics: dict
    records: list
    audit_rows: list
    energy_excess: list
    clipped_mass: float
    final: CoupledState | None = None
    limit_final: LimitState | None = None


class EpsRun:
    """Coupled run at one eps with its limit comparison; resumable."""

    def __init__(self, cfg: RunConfig, eps: float):
        self.cfg, self.eps = cfg, eps
        self.grid = cfg.phase_grid()
        self.dt, self.n_steps, self.stride = dt_for(cfg, eps)
        self.plan = StepPlan(self.dt, transport_method=cfg.dt_policy.transport_method)
        dist0, fluid0, density0, flow0 = initial_state(cfg, self.grid, eps)
        self.dist0, self.fluid0 = dist0, fluid0
        self.observer = LimitComparison(cfg, self.grid, eps, self.dt, density0, flow0)
        self.state: CoupledState | None = None
        self.ledger: EnergyLedger | None = None
        self.records: list = []
        self.energy_excess: list = []

    def run(self, stop_step: int | None = None) -> "EpsRun":
        res = run_coupled(
            self.grid,
            self.dist0,
            self.fluid0,
            self.eps,
            self.cfg.T,
            self.plan,
            record_stride=self.stride,
            observers=[self.observer],
            energy_tol=self.cfg.energy_tol,
            start=self.state,
            ledger=self.ledger,
            stop_step=stop_step,
        )
        self.records.extend(res.records)
        self.energy_excess.extend(res.energy_excess)
        self.state, self.ledger = res.final, res.ledger
        return self

    @property
    def finished(self) -> bool:
        return self.state is not None and self.state.step >= self.n_steps

    def result(self) -> EpsResult:
        tr = self.observer.trackers
        audit = self.observer.audit
        metrics = {
            "E0": tr.E0,
            "E1": tr.E1,
            "E0_outer": tr.E0_outer,
            "E1_outer": tr.E1_outer,
            "sup_l1_f": tr.E0,
            "sup_l1_rho": tr.l1_rho,
            "sup_l2_v": tr.l2_v,
            "int_grad_v_sq": tr.grad_gap.value,
            "flux_l1": tr.flux_gap.value,
            "sup_bl_rho": tr.bl_rho,
            "int_bl_f_sq": _trapezoid(tr.bl_f_sq_samples),
            "energy_worst_excess": self.ledger.worst_excess if self.ledger else float("nan"),
        }
        if audit is not None:
            metrics["audit_worst_slack"] = audit.worst_slack
            metrics["audit_max_modulated"] = audit.max_modulated
            metrics["modulated_kinetic_integral"] = audit.modulated_kinetic.value
            metrics["audit_max_gap"] = max((r.lhs - r.rhs for r in self.observer.audit_rows), default=0.0)
            metrics["audit_flipped_max_gap"] = max((r.lhs - r.rhs_flipped for r in self.observer.audit_rows), default=0.0)
        return EpsResult(
            self.eps,
            self.dt,
            self.n_steps,
            metrics,
            list(self.records),
            list(self.observer.audit_rows),
            list(self.energy_excess),
            self.state.clipped_mass if self.state else 0.0,
            self.state,
            self.observer.limit,
        )

    # -- checkpointing
    def checkpoint(self, directory: str | Path) -> Path:
        st = self.state
        fields = {
            "dist": st.dist,
            "flow": st.flow,
            "limit_density": self.observer.limit.density,
            "limit_flow": self.observer.limit.flow,
        }
        meta = {
            "eps": self.eps,
            "t": st.t,
            "step": st.step,
            "clipped_mass": st.clipped_mass,
            "dt": self.dt,
            "config": self.cfg.to_dict(),
            "ledger": self.ledger.state(),
            "observer": self.observer.state(),
            "records": [r.as_row() for r in self.records],
            "energy_excess": list(self.energy_excess),
        }
        return write_checkpoint(directory, fields, self.grid.descriptor(), meta)

    @classmethod
    def resume(cls, cfg: RunConfig, directory: str | Path) -> "EpsRun":
        fields, meta = read_checkpoint(directory)
        run = cls(cfg, float(meta["eps"]))
        run.state = CoupledState(fields["dist"], fields["flow"], float(meta["t"]), run.eps, int(meta["step"]), float(meta["clipped_mass"]))
        run.ledger = EnergyLedger.from_state(meta["ledger"])
        run.observer.restore(meta["observer"], fields["limit_density"], fields["limit_flow"])
        run.records = [ent.DiagnosticsRecord(*row) for row in meta["records"]]
        run.energy_excess = list(meta["energy_excess"])
        return run
