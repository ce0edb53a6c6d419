"""Modulated-energy balance between a coupled run and the limit system.

With ``U = eps (v - grad log rho)`` built from the limit fields and
``w = v_eps - v``, the modulated energy is

    E(t) = H[f | M_{rho, U}] + |w|^2 / 2

and along smooth solutions

    E(t) + int_0^t (d_kin/eps^2 + align/eps^2 + |grad w|^2)
        = E(0) + int_0^t (I + II + III + IV),

    align = int rho_f |(U - u_f) - eps (v - v_eps)|^2,
    I     = -(1/eps) int (int f (U - xi)(U - xi) dxi - rho_f Id) : grad U,
    II    = -int (w . grad v) . w,
    III   = -int (rho_f - rho) w . grad log rho,
    IV    = int rho_f (U - u_f) . e,   e = d_t U + (U . grad U) / eps.

The audit integrates both sides in time and reports their gap. Variants
with the opposite sign on II and III are tracked alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import entropy as ent
from ..coupled import RunningIntegral, StepData
from ..grid import PhaseGrid, vector_grad
from ..limit import effective_velocity, log_gradient, residual_from_rates


@dataclass
class AuditTerms:
    modulated: float
    entropy_part: float
    fluid_part: float
    diss_kinetic: float
    diss_alignment: float
    diss_fluid: float
    term_I: float
    term_II: float
    term_III: float
    term_IV: float
    modulated_kinetic: float

    @property
    def dissipation(self) -> float:
        return self.diss_kinetic + self.diss_alignment + self.diss_fluid

    @property
    def source(self) -> float:
        return self.term_I + self.term_II + self.term_III + self.term_IV

    @property
    def source_flipped(self) -> float:
        return self.term_I - self.term_II - self.term_III + self.term_IV


def _contract(tensor: np.ndarray, jac: np.ndarray) -> np.ndarray:
    """``A : grad U = sum_ij A_ij d_j U_i`` cellwise."""
    return np.einsum("ijab,ijab->ab", tensor, jac)


def stress_tensor(grid: PhaseGrid, dist: np.ndarray) -> np.ndarray:
    """Second velocity moment ``int xi xi^T f dxi`` as a ``(2, 2, n, n)`` array."""
    nodes = grid.velocity.nodes
    hv2 = grid.velocity.cell_area
    s11 = np.einsum("abij,i->ab", dist, nodes * nodes) * hv2
    s22 = np.einsum("abij,j->ab", dist, nodes * nodes) * hv2
    s12 = np.einsum("abij,i,j->ab", dist, nodes, nodes) * hv2
    return np.array([[s11, s12], [s12, s22]])


def audit_terms(grid: PhaseGrid, data: StepData, density: np.ndarray, flow: np.ndarray, eps: float) -> AuditTerms:
    space = grid.space
    area = space.cell_area
    eff = effective_velocity(space, density, flow, eps)
    gap = data.flow - flow
    dens_eps, mom = data.density, data.momentum
    bulk = mom / np.maximum(dens_eps, 1e-300)

    entropy_part = ent.relative_entropy_maxwellian(grid, data.dist, density, eff)
    fluid_part = 0.5 * float(np.sum(gap * gap)) * area

    shift = (eff - bulk) + eps * gap
    align = float(np.sum(dens_eps * np.sum(shift * shift, axis=0))) * area
    jac_gap = vector_grad(space, gap)
    diss_fluid = float(np.sum(jac_gap * jac_gap)) * area

    jac_eff = vector_grad(space, eff)
    outer = lambda a, b: a[:, None] * b[None, :]
    tensor = dens_eps * outer(eff, eff) - outer(eff, mom) - outer(mom, eff) + stress_tensor(grid, data.dist)
    tensor[0, 0] -= dens_eps
    tensor[1, 1] -= dens_eps
    term_I = -float(np.sum(_contract(tensor, jac_eff))) * area / eps

    jac_v = vector_grad(space, flow)
    term_II = -float(np.sum(_contract(outer(gap, gap), jac_v))) * area
    lg = log_gradient(space, density)
    term_III = -float(np.sum((dens_eps - density) * np.sum(gap * lg, axis=0))) * area
    resid = residual_from_rates(space, density, flow, eps)
    term_IV = float(np.sum(dens_eps * np.sum((eff - bulk) * resid, axis=0))) * area

    slip = bulk - eff
    mod_kin = float(np.sum(dens_eps * np.sum(slip * slip, axis=0))) * area / eps**2
    return AuditTerms(
        modulated=entropy_part + fluid_part,
        entropy_part=entropy_part,
        fluid_part=fluid_part,
        diss_kinetic=data.d_kinetic / eps**2,
        diss_alignment=align / eps**2,
        diss_fluid=diss_fluid,
        term_I=term_I,
        term_II=term_II,
        term_III=term_III,
        term_IV=term_IV,
        modulated_kinetic=mod_kin,
    )


@dataclass
class AuditRow:
    t: float
    lhs: float
    rhs: float
    slack: float
    rhs_flipped: float
    modulated: float
    modulated_kinetic_integral: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 1e-4 * (1.0 + abs(self.rhs))


@dataclass
class ModulatedEnergyLedger:
    """Accumulates both sides of the balance in time."""

    initial: float | None = None
    dissipation: RunningIntegral = field(default_factory=RunningIntegral)
    source: RunningIntegral = field(default_factory=RunningIntegral)
    source_flipped: RunningIntegral = field(default_factory=RunningIntegral)
    modulated_kinetic: RunningIntegral = field(default_factory=RunningIntegral)
    worst_slack: float = math.inf
    max_modulated: float = 0.0

    def update(self, t: float, terms: AuditTerms) -> AuditRow:
        if self.initial is None:
            self.initial = terms.modulated
        diss = self.dissipation.push(t, terms.dissipation)
        src = self.source.push(t, terms.source)
        flip = self.source_flipped.push(t, terms.source_flipped)
        mk = self.modulated_kinetic.push(t, terms.modulated_kinetic)
        lhs = terms.modulated + diss
        rhs = self.initial + src
        row = AuditRow(t, lhs, rhs, rhs + 1e-4 * (1.0 + abs(rhs)) - lhs, self.initial + flip, terms.modulated, mk)
        self.worst_slack = min(self.worst_slack, row.slack)
        self.max_modulated = max(self.max_modulated, terms.modulated)
        return row
