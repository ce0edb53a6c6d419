"""Leading Hilbert-expansion correctors and expansion-error bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .entropy import l1_distance, standard_maxwellian
from .grid import PhaseGrid, spectral_grad


@dataclass
class CorrectorSet:
    f0: np.ndarray
    f1: np.ndarray
    density: np.ndarray
    flow: np.ndarray

    def marginal_defect(self, grid: PhaseGrid) -> float:
        """Largest ``|int f1 dxi|`` over the spatial cells."""
        return float(np.max(np.abs(np.sum(self.f1, axis=(2, 3)) * grid.velocity.cell_area)))


def corrector_f0(grid: PhaseGrid, density: np.ndarray) -> np.ndarray:
    if np.any(np.asarray(density) < 0):
        raise ValueError("density must be nonnegative")
    return np.asarray(density)[:, :, None, None] * standard_maxwellian(grid)[None, None]


def corrector_f1(grid: PhaseGrid, density: np.ndarray, flow: np.ndarray) -> np.ndarray:
    # coefficient field a(x) with f1 = (a . xi) M
    coef = np.asarray(density)[None] * np.asarray(flow) - spectral_grad(grid.space, density)
    c1, c2 = grid.velocity.mesh
    odd = coef[0][:, :, None, None] * c1[None, None] + coef[1][:, :, None, None] * c2[None, None]
    return odd * standard_maxwellian(grid)[None, None]


def correctors(grid: PhaseGrid, density: np.ndarray, flow: np.ndarray) -> CorrectorSet:
    return CorrectorSet(corrector_f0(grid, density), corrector_f1(grid, density, flow), density, flow)


@dataclass
class ExpansionErrors:
    """Running suprema of the expansion errors along one run."""

    eps: float
    E0: float = 0.0
    E1: float = 0.0
    D: float = 0.0
    times: list[float] = field(default_factory=list)
    E0_t: list[float] = field(default_factory=list)
    E1_t: list[float] = field(default_factory=list)

    def update(self, grid: PhaseGrid, t: float, dist: np.ndarray, density: np.ndarray, flow: np.ndarray) -> None:
        corr = correctors(grid, density, flow)
        e0 = l1_distance(grid, dist, corr.f0)
        e1 = l1_distance(grid, dist, corr.f0 + self.eps * corr.f1)
        self.times.append(t)
        self.E0_t.append(e0)
        self.E1_t.append(e1)
        self.E0 = max(self.E0, e0)
        self.E1 = max(self.E1, e1)

    def update_density_distance(self, value: float) -> None:
        self.D = max(self.D, value)


@dataclass
class ResidualTable:
    eps: list[float]
    E0: list[float]
    E1: list[float]
    D: list[float]
    fits: dict

    def rows(self) -> list[dict]:
        return [{"eps": e, "E0": a, "E1": b, "D": d} for e, a, b, d in zip(self.eps, self.E0, self.E1, self.D)]


def residual_orders(
    eps_list: Sequence[float],
    run_factory: Callable[[float], ExpansionErrors],
    floor: float = 0.0,
) -> ResidualTable:
    """Run one experiment per eps and fit the log-log slopes of E0, E1, D."""
    from .rates import fit_rate_with_floor

    if len(eps_list) < 3:
        raise ValueError("need at least three eps values")
    runs = [run_factory(e) for e in eps_list]
    table = ResidualTable(
        list(eps_list), [r.E0 for r in runs], [r.E1 for r in runs], [r.D for r in runs], {}
    )
    for name in ("E0", "E1", "D"):
        table.fits[name] = fit_rate_with_floor(list(zip(eps_list, getattr(table, name))), floor)
    return table
