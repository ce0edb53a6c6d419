"""Initial data for the rate experiments."""

from __future__ import annotations

import numpy as np

from ..entropy import maxwellian
from ..fluid import FluidState, leray_project, pressure_field, taylor_green
from ..grid import PhaseGrid, SpatialGrid, spectral_div


class InitialDataError(ValueError):
    pass


def _check(space: SpatialGrid, density: np.ndarray, flow: np.ndarray) -> None:
    if np.min(density) <= 0:
        raise InitialDataError("initial density must be strictly positive")
    if abs(space.integrate(density) - 1.0) > 1e-10:
        raise InitialDataError("initial density must have unit mass")
    if np.max(np.abs(spectral_div(space, flow))) > 1e-10:
        raise InitialDataError("initial velocity must be divergence free")


def init_well_prepared(grid: PhaseGrid, density: np.ndarray, flow: np.ndarray) -> tuple[np.ndarray, FluidState]:
    """Local Maxwellian at rest with the limit density; fluid starts at the limit velocity."""
    _check(grid.space, density, flow)
    dist = maxwellian(grid, density, np.zeros((2,) + density.shape))
    return dist, FluidState(np.array(flow, dtype=float), pressure_field(grid.space, flow), 0.0)


def init_scaled_well_prepared(
    grid: PhaseGrid, density: np.ndarray, flow: np.ndarray, perturbation: np.ndarray, eps: float
) -> tuple[np.ndarray, FluidState]:
    """Local Maxwellian drifting with an O(1) field ``perturbation`` (|w| <= 1).

    The density marginal is exactly ``density``; the relative entropy
    against the resting Maxwellian is ``int density |w|^2 / 2``, which the
    eps^2 weighting of the scaled regime makes small. ``eps`` is accepted for
    interface symmetry and does not enter the construction.
    """
    del eps
    _check(grid.space, density, flow)
    if np.max(np.hypot(perturbation[0], perturbation[1])) > 1 + 1e-12:
        raise InitialDataError("perturbation must satisfy |w| <= 1")
    dist = maxwellian(grid, density, perturbation)
    return dist, FluidState(np.array(flow, dtype=float), pressure_field(grid.space, flow), 0.0)


def reference_fields(space: SpatialGrid, density_amplitude: float, flow_amplitude: float):
    """Density proportional to ``1 + a cos(k x1)`` and a Taylor-Green velocity."""
    x1, _ = space.mesh
    k = 2 * np.pi / space.side
    density = 1.0 + density_amplitude * np.cos(k * x1)
    density = density / space.integrate(density)
    flow = leray_project(space, taylor_green(space, flow_amplitude))
    return density, flow


def reference_perturbation(space: SpatialGrid, amplitude: float) -> np.ndarray:
    x1, x2 = space.mesh
    k = 2 * np.pi / space.side
    return amplitude * np.stack([np.sin(k * x2), np.cos(k * x1)]) / np.sqrt(2.0)


def initial_state(cfg, grid: PhaseGrid, eps: float):
    """Build ``(dist0, fluid0, density0, flow0)`` from a run configuration."""
    ic = cfg.initial
    density, flow = reference_fields(grid.space, ic.density_amplitude, ic.flow_amplitude)
    if ic.recipe == "well_prepared":
        dist, fluid = init_well_prepared(grid, density, flow)
    else:
        w = reference_perturbation(grid.space, ic.perturbation_amplitude)
        dist, fluid = init_scaled_well_prepared(grid, density, flow, w, eps)
    return dist, fluid, density, flow
