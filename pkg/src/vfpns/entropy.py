"""Maxwellians, relative entropy, free energy, dissipation and related functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .grid import PhaseGrid, SpatialGrid, bulk_velocity, moment_density, spectral_grad

CELL_FLOOR = 1e-30
LOG_2PI = math.log(2.0 * math.pi)


class TruncationRiskError(ValueError):
    """Bulk velocity too close to the velocity-box boundary."""


class SupportError(ValueError):
    """Positive density where the reference measure vanishes."""


class MassMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MaxwellianParams:
    density: np.ndarray
    drift: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.density < 0):
            raise ValueError("Maxwellian density must be nonnegative")


def _drift_field(drift, shape: tuple[int, int]) -> np.ndarray:
    drift = np.asarray(drift, dtype=float)
    if drift.ndim == 1:
        drift = drift[:, None, None] * np.ones(shape)
    return drift


def maxwellian(grid: PhaseGrid, density, drift=(0.0, 0.0)) -> np.ndarray:
    """Sample ``density / (2 pi) * exp(-|drift - xi|^2 / 2)`` on the phase grid."""
    nx = grid.space.n_x
    density = np.broadcast_to(np.asarray(density, dtype=float), (nx, nx))
    drift = _drift_field(drift, (nx, nx))
    if np.max(np.hypot(drift[0], drift[1])) > grid.velocity.v_max / 2:
        raise TruncationRiskError("|drift| exceeds v_max/2")
    c1, c2 = grid.velocity.mesh
    d1 = c1[None, None] - drift[0][:, :, None, None]
    d2 = c2[None, None] - drift[1][:, :, None, None]
    return density[:, :, None, None] / (2 * math.pi) * np.exp(-0.5 * (d1 * d1 + d2 * d2))


def standard_maxwellian(grid: PhaseGrid) -> np.ndarray:
    """``exp(-|xi|^2/2) / (2 pi)`` on the velocity grid, shape ``(n_v, n_v)``."""
    return np.exp(-0.5 * grid.velocity.speed_sq) / (2 * math.pi)


def _log_maxwellian(grid: PhaseGrid, density: np.ndarray, drift: np.ndarray) -> np.ndarray:
    c1, c2 = grid.velocity.mesh
    d1 = c1[None, None] - drift[0][:, :, None, None]
    d2 = c2[None, None] - drift[1][:, :, None, None]
    with np.errstate(divide="ignore"):
        lr = np.log(density)
    return (lr - LOG_2PI)[:, :, None, None] - 0.5 * (d1 * d1 + d2 * d2)


def _xlogy_ratio(dist: np.ndarray, log_ref: np.ndarray) -> np.ndarray:
    """Cellwise ``dist * (log dist - log_ref)`` with value 0 where ``dist`` is below the floor."""
    out = np.zeros_like(dist)
    pos = dist > CELL_FLOOR
    out[pos] = dist[pos] * (np.log(dist[pos]) - log_ref[pos])
    return out


def relative_entropy(grid: PhaseGrid, dist: np.ndarray, ref: np.ndarray) -> float:
    """Bregman relative entropy ``sum f log(f/M) - (f - M)`` by midpoint quadrature."""
    pos = dist > CELL_FLOOR
    if np.any(pos & (ref <= 0)):
        raise SupportError("dist > 0 where reference vanishes")
    integrand = np.array(ref, dtype=float, copy=True)
    fp, rp = dist[pos], ref[pos]
    integrand[pos] = fp * np.log(fp / rp) - fp + rp
    return float(np.sum(integrand) * grid.cell_volume)


def relative_entropy_maxwellian(grid: PhaseGrid, dist: np.ndarray, density, drift) -> float:
    """Relative entropy against ``M_{density, drift}`` using the analytic log of the reference."""
    nx = grid.space.n_x
    density = np.broadcast_to(np.asarray(density, dtype=float), (nx, nx))
    drift = _drift_field(drift, (nx, nx))
    logm = _log_maxwellian(grid, density, drift)
    ref = np.exp(logm)
    val = np.sum(_xlogy_ratio(dist, logm)) - np.sum(dist) + np.sum(ref)
    return float(val * grid.cell_volume)


def entropy_decomposition(grid: PhaseGrid, dist: np.ndarray, density, drift) -> tuple[float, float, float]:
    """Split ``sum f log(f / M_{density, drift})`` into kinetic, density and momentum parts.

    The kinetic part is measured against the Maxwellian built from the
    moments of ``dist`` itself.
    """
    nx = grid.space.n_x
    density = np.broadcast_to(np.asarray(density, dtype=float), (nx, nx))
    drift = _drift_field(drift, (nx, nx))
    own_dens = moment_density(grid, dist)
    own_bulk = bulk_velocity(grid, dist).field
    if np.any((own_dens > CELL_FLOOR) & (density <= 0)):
        raise SupportError("target density vanishes where dist has mass")
    kinetic = np.sum(_xlogy_ratio(dist, _log_maxwellian(grid, own_dens, own_bulk))) * grid.cell_volume
    dens_part = np.zeros_like(own_dens)
    pos = own_dens > CELL_FLOOR
    dens_part[pos] = own_dens[pos] * np.log(own_dens[pos] / density[pos])
    gap = own_bulk - drift
    mom_part = 0.5 * own_dens * (gap[0] ** 2 + gap[1] ** 2)
    area = grid.space.cell_area
    return float(kinetic), float(np.sum(dens_part) * area), float(np.sum(mom_part) * area)


def free_energy(grid: PhaseGrid, dist: np.ndarray, flow: np.ndarray) -> float:
    """Kinetic entropy plus particle and fluid kinetic energy."""
    flog = np.zeros_like(dist)
    pos = dist > CELL_FLOOR
    flog[pos] = dist[pos] * np.log(dist[pos])
    kin = np.sum(flog + 0.5 * grid.velocity.speed_sq[None, None] * dist) * grid.cell_volume
    fluid = 0.5 * np.sum(flow * flow) * grid.space.cell_area
    return float(kin + fluid)


def velocity_gradient(grid: PhaseGrid, dist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Periodic spectral derivatives of ``dist`` along both velocity axes."""
    dmat = grid.velocity.diff_matrix
    return np.matmul(dmat, dist), np.matmul(dist, dmat.T)


def _local_maxwellian_factors(grid: PhaseGrid, dens: np.ndarray, bulk: np.ndarray):
    """Separable samples of ``M_{dens, bulk}``: amplitude and one Gaussian per axis."""
    nodes = grid.velocity.nodes
    g1 = np.exp(-0.5 * (nodes[None, None, :] - bulk[0][:, :, None]) ** 2)
    g2 = np.exp(-0.5 * (nodes[None, None, :] - bulk[1][:, :, None]) ** 2)
    return np.maximum(dens, 0.0) / (2 * math.pi), g1, g2


def _relaxation_flux(grid: PhaseGrid, dist: np.ndarray):
    """Flux ``grad_xi f + (xi - u_f) f`` about the own bulk velocity.

    The local Maxwellian with the moments of ``dist`` is differentiated
    analytically and only the remainder goes through the spectral
    derivative. This keeps the box truncation jump of a drifted Gaussian out
    of the periodic transform, whose Gibbs ripple would otherwise dominate the
    ratio ``|flux|^2 / f`` in the far tails.
    """
    dens = moment_density(grid, dist)
    bulk = bulk_velocity(grid, dist).field
    amp, g1, g2 = _local_maxwellian_factors(grid, dens, bulk)
    local = (amp[:, :, None] * g1)[:, :, :, None] * g2[:, :, None, :]
    resid = dist - local
    dr1, dr2 = velocity_gradient(grid, resid)
    nodes = grid.velocity.nodes
    # the sampled Gaussian is centred on its own discrete mean so that the
    # flux has zero velocity sum exactly, which makes the split identity exact
    mean1 = (g1 @ nodes) / np.sum(g1, axis=-1)
    mean2 = (g2 @ nodes) / np.sum(g2, axis=-1)
    off1 = (mean1 - bulk[0])[:, :, None, None]
    off2 = (mean2 - bulk[1])[:, :, None, None]
    r1 = nodes[None, None, :, None] - bulk[0][:, :, None, None]
    r2 = nodes[None, None, None, :] - bulk[1][:, :, None, None]
    j1 = dr1 + r1 * resid + off1 * local
    j2 = dr2 + r2 * resid + off2 * local
    return j1, j2, dens, bulk


def _split_sums(grid: PhaseGrid, dist: np.ndarray, j1: np.ndarray, j2: np.ndarray):
    """``sum |j|^2 / f`` and per-cell velocity sums of ``j`` and ``f``, over cells above the floor."""
    pos = dist > CELL_FLOOR
    inv = np.zeros_like(dist)
    np.divide(1.0, dist, out=inv, where=pos)
    quad = float(np.sum((j1 * j1 + j2 * j2) * inv))
    s1 = np.sum(np.where(pos, j1, 0.0), axis=(2, 3))
    s2 = np.sum(np.where(pos, j2, 0.0), axis=(2, 3))
    mass = np.sum(np.where(pos, dist, 0.0), axis=(2, 3))
    return quad, s1, s2, mass


def _shifted_square(grid: PhaseGrid, quad, s1, s2, mass, gap) -> float:
    """``sum |j + gap f|^2 / f`` expanded around the unshifted sum."""
    cross = 2.0 * np.sum(gap[0] * s1 + gap[1] * s2)
    sq = np.sum((gap[0] ** 2 + gap[1] ** 2) * mass)
    return float((quad + cross + sq) * grid.cell_volume)


def dissipation_split(grid: PhaseGrid, dist: np.ndarray, flow: np.ndarray, eps: float) -> tuple[float, float, float]:
    """Return ``(d_total, d_kinetic, d_alignment)`` without the ``1/eps^2`` prefactor."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    j1, j2, dens, bulk = _relaxation_flux(grid, dist)
    quad, s1, s2, mass = _split_sums(grid, dist, j1, j2)
    gap = bulk - eps * np.asarray(flow)
    d_kin = float(quad * grid.cell_volume)
    d_total = _shifted_square(grid, quad, s1, s2, mass, gap)
    d_align = float(np.sum(dens * (gap[0] ** 2 + gap[1] ** 2)) * grid.space.cell_area)
    return d_total, d_kin, d_align


def kinetic_dissipation_about(grid: PhaseGrid, dist: np.ndarray, center: np.ndarray) -> float:
    """Flux functional ``sum |grad_xi f + (xi - center) f|^2 / f`` for an arbitrary center field."""
    j1, j2, _, bulk = _relaxation_flux(grid, dist)
    quad, s1, s2, mass = _split_sums(grid, dist, j1, j2)
    return _shifted_square(grid, quad, s1, s2, mass, bulk - center)


def second_moment(grid: PhaseGrid, dist: np.ndarray) -> float:
    """``sum |xi|^2 f`` over phase space."""
    return float(np.sum(np.sum(dist, axis=(0, 1)) * grid.velocity.speed_sq) * grid.cell_volume)


def l1_distance(grid: PhaseGrid, dist_a: np.ndarray, dist_b: np.ndarray) -> float:
    return float(np.sum(np.abs(dist_a - dist_b)) * grid.cell_volume)


def ckp_check(grid: PhaseGrid, dist: np.ndarray, ref: np.ndarray, mass_tol: float = 1e-6) -> tuple[float, float, bool]:
    """Compare ``||f - M||_1^2`` with twice the relative entropy."""
    ma, mb = np.sum(dist) * grid.cell_volume, np.sum(ref) * grid.cell_volume
    if abs(ma - mb) > mass_tol:
        raise MassMismatchError(f"masses differ: {ma} vs {mb}")
    lhs = l1_distance(grid, dist, ref) ** 2
    rhs = 2.0 * relative_entropy(grid, dist, ref)
    return lhs, rhs, bool(lhs <= rhs + 1e-8)


def llogl_entropy(space: SpatialGrid, density: np.ndarray) -> float:
    out = np.zeros_like(density, dtype=float)
    pos = density > 0
    out[pos] = density[pos] * np.abs(np.log(density[pos]))
    return float(np.sum(out) * space.cell_area)


def h1_norm_sq(space: SpatialGrid, field: np.ndarray) -> float:
    grad = spectral_grad(space, field)
    return float((np.sum(field * field) + np.sum(grad * grad)) * space.cell_area)


def tm_ratio(space: SpatialGrid, weight_density: np.ndarray, test_field: np.ndarray) -> float:
    """Ratio ``sum p |g|^2 / ((1 + sum p |log p|) ||g||_{H^1}^2)`` for a probability density ``p``."""
    nrm = h1_norm_sq(space, test_field)
    if nrm <= 0:
        raise ZeroDivisionError("test field has zero H1 norm")
    num = float(np.sum(weight_density * test_field * test_field) * space.cell_area)
    return num / ((1.0 + llogl_entropy(space, weight_density)) * nrm)


@dataclass
class DiagnosticsRecord:
    """All scalar functionals recorded at one time level."""

    t: float = 0.0
    entropy_H: float = 0.0
    free_energy_F: float = 0.0
    diss_kinetic: float = 0.0
    diss_alignment: float = 0.0
    diss_total: float = 0.0
    l1_dist_f: float = 0.0
    l1_dist_rho: float = 0.0
    l2_dist_v: float = 0.0
    h1_dist_v: float = 0.0
    bl_dist_rho: float = 0.0
    bl_dist_f: float = 0.0
    moment2: float = 0.0
    llogl_rho: float = 0.0
    scaled_momentum_l1: float = 0.0

    @classmethod
    def columns(cls) -> list[str]:
        return [fl.name for fl in fields(cls)]

    def as_row(self) -> list[float]:
        return [float(getattr(self, name)) for name in self.columns()]
