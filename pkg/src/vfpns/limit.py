"""Limit system: advection-diffusion of the density driven by unforced Navier-Stokes.

Also provides the effective velocity ``eps (v - grad log rho)``, its material
residual, and a direct evolution of ``grad log rho``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fluid import FluidState, NumericalFailure, _phi1, _phi2, check_cfl, ns_step, pressure_field
from .grid import SpatialGrid, spectral_grad, vector_grad


class VacuumError(ValueError):
    pass


@dataclass
class LimitState:
    density: np.ndarray
    fluid: FluidState
    t: float = 0.0

    @property
    def flow(self) -> np.ndarray:
        return self.fluid.flow


def _etd2_scalar(space: SpatialGrid, field0: np.ndarray, dt: float, rhs0, rhs1) -> np.ndarray:
    """Exponential RK2 for ``d_t g = lap g + N(g, t)`` on a scalar or stacked field."""
    z = space.k_sq_full * dt
    decay = np.exp(-z)
    p1, p2 = _phi1(z) * dt, _phi2(z) * dt
    axes = (-2, -1)
    hat0 = np.fft.fft2(field0, axes=axes)
    n0 = np.fft.fft2(rhs0(field0), axes=axes)
    pred_hat = decay * hat0 + p1 * n0
    pred = np.fft.ifft2(pred_hat, axes=axes).real
    n1 = np.fft.fft2(rhs1(pred), axes=axes)
    return np.fft.ifft2(pred_hat + p2 * (n1 - n0), axes=axes).real


def _flux_divergence(space: SpatialGrid, density: np.ndarray, flow: np.ndarray) -> np.ndarray:
    k1, k2 = space.k_vec
    h1 = np.fft.fft2(density * flow[0])
    h2 = np.fft.fft2(density * flow[1])
    return np.fft.ifft2(1j * (k1 * h1 + k2 * h2)).real


def advdiff_step(
    space: SpatialGrid,
    density: np.ndarray,
    flow: np.ndarray,
    dt: float,
    flow_end: np.ndarray | None = None,
    diffusion: float = 1.0,
) -> np.ndarray:
    """One step of ``d_t rho + div(rho v) = diffusion * lap rho``.

    ``flow_end`` is the velocity at the end of the step (defaults to
    ``flow``); the corrector stage uses it so that time-dependent velocities
    are handled to second order. ``diffusion = 0`` gives pure transport.
    """
    check_cfl(space, flow, dt)
    end = flow if flow_end is None else flow_end
    if diffusion == 1.0:
        out = _etd2_scalar(
            space,
            density,
            dt,
            lambda g: -_flux_divergence(space, g, flow),
            lambda g: -_flux_divergence(space, g, end),
        )
    else:
        # Heun with exact diffusion factor of the given strength
        decay = np.exp(-diffusion * space.k_sq_full * dt)
        hat = np.fft.fft2(density)
        n0 = -np.fft.fft2(_flux_divergence(space, density, flow))
        pred_hat = decay * (hat + dt * n0)
        pred = np.fft.ifft2(pred_hat).real
        n1 = -np.fft.fft2(_flux_divergence(space, pred, end))
        out = np.fft.ifft2(decay * hat + 0.5 * dt * (decay * n0 + n1)).real
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite density")
    return out


def log_gradient(space: SpatialGrid, density: np.ndarray) -> np.ndarray:
    if np.min(density) <= 0:
        raise VacuumError("density must be positive to take its logarithm")
    return spectral_grad(space, np.log(density))


def effective_velocity(space: SpatialGrid, density: np.ndarray, flow: np.ndarray, eps: float) -> np.ndarray:
    """``eps * (flow - grad log density)``."""
    return eps * (flow - log_gradient(space, density))


def material_term(space: SpatialGrid, vec: np.ndarray) -> np.ndarray:
    """``(vec . grad) vec``, componentwise ``vec_j d_j vec_i``."""
    jac = vector_grad(space, vec)
    return np.einsum("jab,ijab->iab", vec, jac)


def limit_time_derivatives(space: SpatialGrid, density: np.ndarray, flow: np.ndarray):
    """Instantaneous ``(d_t rho, d_t v, d_t grad log rho)`` from the limit equations."""
    from .fluid import _project_hat, _rhs_hat, _ifft_vec

    k_sq = space.k_sq_full
    dflow = _ifft_vec(_rhs_hat(space, flow, None) - k_sq * _project_hat(space, np.fft.fft2(flow, axes=(1, 2))))
    lap = np.fft.ifft2(-k_sq * np.fft.fft2(density)).real
    ddens = lap - _flux_divergence(space, density, flow)
    dlog = ddens / density
    return ddens, dflow, spectral_grad(space, dlog)


def residual_from_rates(space: SpatialGrid, density: np.ndarray, flow: np.ndarray, eps: float) -> np.ndarray:
    """Material residual ``d_t u + (u . grad) u / eps`` with the time derivative taken from the equations."""
    _, dflow, dlog = limit_time_derivatives(space, density, flow)
    rel = flow - log_gradient(space, density)
    return eps * (dflow - dlog) + eps * material_term(space, rel)


@dataclass
class LimitTrajectory:
    times: list[float] = field(default_factory=list)
    densities: list[np.ndarray] = field(default_factory=list)
    flows: list[np.ndarray] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)

    def append(self, t: float, density: np.ndarray, flow: np.ndarray, diag: dict | None = None) -> None:
        self.times.append(t)
        self.densities.append(density.copy())
        self.flows.append(flow.copy())
        if diag is not None:
            self.diagnostics.append(diag)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        arr = np.asarray(self.times)
        idx = int(np.argmin(np.abs(arr - t)))
        if abs(arr[idx] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"time {t} not on the trajectory")
        return idx


class EndpointWarning(UserWarning):
    pass


def residual_e_eps(space: SpatialGrid, traj: LimitTrajectory, eps: float, t: float) -> tuple[np.ndarray, bool]:
    """Residual of the effective velocity at a stored time, by centred differences.

    Returns ``(field, one_sided)``; at trajectory endpoints a one-sided second
    order difference is used and ``one_sided`` is True.
    """
    idx = traj.index_of(t)
    n = len(traj.times)
    if n < 3:
        raise ValueError("need at least three stored times")

    def vel(i: int) -> np.ndarray:
        return effective_velocity(space, traj.densities[i], traj.flows[i], eps)

    one_sided = idx == 0 or idx == n - 1
    if idx == 0:
        t0, t1, t2 = traj.times[0:3]
        dt = t1 - t0
        dudt = (-3 * vel(0) + 4 * vel(1) - vel(2)) / (2 * dt)
    elif idx == n - 1:
        dt = traj.times[-1] - traj.times[-2]
        dudt = (3 * vel(n - 1) - 4 * vel(n - 2) + vel(n - 3)) / (2 * dt)
    else:
        dudt = (vel(idx + 1) - vel(idx - 1)) / (traj.times[idx + 1] - traj.times[idx - 1])
    here = vel(idx)
    return dudt + material_term(space, here) / eps, one_sided


def _loggrad_rhs(space: SpatialGrid, vec: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """``-grad(vec . flow) + grad |vec|^2`` for the log-gradient equation."""
    scal = -(vec[0] * flow[0] + vec[1] * flow[1]) + (vec[0] ** 2 + vec[1] ** 2)
    return spectral_grad(space, scal)


def loggrad_step(space: SpatialGrid, vec: np.ndarray, flow: np.ndarray, dt: float, flow_end: np.ndarray | None = None):
    end = flow if flow_end is None else flow_end
    return _etd2_scalar(
        space, vec, dt, lambda g: _loggrad_rhs(space, g, flow), lambda g: _loggrad_rhs(space, g, end)
    )


def loggrad_evolve(
    space: SpatialGrid, vec0: np.ndarray, flows: list[np.ndarray], dt: float, T: float
) -> list[np.ndarray]:
    """Evolve ``grad log rho`` directly; ``flows[n]`` is the velocity at ``n dt``."""
    n_steps = int(round(T / dt))
    if len(flows) < n_steps + 1:
        raise ValueError("velocity trajectory shorter than the requested horizon")
    out = [np.array(vec0, dtype=float)]
    for n in range(n_steps):
        check_cfl(space, flows[n], dt)
        out.append(loggrad_step(space, out[-1], flows[n], dt, flows[n + 1]))
    return out


class LimitStepper:
    """Co-evolves (density, velocity) with ``substeps`` steps per call."""

    def __init__(self, space: SpatialGrid, dt: float, substeps: int = 1):
        self.space = space
        self.dt = dt
        self.substeps = substeps

    def step(self, state: LimitState) -> LimitState:
        h = self.dt / self.substeps
        dens, fluid = state.density, state.fluid
        for _ in range(self.substeps):
            new_fluid = ns_step(self.space, fluid, h)
            dens = advdiff_step(self.space, dens, fluid.flow, h, new_fluid.flow)
            fluid = new_fluid
        return LimitState(dens, fluid, state.t + self.dt)


def limit_diagnostics(space: SpatialGrid, state: LimitState) -> dict:
    loggrad = log_gradient(space, state.density)
    jac = vector_grad(space, loggrad)
    return {
        "t": state.t,
        "mass": space.integrate(state.density),
        "min_rho": float(np.min(state.density)),
        "max_rho": float(np.max(state.density)),
        "sup_grad_loggrad": float(np.max(np.abs(jac))),
    }


def run_limit(
    space: SpatialGrid,
    density0: np.ndarray,
    flow0: np.ndarray,
    T: float,
    dt: float,
    record_stride: int = 1,
) -> LimitTrajectory:
    """Integrate the limit system, storing fields every ``record_stride`` steps."""
    if np.min(density0) <= 0:
        raise VacuumError("initial density must be positive")
    n_steps = int(round(T / dt))
    state = LimitState(np.array(density0, dtype=float), FluidState(np.array(flow0, dtype=float), pressure_field(space, flow0), 0.0))
    stepper = LimitStepper(space, dt)
    traj = LimitTrajectory()
    traj.append(0.0, state.density, state.flow, limit_diagnostics(space, state))
    for n in range(1, n_steps + 1):
        state = stepper.step(state)
        if n % record_stride == 0 or n == n_steps:
            traj.append(state.t, state.density, state.flow, limit_diagnostics(space, state))
    return traj
