"""Split-step solver for the scaled Vlasov-Fokker-Planck equation.

Free transport ``d_t f + xi . grad_x f / eps = 0`` is solved exactly in
spatial Fourier space. The velocity relaxation toward a Gaussian centred at
``eps * flow(x)`` is solved exactly with the Mehler formula of the
Ornstein-Uhlenbeck semigroup. With ``a = exp(-dt/eps^2)`` and centre ``c`` the
semigroup acts on the velocity Fourier transform as

    F(k) -> exp(-i k (1-a) c - (1-a^2) |k|^2 / 2) * F(a k).

The multiplier factors into a part independent of ``x`` (rescale plus heat
factor, one real ``n_v x n_v`` matrix per axis) and a pure shift by
``(1-a) c``, applied per spatial cell as a trigonometric interpolation shift.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .entropy import TruncationRiskError
from .grid import PhaseGrid, VelocityGrid

log = logging.getLogger(__name__)

CLIP_MASS_LIMIT = 1e-8


class PositivityError(RuntimeError):
    """Clipped negative mass exceeded the per-step limit."""


@dataclass(frozen=True)
class StepPlan:
    dt: float
    scheme: str = "strang"
    transport_method: str = "spectral_shift"
    cfl_fraction: float = 1.0

    def __post_init__(self) -> None:
        if self.scheme not in ("strang", "lie"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.transport_method not in ("spectral_shift", "semi_lagrangian"):
            raise ValueError(f"unknown transport method {self.transport_method!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def cfl_number(self, grid: PhaseGrid, eps: float) -> float:
        return self.dt * grid.velocity.v_max / (eps * grid.space.h)

    def cfl_ok(self, grid: PhaseGrid, eps: float) -> bool:
        return self.cfl_number(grid, eps) <= self.cfl_fraction + 1e-12


@dataclass
class KineticState:
    dist: np.ndarray
    t: float
    eps: float
    clipped_mass: float = 0.0
    steps: int = 0
    clip_log: list = field(default_factory=list)


# ------------------------------------------------------------------ transport


def _transport_factors(grid: PhaseGrid, tau: float):
    """Separable phase factors ``exp(-i k_j xi_j tau)`` on the rfft layout."""
    k = grid.space.wavenumbers.copy()
    k[grid.space.n_x // 2] = 0.0  # Nyquist mode is left in place
    k_half = k[: grid.space.n_x // 2 + 1]
    xi = grid.velocity.nodes
    ph1 = np.exp(-1j * tau * k[:, None] * xi[None, :])[:, None, :, None]
    ph2 = np.exp(-1j * tau * k_half[:, None] * xi[None, :])[None, :, None, :]
    return ph1, ph2


def transport_step(grid: PhaseGrid, dist: np.ndarray, dt: float, eps: float) -> np.ndarray:
    """Exact spectral solution of free transport over ``dt`` at speed ``xi/eps``."""
    ph1, ph2 = _transport_factors(grid, dt / eps)
    hat = np.fft.rfftn(dist, axes=(0, 1))
    hat *= ph1
    hat *= ph2
    return np.fft.irfftn(hat, s=dist.shape[:2], axes=(0, 1))


def _lagrange_shift(arr: np.ndarray, shift: np.ndarray, axis: int, vel_axis: int) -> np.ndarray:
    """Periodic cubic Lagrange interpolation of ``arr(x - shift)`` along ``axis``.

    ``shift`` is measured in cells and depends on the index along ``vel_axis``.
    """
    n = arr.shape[axis]
    base = np.floor(shift).astype(int)
    # x_i - shift lies at q + th with q = i - base - 1 and th in (0, 1]
    th = 1.0 - (shift - base)
    weights = (
        -th * (th - 1) * (th - 2) / 6,
        (th + 1) * (th - 1) * (th - 2) / 2,
        -(th + 1) * th * (th - 2) / 2,
        (th + 1) * th * (th - 1) / 6,
    )
    idx_shape = [1] * arr.ndim
    idx_shape[axis] = n
    idx_shape[vel_axis] = shift.size
    wshape = [1] * arr.ndim
    wshape[vel_axis] = shift.size
    out = np.zeros_like(arr)
    for offs, wgt in zip((-1, 0, 1, 2), weights):
        src = ((np.arange(n)[:, None] - base[None, :] - 1 + offs) % n).reshape(idx_shape)
        out += wgt.reshape(wshape) * np.take_along_axis(arr, src, axis=axis)
    return out


def transport_step_semi_lagrangian(grid: PhaseGrid, dist: np.ndarray, dt: float, eps: float) -> np.ndarray:
    """Semi-Lagrangian free transport with periodic cubic interpolation (dimension split)."""
    shift = grid.velocity.nodes * dt / (eps * grid.space.h)
    out = _lagrange_shift(dist, shift, axis=0, vel_axis=2)
    return _lagrange_shift(out, shift, axis=1, vel_axis=3)


# ------------------------------------------------------------------------ OU


@lru_cache(maxsize=64)
def _relax_matrix(n_v: int, v_max: float, decay: float) -> np.ndarray:
    """Real matrix of ``F(k) -> exp(-(1-a^2)k^2/2) F(a k)`` on one velocity axis."""
    vg = VelocityGrid(n_v, v_max)
    xi, h = vg.nodes, vg.h
    kap = vg.wavenumbers
    heat = np.exp(-0.5 * (1.0 - decay * decay) * kap * kap)
    arg = kap[:, None, None] * (xi[None, :, None] - decay * xi[None, None, :])
    mat = np.tensordot(heat, np.cos(arg), axes=(0, 0)) / n_v
    mat.setflags(write=False)
    return mat


def _velocity_shift(grid: PhaseGrid, dist: np.ndarray, s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """Shift each spatial cell's velocity profile by ``(s1, s2)`` via trigonometric interpolation."""
    nv = grid.velocity.n_v
    kap = grid.velocity.wavenumbers
    kap_half = np.abs(kap[: nv // 2 + 1])
    hat = np.fft.rfftn(dist, axes=(2, 3))
    ph1 = np.exp(-1j * kap[None, None, :] * s1[:, :, None])
    ph1[:, :, nv // 2] = np.cos(kap_half[-1] * s1)
    ph2 = np.exp(-1j * kap_half[None, None, :] * s2[:, :, None])
    ph2[:, :, -1] = np.cos(kap_half[-1] * s2)
    hat *= ph1[:, :, :, None]
    hat *= ph2[:, :, None, :]
    return np.fft.irfftn(hat, s=(nv, nv), axes=(2, 3))


def ou_step(grid: PhaseGrid, dist: np.ndarray, dt: float, eps: float, flow: np.ndarray) -> np.ndarray:
    """Exact velocity relaxation toward ``M_{rho_f, eps*flow}`` over ``dt``."""
    center = eps * np.asarray(flow)
    if np.max(np.hypot(center[0], center[1])) > grid.velocity.v_max / 2:
        raise TruncationRiskError("|eps * flow| exceeds v_max/2")
    decay = math.exp(-dt / (eps * eps))
    mat = _relax_matrix(grid.velocity.n_v, grid.velocity.v_max, decay)
    out = np.matmul(mat, dist)
    out = np.matmul(out, mat.T)
    if np.any(center):
        out = _velocity_shift(grid, out, (1.0 - decay) * center[0], (1.0 - decay) * center[1])
    return out


# --------------------------------------------------------------- full step


def clip_and_renormalize(grid: PhaseGrid, dist: np.ndarray, mass: float) -> tuple[np.ndarray, float]:
    """Zero negative cells, rescale to ``mass``; return the clipped mass."""
    neg = np.minimum(dist, 0.0)
    clipped = -float(np.sum(neg)) * grid.cell_volume
    if clipped > 0:
        dist = dist - neg
        dist *= mass / (float(np.sum(dist)) * grid.cell_volume)
    return dist, clipped


def _transport(grid: PhaseGrid, dist: np.ndarray, dt: float, eps: float, plan: StepPlan) -> np.ndarray:
    if plan.transport_method == "spectral_shift":
        return transport_step(grid, dist, dt, eps)
    return transport_step_semi_lagrangian(grid, dist, dt, eps)


def vfp_step(
    grid: PhaseGrid,
    state: KineticState,
    dt: float,
    flow: np.ndarray,
    plan: StepPlan,
    clip: bool = True,
) -> KineticState:
    """One split step: transport/relax/transport (Strang) or transport then relax (Lie)."""
    eps = state.eps
    mass = float(np.sum(state.dist)) * grid.cell_volume
    if plan.scheme == "strang":
        out = _transport(grid, state.dist, 0.5 * dt, eps, plan)
        out = ou_step(grid, out, dt, eps, flow)
        out = _transport(grid, out, 0.5 * dt, eps, plan)
    else:
        out = _transport(grid, state.dist, dt, eps, plan)
        out = ou_step(grid, out, dt, eps, flow)
    clipped = 0.0
    if clip:
        out, clipped = clip_and_renormalize(grid, out, mass)
        if clipped > CLIP_MASS_LIMIT:
            raise PositivityError(f"clipped mass {clipped:.3e} exceeds {CLIP_MASS_LIMIT:.0e}")
        if clipped > 0:
            log.debug("t=%.6g clipped mass %.3e", state.t + dt, clipped)
    return KineticState(out, state.t + dt, eps, state.clipped_mass + clipped, state.steps + 1, state.clip_log)
