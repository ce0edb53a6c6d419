"""Bounded-Lipschitz distance between discrete measures.

The distance is the value of the linear program

    maximize   sum_i phi_i (mu_i - nu_i)
    subject to |phi_i| <= c,  |phi_i - phi_j| <= lip * d_ij,  c + lip <= 1.

``bl_distance`` imposes the Lipschitz rows only on the edges of a sparse
graph whose shortest paths reproduce the metric (axis neighbours on grids,
triangle-pruned pairs for explicit metrics). ``bl_oracle`` imposes them on
every pair and is limited to small instances.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

ORACLE_NODE_LIMIT = 256
FEAS_TOL = 1e-8


class MeasureError(ValueError):
    pass


class OracleSizeError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


# ------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class GridMetric:
    """L1 graph metric on a product grid, periodic along selected axes.

    Shortest paths along axis-neighbour edges reproduce the metric, so only
    those edges are needed as constraints.
    """

    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self) -> None:
        if not (len(self.shape) == len(self.spacing) == len(self.periodic)):
            raise ValueError("shape, spacing and periodic must have equal length")

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coordinates(self) -> np.ndarray:
        """Integer multi-index of every node, row-major."""
        grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = np.arange(self.size).reshape(self.shape)
        heads, tails, lengths = [], [], []
        for ax, (n, h, per) in enumerate(zip(self.shape, self.spacing, self.periodic)):
            if n < 2:
                continue
            if per:
                nbr = np.roll(idx, -1, axis=ax)
                src = idx
                if n == 2:
                    # the wrap edge duplicates the interior edge
                    src = np.take(idx, [0], axis=ax)
                    nbr = np.take(idx, [1], axis=ax)
            else:
                src = np.take(idx, np.arange(n - 1), axis=ax)
                nbr = np.take(idx, np.arange(1, n), axis=ax)
            heads.append(src.ravel())
            tails.append(nbr.ravel())
            lengths.append(np.full(src.size, h))
        return np.concatenate(heads), np.concatenate(tails), np.concatenate(lengths)

    def pairwise(self) -> np.ndarray:
        coords = self.coordinates()
        out = np.zeros((self.size, self.size))
        for ax, (n, h, per) in enumerate(zip(self.shape, self.spacing, self.periodic)):
            diff = np.abs(coords[:, None, ax] - coords[None, :, ax])
            if per:
                diff = np.minimum(diff, n - diff)
            out += diff * h
        return out


@dataclass(frozen=True)
class ExplicitMetric:
    """Dense symmetric distance matrix; the constraint graph keeps only pairs
    not implied by the triangle inequality through a third node."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("distances must be finite and nonnegative")
        if np.max(np.abs(m - m.T)) > 1e-12 * max(1.0, float(np.max(m))):
            raise ValueError("distance matrix must be symmetric")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_points(cls, points: np.ndarray, p: float = 2.0) -> "ExplicitMetric":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        diff = np.abs(pts[:, None, :] - pts[None, :, :])
        return cls(np.sum(diff**p, axis=-1) ** (1.0 / p))

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d = np.asarray(self.matrix, dtype=float)
        n = d.shape[0]
        heads, tails, lengths = [], [], []
        for i in range(n - 1):
            js = np.arange(i + 1, n)
            # (i, j) is implied if some k != i, j has d_ik + d_kj <= d_ij
            via = d[i][:, None] + d[:, js]
            via[i, :] = np.inf
            via[js, np.arange(js.size)] = np.inf
            keep = np.min(via, axis=0) > d[i, js]
            heads.append(np.full(int(keep.sum()), i))
            tails.append(js[keep])
            lengths.append(d[i, js[keep]])
        if not heads:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        return np.concatenate(heads), np.concatenate(tails), np.concatenate(lengths)

    def pairwise(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)


Metric = GridMetric | ExplicitMetric


def torus_metric(n_x: int, side: float) -> GridMetric:
    h = side / n_x
    return GridMetric((n_x, n_x), (h, h), (True, True))


def phase_metric(n_x: int, side: float, n_v: int, v_max: float) -> GridMetric:
    """Additive product of the torus L1 metric and the L1 velocity metric."""
    hx, hv = side / n_x, 2 * v_max / n_v
    return GridMetric((n_x, n_x, n_v, n_v), (hx, hx, hv, hv), (True, True, False, False))


# ------------------------------------------------------------------ measures


@dataclass
class DiscreteMeasure:
    """Point masses on the nodes of a metric (node order = metric order)."""

    weights: np.ndarray
    nodes: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size == 0:
            raise MeasureError("empty measure")
        if not np.all(np.isfinite(self.weights)):
            raise MeasureError("non-finite weights")

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))

    def is_probability(self, tol: float = 1e-8) -> bool:
        return bool(np.all(self.weights >= 0) and abs(self.total - 1.0) <= tol)


def grid_measure(space, density: np.ndarray) -> DiscreteMeasure:
    """Cell masses ``density * h^2`` of a scalar field on a spatial grid."""
    x1, x2 = space.mesh
    nodes = np.stack([x1.ravel(), x2.ravel()], axis=1)
    return DiscreteMeasure(np.asarray(density).ravel() * space.cell_area, nodes)


def coarse_phase_measure(grid, dist: np.ndarray, blocks: tuple[int, int]) -> tuple[DiscreteMeasure, GridMetric]:
    """Aggregate a phase density into blocks of ``(bx, bv)`` cells per axis.

    Each block's mass sits at the block centre; the metric is the product
    L1 metric on the coarse grid.
    """
    bx, bv = blocks
    nx, nv = grid.space.n_x, grid.velocity.n_v
    if nx % bx or nv % bv:
        raise ValueError("block sizes must divide the grid sizes")
    cx, cv = nx // bx, nv // bv
    mass = dist.reshape(cx, bx, cx, bx, cv, bv, cv, bv).sum(axis=(1, 3, 5, 7)) * grid.cell_volume
    metric = GridMetric(
        (cx, cx, cv, cv),
        (bx * grid.space.h, bx * grid.space.h, bv * grid.velocity.h, bv * grid.velocity.h),
        (True, True, False, False),
    )
    return DiscreteMeasure(mass.ravel()), metric


# ---------------------------------------------------------------- solutions


@dataclass
class LipschitzDualSolution:
    phi: np.ndarray
    sup_norm_used: float
    lip_const_used: float
    objective: float
    status: str = "optimal"

    def to_json(self) -> dict:
        out = asdict(self)
        out["phi"] = [float(p) for p in self.phi]
        return out


def _check_pair(mu: DiscreteMeasure, nu: DiscreteMeasure, metric: Metric) -> np.ndarray:
    if mu.weights.size != nu.weights.size:
        raise MeasureError("measures must live on the same node set")
    if mu.weights.size != metric.size:
        raise MeasureError("metric size does not match the measures")
    return mu.weights - nu.weights


def _lipschitz_rows(n: int, heads, tails, lengths) -> sparse.csr_matrix:
    """Rows ``+-(phi_i - phi_j) - d_ij * lip <= 0`` in variables (phi, c, lip)."""
    m = heads.size
    rows = np.repeat(np.arange(2 * m), 3)
    r_head = np.concatenate([heads, tails])
    r_tail = np.concatenate([tails, heads])
    cols = np.stack([r_head, r_tail, np.full(2 * m, n + 1)], axis=1).ravel()
    vals = np.stack([np.ones(2 * m), -np.ones(2 * m), -np.concatenate([lengths, lengths])], axis=1).ravel()
    return sparse.csr_matrix((vals, (rows, cols)), shape=(2 * m, n + 2))


def _solve_lp(diff: np.ndarray, heads, tails, lengths, method: str) -> np.ndarray:
    n = diff.size
    eye = sparse.identity(n, format="csr")
    cap = sparse.csr_matrix(np.full((n, 1), -1.0))
    zero = sparse.csr_matrix((n, 1))
    bound_rows = sparse.vstack([sparse.hstack([eye, cap, zero]), sparse.hstack([-eye, cap, zero])])
    budget = sparse.csr_matrix(np.concatenate([np.zeros(n), [1.0, 1.0]])[None, :])
    A = sparse.vstack([bound_rows, _lipschitz_rows(n, heads, tails, lengths), budget], format="csr")
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    cost = np.concatenate([-diff, [0.0, 0.0]])
    bounds = [(None, None)] * n + [(0, None), (0, None)]
    res = linprog(
        cost,
        A_ub=A,
        b_ub=b,
        bounds=bounds,
        method=method,
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise SolverError(f"LP solver failed: {res.message}")
    return res.x


def _finalize(diff: np.ndarray, phi: np.ndarray, heads, tails, lengths) -> LipschitzDualSolution:
    """Rescale ``phi`` so the budget constraint holds exactly, then report."""
    sup = float(np.max(np.abs(phi))) if phi.size else 0.0
    if heads.size:
        lip = float(np.max(np.abs(phi[heads] - phi[tails]) / lengths))
    else:
        lip = 0.0
    used = sup + lip
    if used > 1.0:
        phi = phi / used
        sup, lip = sup / used, lip / used
    return LipschitzDualSolution(phi, sup, lip, float(np.dot(phi, diff)))


def bl_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, metric: Metric) -> tuple[float, LipschitzDualSolution]:
    """BL distance on the sparse constraint graph of ``metric``.

    The returned test function is exactly feasible: it is rescaled by the
    measured sup norm plus Lipschitz constant whenever those exceed one.
    """
    diff = _check_pair(mu, nu, metric)
    if not np.any(diff):
        n = diff.size
        return 0.0, LipschitzDualSolution(np.zeros(n), 0.0, 0.0, 0.0)
    heads, tails, lengths = metric.edges()
    method = "highs-ipm" if diff.size > 2000 else "highs-ds"
    x = _solve_lp(diff, heads, tails, lengths, method)
    sol = _finalize(diff, x[: diff.size], heads, tails, lengths)
    return abs(sol.objective), sol


def bl_oracle(mu: DiscreteMeasure, nu: DiscreteMeasure, metric: Metric) -> float:
    """Exact BL distance with a Lipschitz row for every node pair."""
    diff = _check_pair(mu, nu, metric)
    n = diff.size
    if n > ORACLE_NODE_LIMIT:
        raise OracleSizeError(f"oracle limited to {ORACLE_NODE_LIMIT} nodes, got {n}")
    if n == 1:
        return abs(float(diff[0]))
    d = metric.pairwise()
    iu, ju = np.triu_indices(n, 1)
    x = _solve_lp(diff, iu, ju, d[iu, ju], "highs-ipm")
    return abs(float(np.dot(x[:n], diff)))


def point_mass_value(d: float) -> float:
    """BL distance between two unit point masses at distance ``d``."""
    return 2.0 * d / (2.0 + d)


def save_instance(path: str | Path, mu: DiscreteMeasure, nu: DiscreteMeasure, sol: LipschitzDualSolution) -> None:
    payload = {
        "mu": mu.weights.tolist(),
        "nu": nu.weights.tolist(),
        "nodes": None if mu.nodes is None else np.asarray(mu.nodes).tolist(),
        "solution": sol.to_json(),
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


# ------------------------------------------------------ stability experiment


VelocityField = Callable[[float], np.ndarray]


@dataclass
class StabilityReport:
    name: str
    dt: float
    times: list[float] = field(default_factory=list)
    lhs: list[float] = field(default_factory=list)
    budget: list[float] = field(default_factory=list)
    min_ratio: float = math.inf
    max_lhs: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _advect(space, density: np.ndarray, vel: VelocityField, t: float, dt: float) -> np.ndarray:
    from .limit import advdiff_step

    return advdiff_step(space, density, vel(t), dt, vel(t + dt), diffusion=0.0)


def bl_stability_experiment(
    space,
    dens_a0: np.ndarray,
    dens_b0: np.ndarray,
    vel_a: VelocityField,
    vel_b: VelocityField,
    T: float,
    dt: float,
    record_stride: int = 10,
    name: str = "scenario",
    lhs_floor: float = 1e-12,
) -> StabilityReport:
    """Evolve two continuity equations and compare d_BL^2 with its budget.

    The budget is ``d_BL^2(initial) + int_0^t int |u_a - u_b|^2 dens_a``. The
    ratio budget / d_BL^2 is tracked at records where d_BL^2 exceeds
    ``lhs_floor``; its minimum estimates ``1/C``.
    """
    metric = torus_metric(space.n_x, space.side)
    n_steps = int(round(T / dt))

    def dist_sq(a: np.ndarray, b: np.ndarray) -> float:
        val, _ = bl_distance(grid_measure(space, a), grid_measure(space, b), metric)
        return val * val

    def gap_rate(a: np.ndarray, t: float) -> float:
        g = vel_a(t) - vel_b(t)
        return float(np.sum(np.sum(g * g, axis=0) * a) * space.cell_area)

    from .coupled import RunningIntegral

    dens_a, dens_b = np.array(dens_a0, float), np.array(dens_b0, float)
    init = dist_sq(dens_a, dens_b)
    integral = RunningIntegral()
    report = StabilityReport(name, dt)
    for n in range(n_steps + 1):
        t = n * dt
        acc = integral.push(t, gap_rate(dens_a, t))
        if n % record_stride == 0 or n == n_steps:
            lhs = dist_sq(dens_a, dens_b)
            rhs = init + acc
            report.times.append(t)
            report.lhs.append(lhs)
            report.budget.append(rhs)
            report.max_lhs = max(report.max_lhs, lhs)
            if lhs > lhs_floor:
                report.min_ratio = min(report.min_ratio, rhs / lhs)
        if n < n_steps:
            dens_a = _advect(space, dens_a, vel_a, t, dt)
            dens_b = _advect(space, dens_b, vel_b, t, dt)
    return report


def scripted_scenarios(space, amplitude: float = 0.5, drift: float = 0.3, offset: float = 0.5):
    """The three reference scenarios: identical data, constant extra drift,
    translated initial density. Returns ``(name, dens_a0, dens_b0, vel_a, vel_b)``."""
    from .fluid import taylor_green

    x1, _ = space.mesh
    area = space.side**2
    k = 2 * np.pi / space.side
    start_density = (1 + 0.5 * np.cos(k * x1)) / area
    shifted = (1 + 0.5 * np.cos(k * (x1 - offset))) / area
    base = taylor_green(space, amplitude)

    def vel_b(t: float) -> np.ndarray:
        return base * math.exp(-2 * k * k * t)

    def vel_drift(t: float) -> np.ndarray:
        out = vel_b(t).copy()
        out[0] += drift
        return out

    return [
        ("identical", start_density, start_density.copy(), vel_b, vel_b),
        ("drift", start_density, start_density.copy(), vel_drift, vel_b),
        ("translated", shifted, start_density, vel_b, vel_b),
    ]
