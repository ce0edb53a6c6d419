"""Periodic spatial grid, truncated velocity grid, quadrature and spectral calculus.

Array conventions used throughout the package:

* scalar field: ``(n_x, n_x)`` array, axis 0 is the first coordinate;
* vector field: ``(2, n_x, n_x)`` array;
* phase density: ``(n_x, n_x, n_v, n_v)`` array indexed ``[i1, i2, l1, l2]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

DENSITY_FLOOR = 1e-12


class GridError(ValueError):
    """Raised on invalid grid parameters."""


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid on the 2-torus ``[0, side)^2``."""

    n_x: int
    side: float = 2.0 * math.pi

    def __post_init__(self) -> None:
        if self.n_x < 8 or self.n_x & (self.n_x - 1):
            raise GridError(f"n_x must be a power of two >= 8, got {self.n_x}")
        if not self.side > 0:
            raise GridError(f"side must be positive, got {self.side}")

    @property
    def dim(self) -> int:
        return 2

    @property
    def h(self) -> float:
        return self.side / self.n_x

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_x) * self.h

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two ``(n_x, n_x)`` arrays."""
        return tuple(np.meshgrid(self.nodes, self.nodes, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Full angular wavenumbers, Nyquist kept (used for heat factors)."""
        return 2.0 * math.pi * np.fft.fftfreq(self.n_x, d=self.h)

    @cached_property
    def deriv_wavenumbers(self) -> np.ndarray:
        """Wavenumbers for first derivatives, Nyquist mode zeroed."""
        k = self.wavenumbers.copy()
        k[self.n_x // 2] = 0.0
        return k

    @cached_property
    def k_vec(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.deriv_wavenumbers
        return k[:, None] * np.ones(self.n_x)[None, :], np.ones(self.n_x)[:, None] * k[None, :]

    @cached_property
    def k_sq_full(self) -> np.ndarray:
        k = self.wavenumbers
        return k[:, None] ** 2 + k[None, :] ** 2

    @cached_property
    def k_sq_deriv(self) -> np.ndarray:
        k1, k2 = self.k_vec
        return k1 * k1 + k2 * k2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule mask on the full FFT layout."""
        m = np.abs(np.fft.fftfreq(self.n_x) * self.n_x) < self.n_x / 3.0
        return m[:, None] & m[None, :]

    def integrate(self, field: np.ndarray) -> float:
        """Midpoint quadrature of a scalar field (or each component of a stack)."""
        return float(np.sum(field) * self.cell_area)

    def descriptor(self) -> dict:
        return {"n_x": self.n_x, "side": self.side}


@dataclass(frozen=True)
class VelocityGrid:
    """Cell-centred grid on the truncated velocity box ``[-v_max, v_max)^2``."""

    n_v: int
    v_max: float = 6.0

    def __post_init__(self) -> None:
        if self.n_v < 8 or self.n_v % 2:
            raise GridError(f"n_v must be an even integer >= 8, got {self.n_v}")
        if self.v_max < 5.0:
            raise GridError(f"v_max must be >= 5, got {self.v_max}")

    @property
    def h(self) -> float:
        return 2.0 * self.v_max / self.n_v

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @cached_property
    def nodes(self) -> np.ndarray:
        return -self.v_max + (np.arange(self.n_v) + 0.5) * self.h

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.nodes, self.nodes, indexing="ij"))

    @cached_property
    def speed_sq(self) -> np.ndarray:
        a, b = self.mesh
        return a * a + b * b

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * math.pi * np.fft.fftfreq(self.n_v, d=self.h)

    @cached_property
    def diff_matrix(self) -> np.ndarray:
        """Real matrix of the periodic spectral first derivative (Nyquist dropped)."""
        n = self.n_v
        k = self.wavenumbers.copy()
        k[n // 2] = 0.0
        eye = np.eye(n)
        return np.ascontiguousarray(np.fft.ifft(1j * k[:, None] * np.fft.fft(eye, axis=0), axis=0).real)

    def descriptor(self) -> dict:
        return {"n_v": self.n_v, "v_max": self.v_max}


@dataclass(frozen=True)
class PhaseGrid:
    """Product of a spatial and a velocity grid."""

    space: SpatialGrid
    velocity: VelocityGrid

    @property
    def shape(self) -> tuple[int, int, int, int]:
        nx, nv = self.space.n_x, self.velocity.n_v
        return (nx, nx, nv, nv)

    @property
    def cell_volume(self) -> float:
        return self.space.cell_area * self.velocity.cell_area

    def descriptor(self) -> dict:
        return {"space": self.space.descriptor(), "velocity": self.velocity.descriptor()}

    @classmethod
    def build(cls, n_x: int, n_v: int, side: float = 2.0 * math.pi, v_max: float = 6.0) -> "PhaseGrid":
        return cls(SpatialGrid(n_x, side), VelocityGrid(n_v, v_max))


# ---------------------------------------------------------------- quadrature

PhaseWeight = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def integrate_phase(grid: PhaseGrid, dist: np.ndarray, weight: PhaseWeight | np.ndarray | None = None) -> float:
    """Midpoint rule ``h_x^2 h_v^2 sum(weight * dist)``.

    ``weight`` may be ``None`` (mass), an array broadcastable to the phase
    shape, or a callable of ``(x1, x2, xi1, xi2)`` evaluated on broadcast
    node arrays.
    """
    if weight is None:
        total = np.sum(dist)
    else:
        if callable(weight):
            x1, x2 = grid.space.mesh
            c1, c2 = grid.velocity.mesh
            weight = weight(x1[:, :, None, None], x2[:, :, None, None], c1[None, None], c2[None, None])
        total = np.sum(np.broadcast_to(weight, dist.shape) * dist)
    return float(total * grid.cell_volume)


def moment_weight_l1_2(x1, x2, c1, c2):
    """Weight ``1 + |xi|^2`` of the weighted L1 norm."""
    return 1.0 + c1 * c1 + c2 * c2 + 0.0 * x1 + 0.0 * x2


def periodic_origin_distance(grid: SpatialGrid) -> np.ndarray:
    """Flat-torus distance from each node to the origin (diagnostic weight only)."""
    d = np.minimum(grid.nodes, grid.side - grid.nodes)
    return np.sqrt(d[:, None] ** 2 + d[None, :] ** 2)


def moment_density(grid: PhaseGrid, dist: np.ndarray) -> np.ndarray:
    return np.sum(dist, axis=(2, 3)) * grid.velocity.cell_area


def moment_momentum(grid: PhaseGrid, dist: np.ndarray) -> np.ndarray:
    nodes = grid.velocity.nodes
    hv2 = grid.velocity.cell_area
    m1 = np.einsum("abij,i->ab", dist, nodes) * hv2
    m2 = np.einsum("abij,j->ab", dist, nodes) * hv2
    return np.stack([m1, m2])


@dataclass
class BulkVelocity:
    """Bulk velocity together with the vacuum-cell report."""

    field: np.ndarray
    vacuum_cells: np.ndarray

    @property
    def vacuum_warning(self) -> bool:
        return bool(self.vacuum_cells.size)


def bulk_velocity(grid: PhaseGrid, dist: np.ndarray, floor: float = DENSITY_FLOOR) -> BulkVelocity:
    if not floor > 0:
        raise ValueError("floor must be positive")
    dens = moment_density(grid, dist)
    mom = moment_momentum(grid, dist)
    vac = np.argwhere(dens < floor)
    return BulkVelocity(mom / np.maximum(dens, floor), vac)


# ---------------------------------------------------------- spectral calculus


def spectral_grad(grid: SpatialGrid, field: np.ndarray) -> np.ndarray:
    k1, k2 = grid.k_vec
    hat = np.fft.fft2(field)
    return np.stack([np.fft.ifft2(1j * k1 * hat).real, np.fft.ifft2(1j * k2 * hat).real])


def spectral_div(grid: SpatialGrid, vec: np.ndarray) -> np.ndarray:
    k1, k2 = grid.k_vec
    hat = 1j * k1 * np.fft.fft2(vec[0]) + 1j * k2 * np.fft.fft2(vec[1])
    return np.fft.ifft2(hat).real


def spectral_lap(grid: SpatialGrid, field: np.ndarray) -> np.ndarray:
    # same truncated symbol as div(grad) so the composition is exact
    return np.fft.ifft2(-grid.k_sq_deriv * np.fft.fft2(field)).real


def vector_grad(grid: SpatialGrid, vec: np.ndarray) -> np.ndarray:
    """Jacobian ``J[i, j] = d_j vec_i`` as a ``(2, 2, n, n)`` array."""
    return np.stack([spectral_grad(grid, vec[0]), spectral_grad(grid, vec[1])])
