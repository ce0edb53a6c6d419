import math

import numpy as np
import pytest

from conftest import smooth_density
from oracles import GAUSS_SECOND_MOMENT
from vfpns import hilbert
from vfpns.entropy import second_moment
from vfpns.fluid import taylor_green
from vfpns.grid import moment_density, moment_momentum, spectral_grad


def test_f0_uniform_mass(grid16):
    space = grid16.space
    f0 = hilbert.corrector_f0(grid16, np.full((space.n_x, space.n_x), 1.0 / space.side**2))
    assert abs(np.sum(f0) * grid16.cell_volume - 1.0) <= 1e-6


def test_f0_marginal_and_second_moment(grid16):
    density = smooth_density(grid16.space)
    f0 = hilbert.corrector_f0(grid16, density)
    assert np.max(np.abs(moment_density(grid16, f0) - density)) <= 1e-8
    assert abs(second_moment(grid16, f0) - GAUSS_SECOND_MOMENT) <= 1e-5


def test_f0_rejects_negative(grid8):
    with pytest.raises(ValueError):
        hilbert.corrector_f0(grid8, -np.ones((8, 8)))


def test_f1_vanishes_for_constant_density_at_rest(grid8):
    density = np.full((8, 8), 1.0 / grid8.space.side**2)
    f1 = hilbert.corrector_f1(grid8, density, np.zeros((2, 8, 8)))
    assert np.max(np.abs(f1)) == 0.0


def test_f1_first_moment(grid16):
    space = grid16.space
    density = smooth_density(space, mode=2)
    f1 = hilbert.corrector_f1(grid16, density, np.zeros((2, space.n_x, space.n_x)))
    flux = moment_momentum(grid16, f1)
    assert np.max(np.abs(flux + spectral_grad(space, density))) <= 1e-6


def test_f1_first_moment_with_flow(grid16):
    space = grid16.space
    density = smooth_density(space)
    flow = taylor_green(space, 0.5)
    f1 = hilbert.corrector_f1(grid16, density, flow)
    expected = density[None] * flow - spectral_grad(space, density)
    assert np.max(np.abs(moment_momentum(grid16, f1) - expected)) <= 1e-6


def test_f1_zero_marginal(grid16):
    space = grid16.space
    corr = hilbert.correctors(grid16, smooth_density(space), taylor_green(space, 0.5))
    assert corr.marginal_defect(grid16) <= 1e-10


def test_expansion_errors_track_suprema(grid8):
    space = grid8.space
    density = smooth_density(space)
    flow = np.zeros((2, 8, 8))
    errs = hilbert.ExpansionErrors(0.1)
    f0 = hilbert.corrector_f0(grid8, density)
    errs.update(grid8, 0.0, f0, density, flow)
    errs.update(grid8, 0.1, 1.01 * f0, density, flow)
    assert errs.E0_t[0] <= 1e-14
    assert errs.E0 == pytest.approx(0.01, rel=1e-8)
    errs.update_density_distance(0.3)
    errs.update_density_distance(0.1)
    assert errs.D == 0.3


def test_residual_orders_synthetic():
    def factory(eps: float) -> hilbert.ExpansionErrors:
        return hilbert.ExpansionErrors(eps, E0=2 * eps, E1=eps**2, D=5 * eps**2)

    table = hilbert.residual_orders([0.4, 0.2, 0.1, 0.05], factory)
    assert table.fits["E0"].slope == pytest.approx(1.0, abs=1e-12)
    assert table.fits["D"].slope == pytest.approx(2.0, abs=1e-12)
    assert len(table.rows()) == 4


def test_residual_orders_needs_three():
    with pytest.raises(ValueError):
        hilbert.residual_orders([0.2, 0.1], lambda e: hilbert.ExpansionErrors(e))


def test_degenerate_equilibrium_is_rank_deficient(grid8):
    density = np.full((8, 8), 1.0 / grid8.space.side**2)
    flow = np.zeros((2, 8, 8))

    def factory(eps: float) -> hilbert.ExpansionErrors:
        errs = hilbert.ExpansionErrors(eps)
        f0 = hilbert.corrector_f0(grid8, density)
        for t in (0.0, 0.5):
            errs.update(grid8, t, f0, density, flow)
        return errs

    table = hilbert.residual_orders([0.4, 0.2, 0.1], factory)
    assert table.E0 == [0.0, 0.0, 0.0]
    assert table.fits["E0"].rank_deficient
    assert math.isinf(table.fits["E0"].intercept)
