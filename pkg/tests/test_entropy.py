import math

import numpy as np
import pytest
from conftest import random_dist, smooth_density
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vfpns import entropy as ent
from vfpns.grid import PhaseGrid, SpatialGrid, integrate_phase, moment_density


def _log_maxw(grid, density, drift):
    c1, c2 = grid.velocity.mesh
    d1 = c1[None, None] - drift[0][:, :, None, None]
    d2 = c2[None, None] - drift[1][:, :, None, None]
    return (np.log(density) - oracles.LOG_2PI)[:, :, None, None] - 0.5 * (d1**2 + d2**2)


def test_maxwellian_moments(grid16):
    maxw = ent.maxwellian(grid16, 1.0 / grid16.space.side**2)
    assert abs(integrate_phase(grid16, maxw) - oracles.GAUSS_MASS) < 1e-6
    assert abs(ent.second_moment(grid16, maxw) - oracles.GAUSS_SECOND_MOMENT) < 1e-5


def test_zero_density_maxwellian(grid8):
    assert not np.any(ent.maxwellian(grid8, 0.0))


def test_maxwellian_covariance_is_identity(grid16):
    std = ent.standard_maxwellian(grid16)
    c1, c2 = grid16.velocity.mesh
    hv2 = grid16.velocity.cell_area
    cov = [[np.sum(a * b * std) * hv2 for b in (c1, c2)] for a in (c1, c2)]
    assert np.max(np.abs(np.array(cov) - np.array(oracles.GAUSS_COVARIANCE))) < 1e-6


def test_maxwellian_rejects_large_drift(grid8):
    with pytest.raises(ent.TruncationRiskError):
        ent.maxwellian(grid8, 1.0, (3.5, 0.0))
    with pytest.raises(ValueError):
        ent.MaxwellianParams(np.array([-1.0]), np.zeros(2))


def test_relative_entropy_identity_case(grid16):
    maxw = ent.maxwellian(grid16, smooth_density(grid16.space))
    assert ent.relative_entropy(grid16, maxw, maxw) == 0.0


def test_relative_entropy_of_doubled_maxwellian(grid16):
    maxw = ent.maxwellian(grid16, smooth_density(grid16.space))
    mass = integrate_phase(grid16, maxw)
    assert abs(ent.relative_entropy(grid16, 2 * maxw, maxw) - oracles.bregman_double(mass)) < 1e-8


def test_relative_entropy_support_error(grid8):
    ref = ent.maxwellian(grid8, 0.02)
    ref[0, 0, 0, 0] = 0.0
    dist = np.full(grid8.shape, 1e-3)
    with pytest.raises(ent.SupportError):
        ent.relative_entropy(grid8, dist, ref)


def test_drifted_maxwellian_entropy(grid16):
    density = np.full((16, 16), 1.0 / grid16.space.side**2)
    dist = ent.maxwellian(grid16, density, (0.4, -0.3))
    expected = oracles.drifted_entropy(1.0, 0.4**2 + 0.3**2)
    assert abs(ent.relative_entropy(grid16, dist, ent.maxwellian(grid16, density)) - expected) < 1e-6
    assert abs(ent.relative_entropy_maxwellian(grid16, dist, density, (0.0, 0.0)) - expected) < 1e-6


def test_decomposition_of_maxwellian_is_zero():
    # v_max = 8 keeps the truncated Gaussian tail (a kinetic-part floor) below 1e-8
    grid = PhaseGrid.build(16, 40, 2 * math.pi, 8.0)
    density = smooth_density(grid.space)
    drift = 0.5 * np.stack([np.sin(grid.space.mesh[1]), np.cos(grid.space.mesh[0])])
    dist = ent.maxwellian(grid, density, drift)
    parts = ent.entropy_decomposition(grid, dist, density, drift)
    assert max(abs(p) for p in parts) < 1e-8


def test_decomposition_momentum_part(grid16):
    density = smooth_density(grid16.space)
    dist = ent.maxwellian(grid16, density, (0.7, 0.2))
    kin, dens, mom = ent.entropy_decomposition(grid16, dist, moment_density(grid16, dist), (0.1, -0.4))
    expected = 0.5 * (0.6**2 + 0.6**2) * grid16.space.integrate(moment_density(grid16, dist))
    assert abs(kin) < 1e-6 and abs(dens) < 1e-6
    assert abs(mom - expected) < 1e-6


def test_decomposition_sums_to_direct_value(grid8, rng):
    dist = random_dist(grid8, rng)
    density = smooth_density(grid8.space, 0.5)
    drift = 0.3 * np.stack([np.cos(grid8.space.mesh[1]), np.sin(grid8.space.mesh[0])])
    direct = float(np.sum(dist * (np.log(dist) - _log_maxw(grid8, density, drift))) * grid8.cell_volume)
    assert abs(sum(ent.entropy_decomposition(grid8, dist, density, drift)) - direct) < 1e-8


def test_free_energy_gaussian(grid16):
    maxw = ent.maxwellian(grid16, 1.0 / grid16.space.side**2)
    val = ent.free_energy(grid16, maxw, np.zeros((2, 16, 16)))
    assert abs(val - oracles.gaussian_free_energy(grid16.space.side)) < 1e-6


def test_free_energy_additive_and_quadratic(grid8, rng):
    dist = random_dist(grid8, rng)
    zero = np.zeros((2, 8, 8))
    kinetic = float(np.sum(dist * np.log(dist) + 0.5 * grid8.velocity.speed_sq * dist) * grid8.cell_volume)
    assert ent.free_energy(grid8, dist, zero) == pytest.approx(kinetic, abs=1e-12)
    flow = rng.normal(size=(2, 8, 8))
    energy = 0.5 * float(np.sum(flow**2)) * grid8.space.cell_area
    gain = ent.free_energy(grid8, dist, 2 * flow) - ent.free_energy(grid8, dist, flow)
    assert abs(gain - 3 * energy) < 1e-12 * max(1.0, energy)


def test_dissipation_vanishes_at_equilibrium(grid16):
    density = smooth_density(grid16.space)
    flow = 0.5 * np.stack([np.sin(grid16.space.mesh[1]), np.cos(grid16.space.mesh[0])])
    eps = 0.3
    d_total, d_kin, d_align = ent.dissipation_split(grid16, ent.maxwellian(grid16, density, eps * flow), flow, eps)
    assert d_total < 1e-6 and d_kin < 1e-6 and d_align < 1e-6


@pytest.mark.parametrize("eps", [0.05, 0.4, 1.0])
def test_dissipation_of_drifted_maxwellian(grid16, eps):
    density = smooth_density(grid16.space)
    dist = ent.maxwellian(grid16, density, (0.6, -0.8))
    d_total, d_kin, d_align = ent.dissipation_split(grid16, dist, np.zeros((2, 16, 16)), eps)
    assert abs(d_kin) < 1e-5
    assert abs(d_align - 1.0 * grid16.space.integrate(moment_density(grid16, dist))) < 1e-5
    assert abs(d_total - d_align) < 1e-5


def test_dissipation_split_identity_random(grid8, rng):
    for _ in range(5):
        dist = random_dist(grid8, rng)
        flow = rng.normal(size=(2, 8, 8))
        eps = float(rng.uniform(0.05, 1.0))
        d_total, d_kin, d_align = ent.dissipation_split(grid8, dist, flow, eps)
        j1, j2, _, bulk = ent._relaxation_flux(grid8, dist)
        gap = (bulk - eps * flow)[:, :, :, None, None]
        direct = float(np.sum(((j1 + gap[0] * dist) ** 2 + (j2 + gap[1] * dist) ** 2) / dist) * grid8.cell_volume)
        assert abs(d_total - direct) < 1e-6 * max(1.0, direct)
        assert abs(d_total - d_kin - d_align) < 1e-6 * max(1.0, d_total)


def test_dissipation_rejects_bad_eps(grid8, rng):
    with pytest.raises(ValueError):
        ent.dissipation_split(grid8, random_dist(grid8, rng), np.zeros((2, 8, 8)), 0.0)


def test_ckp_cases(grid16):
    density = np.full((16, 16), 1.0 / grid16.space.side**2)
    maxw = ent.maxwellian(grid16, density)
    assert ent.ckp_check(grid16, maxw, maxw) == (0.0, 0.0, True)
    assert ent.ckp_check(grid16, ent.maxwellian(grid16, density, (0.05, 0.02)), maxw)[2]
    x1 = grid16.space.mesh[0]
    bumped = maxw * (1 + 0.3 * np.sin(2 * math.pi * x1 / grid16.space.side))[:, :, None, None]
    bumped *= integrate_phase(grid16, maxw) / integrate_phase(grid16, bumped)
    assert ent.ckp_check(grid16, bumped, maxw)[2]


def test_ckp_mass_mismatch(grid8):
    maxw = ent.maxwellian(grid8, 0.02)
    with pytest.raises(ent.MassMismatchError):
        ent.ckp_check(grid8, 2 * maxw, maxw)


def test_llogl():
    space = SpatialGrid(16, 3.0)
    assert ent.llogl_entropy(space, np.ones((16, 16))) == 0.0
    c = 0.37
    assert abs(ent.llogl_entropy(space, np.full((16, 16), c)) - abs(c * math.log(c)) * 9.0) < 1e-12


def test_llogl_random_vs_fsum(rng):
    space = SpatialGrid(32, 2 * math.pi)
    dens = rng.uniform(0.01, 3.0, size=(32, 32))
    exact = math.fsum((dens * np.abs(np.log(dens))).ravel().tolist()) * space.cell_area
    assert abs(ent.llogl_entropy(space, dens) - exact) < 1e-10


def test_tm_ratio_constant_and_homogeneous(rng):
    space = SpatialGrid(16, 2 * math.pi)
    area = space.side**2
    p = np.full((16, 16), 1.0 / area)
    c = 1.7
    # constant test field: sum p c^2 / ((1 + |log(1/area)|) c^2 area)
    expected = 1.0 / ((1.0 + abs(math.log(1.0 / area))) * area)
    assert abs(ent.tm_ratio(space, p, np.full((16, 16), c)) - expected) < 1e-12
    field = rng.normal(size=(16, 16))
    assert ent.tm_ratio(space, p, field) == pytest.approx(ent.tm_ratio(space, p, 5 * field), rel=1e-12)


def test_tm_ratio_concentrated_density_finite():
    space = SpatialGrid(32, 2 * math.pi)
    x1, x2 = space.mesh
    p = np.exp(-((x1 - math.pi) ** 2 + (x2 - math.pi) ** 2) / 0.05)
    p /= space.integrate(p)
    ratio = ent.tm_ratio(space, p, np.cos(x1))
    assert 0 < ratio < 1.0
    with pytest.raises(ZeroDivisionError):
        ent.tm_ratio(space, p, np.zeros((32, 32)))


def test_record_columns_match_row():
    rec = ent.DiagnosticsRecord(t=0.5, entropy_H=1.0)
    assert len(rec.as_row()) == len(ent.DiagnosticsRecord.columns())
    assert ent.DiagnosticsRecord(*rec.as_row()) == rec


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-1.5, 1.5), b=st.floats(-1.5, 1.5))
def test_ckp_holds_for_drifted_pairs(a, b):
    grid = PhaseGrid.build(8, 24, 2 * math.pi, 6.0)
    maxw = ent.maxwellian(grid, 1.0 / grid.space.side**2)
    dist = ent.maxwellian(grid, 1.0 / grid.space.side**2, (a, b))
    dist *= integrate_phase(grid, maxw) / integrate_phase(grid, dist)
    assert ent.ckp_check(grid, dist, maxw)[2]
