import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import POINT_MASS_D2, TWO_NODE_BL, point_mass_bl
from vfpns import bl
from vfpns.grid import SpatialGrid


def two_points(d: float) -> bl.ExplicitMetric:
    return bl.ExplicitMetric(np.array([[0.0, d], [d, 0.0]]))


def delta_pair():
    return bl.DiscreteMeasure([1.0, 0.0]), bl.DiscreteMeasure([0.0, 1.0])


def random_instance(rng, n_max: int = 64):
    n = int(rng.integers(2, n_max + 1))
    pts = rng.uniform(0, 2, size=(n, 2))
    mu = bl.DiscreteMeasure(rng.dirichlet(np.ones(n)))
    nu = bl.DiscreteMeasure(rng.dirichlet(np.ones(n)))
    return mu, nu, bl.ExplicitMetric.from_points(pts)


def check_feasible(sol: bl.LipschitzDualSolution, metric) -> None:
    assert sol.sup_norm_used + sol.lip_const_used <= 1 + bl.FEAS_TOL
    assert np.max(np.abs(sol.phi)) <= sol.sup_norm_used + bl.FEAS_TOL
    heads, tails, lengths = metric.edges()
    gaps = np.abs(sol.phi[heads] - sol.phi[tails])
    assert np.all(gaps <= sol.lip_const_used * lengths + bl.FEAS_TOL)


def test_identical_measures_zero(rng):
    w = rng.dirichlet(np.ones(16))
    metric = bl.torus_metric(4, 2 * math.pi)
    value, sol = bl.bl_distance(bl.DiscreteMeasure(w), bl.DiscreteMeasure(w.copy()), metric)
    assert value <= 1e-8
    assert bl.bl_oracle(bl.DiscreteMeasure(w), bl.DiscreteMeasure(w.copy()), metric) <= 1e-8


@pytest.mark.parametrize("d", [0.05, 0.5, 1.0, 2.0, 5.0])
def test_point_masses_closed_form(d):
    mu, nu = delta_pair()
    value, sol = bl.bl_distance(mu, nu, two_points(d))
    assert abs(value - point_mass_bl(d)) <= 1e-6
    assert abs(bl.point_mass_value(d) - point_mass_bl(d)) <= 1e-15
    check_feasible(sol, two_points(d))


def test_oracle_point_masses_distance_two():
    mu, nu = delta_pair()
    assert abs(bl.bl_oracle(mu, nu, two_points(2.0)) - POINT_MASS_D2) <= 1e-8


def test_two_node_instance():
    mu = bl.DiscreteMeasure([0.7, 0.3])
    nu = bl.DiscreteMeasure([0.3, 0.7])
    assert abs(bl.bl_oracle(mu, nu, two_points(1.0)) - TWO_NODE_BL) <= 1e-8
    assert abs(bl.bl_distance(mu, nu, two_points(1.0))[0] - TWO_NODE_BL) <= 1e-8


def test_random_instances_match_oracle(rng):
    worst = 0.0
    for _ in range(40):
        mu, nu, metric = random_instance(rng)
        value, sol = bl.bl_distance(mu, nu, metric)
        worst = max(worst, abs(value - bl.bl_oracle(mu, nu, metric)))
        check_feasible(sol, metric)
    assert worst <= 1e-6


def test_grid_metric_matches_oracle(rng):
    metric = bl.torus_metric(6, 2 * math.pi)
    for _ in range(5):
        mu = bl.DiscreteMeasure(rng.dirichlet(np.ones(36)))
        nu = bl.DiscreteMeasure(rng.dirichlet(np.ones(36)))
        value, sol = bl.bl_distance(mu, nu, metric)
        assert abs(value - bl.bl_oracle(mu, nu, metric)) <= 1e-6
        check_feasible(sol, metric)


def test_torus_wraps():
    metric = bl.torus_metric(8, 8.0)
    d = metric.pairwise()
    assert d[0, 7] == pytest.approx(1.0)
    assert d[0, 4] == pytest.approx(4.0)
    assert d[0, 9] == pytest.approx(2.0)


def test_phase_metric_velocity_not_periodic():
    metric = bl.phase_metric(2, 2.0, 4, 2.0)
    d = metric.pairwise().reshape(2, 2, 4, 4, 2, 2, 4, 4)
    assert d[0, 0, 0, 0, 0, 0, 3, 0] == pytest.approx(3.0)


def test_symmetry_and_triangle(rng):
    metric = bl.torus_metric(5, 2 * math.pi)
    a, b, c = (bl.DiscreteMeasure(rng.dirichlet(np.ones(25))) for _ in range(3))
    ab = bl.bl_distance(a, b, metric)[0]
    ba = bl.bl_distance(b, a, metric)[0]
    bc = bl.bl_distance(b, c, metric)[0]
    ac = bl.bl_distance(a, c, metric)[0]
    assert abs(ab - ba) <= 1e-8
    assert ac <= ab + bc + 1e-6
    assert ab <= 2.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 50.0), st.floats(0.0, 1.0))
def test_point_mass_family(d, share):
    mu = bl.DiscreteMeasure([share, 1 - share])
    nu = bl.DiscreteMeasure([1 - share, share])
    expected = abs(2 * share - 1) * point_mass_bl(d)
    assert abs(bl.bl_distance(mu, nu, two_points(d))[0] - expected) <= 1e-6


def test_measure_errors():
    with pytest.raises(bl.MeasureError):
        bl.DiscreteMeasure([])
    with pytest.raises(bl.MeasureError):
        bl.DiscreteMeasure([1.0, float("nan")])
    with pytest.raises(bl.MeasureError):
        bl.bl_distance(bl.DiscreteMeasure([1.0]), bl.DiscreteMeasure([0.5, 0.5]), two_points(1.0))
    with pytest.raises(bl.MeasureError):
        bl.bl_distance(bl.DiscreteMeasure([1.0, 0.0]), bl.DiscreteMeasure([0.5, 0.5]), bl.torus_metric(3, 1.0))


def test_oracle_size_limit():
    n = bl.ORACLE_NODE_LIMIT + 1
    metric = bl.ExplicitMetric(np.ones((n, n)) - np.eye(n))
    w = np.full(n, 1.0 / n)
    with pytest.raises(bl.OracleSizeError):
        bl.bl_oracle(bl.DiscreteMeasure(w), bl.DiscreteMeasure(w), metric)


def test_explicit_metric_validation():
    with pytest.raises(ValueError):
        bl.ExplicitMetric(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValueError):
        bl.ExplicitMetric(np.array([[0.0, -1.0], [-1.0, 0.0]]))


def test_instance_json(tmp_path):
    mu, nu = delta_pair()
    _, sol = bl.bl_distance(mu, nu, two_points(1.0))
    path = tmp_path / "inst.json"
    bl.save_instance(path, mu, nu, sol)
    data = json.loads(path.read_text())
    assert data["mu"] == [1.0, 0.0]
    assert data["solution"]["objective"] == pytest.approx(point_mass_bl(1.0))


def test_coarse_phase_measure_keeps_mass(grid8, rng):
    from conftest import random_dist

    dist = random_dist(grid8, rng)
    measure, metric = bl.coarse_phase_measure(grid8, dist, (2, 4))
    assert measure.total == pytest.approx(1.0, abs=1e-12)
    assert metric.size == measure.weights.size
    with pytest.raises(ValueError):
        bl.coarse_phase_measure(grid8, dist, (3, 4))


@pytest.fixture(scope="module")
def space8() -> SpatialGrid:
    return SpatialGrid(8, 2 * math.pi)


def test_stability_identical_scenario(space8):
    name, a0, b0, va, vb = bl.scripted_scenarios(space8)[0]
    rep = bl.bl_stability_experiment(space8, a0, b0, va, vb, 0.2, 0.02, record_stride=5, name=name)
    assert rep.max_lhs <= 1e-10
    assert rep.budget[-1] <= 1e-12


def test_stability_drift_scenario(space8):
    name, a0, b0, va, vb = bl.scripted_scenarios(space8)[1]
    rep = bl.bl_stability_experiment(space8, a0, b0, va, vb, 0.2, 0.02, record_stride=5, name=name)
    assert rep.lhs[-1] > rep.lhs[0]
    # budget grows like drift^2 * mass * t
    assert rep.budget[-1] == pytest.approx(0.09 * 0.2, rel=1e-6)
    assert 0 < rep.min_ratio < math.inf
