import json
import math
from pathlib import Path

import numpy as np
import pytest

from vfpns import bl, cli
from vfpns.coupled import CoupledState, evaluate_step_data
from vfpns.entropy import maxwellian, relative_entropy_maxwellian
from vfpns.grid import PhaseGrid, moment_density
from vfpns.harness import (
    ConfigError,
    EpsRun,
    InitialDataError,
    RunConfig,
    SweepError,
    audit_terms,
    config_from_dict,
    dt_for,
    emit_report,
    eps_sweep,
    init_scaled_well_prepared,
    init_well_prepared,
    load_config,
)
from vfpns.harness.initial import reference_fields, reference_perturbation
from vfpns.harness.report import svg_polyline_count
from vfpns.harness.sweep import SweepResult
from vfpns.limit import effective_velocity

SMALL = {
    "schema_version": 1,
    "grid": {"n_x": 16, "n_v": 32},
    "eps_list": [0.4, 0.3, 0.2],
    "T": 0.05,
    "diagnostics": {"records": 5},
}


@pytest.fixture(scope="module")
def wide16() -> PhaseGrid:
    return PhaseGrid.build(16, 32, 2 * math.pi, 8.0)


# ------------------------------------------------------------------ config


def test_defaults_validate():
    cfg = config_from_dict({"schema_version": 1})
    assert cfg == RunConfig()
    assert cfg.eps_list == (0.4, 0.2, 0.1, 0.05)


@pytest.mark.parametrize(
    "patch",
    [
        {"bogus": 1},
        {"grid": {"n_x": 32, "colour": 1}},
        {"schema_version": 2},
        {"eps_list": [0.1, 0.2, 0.05]},
        {"eps_list": [0.4, -0.2]},
        {"T": 0},
        {"grid": {"n_x": 12}},
        {"initial": {"recipe": "random"}},
        {"initial": {"perturbation_amplitude": 2.0}},
        {"dt_policy": {"cfl_fraction": 1.5}},
    ],
)
def test_rejected_configs(patch):
    raw = {"schema_version": 1}
    raw.update(patch)
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_missing_schema_version():
    with pytest.raises(ConfigError):
        config_from_dict({"T": 0.5})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(SMALL))
    assert load_config(good).grid.n_x == 16


@pytest.mark.parametrize("eps", [0.4, 0.2, 0.1, 0.05])
def test_dt_policy(eps):
    cfg = RunConfig()
    dt, n_steps, stride = dt_for(cfg, eps)
    h = cfg.phase_grid().space.h
    assert dt <= min(0.9 * eps * h / 6.0, eps**3) * (1 + 1e-12)
    assert n_steps == stride * cfg.diagnostics.records
    assert dt * n_steps == pytest.approx(cfg.T, rel=1e-12)


# ----------------------------------------------------------- initial data


def test_init_well_prepared(wide16):
    space = wide16.space
    rho, flow = reference_fields(space, 0.5, 0.5)
    dist, fluid = init_well_prepared(wide16, rho, flow)
    assert relative_entropy_maxwellian(wide16, dist, rho, np.zeros_like(flow)) <= 1e-8
    assert np.max(np.abs(fluid.flow - flow)) == 0.0
    assert abs(np.sum(dist) * wide16.cell_volume - 1.0) <= 1e-8


def test_init_scaled_well_prepared(wide16):
    space = wide16.space
    rho, flow = reference_fields(space, 0.5, 0.5)
    w = reference_perturbation(space, 1.0)
    dist, fluid = init_scaled_well_prepared(wide16, rho, flow, w, 0.1)
    expected = 0.5 * space.integrate(rho * np.sum(w * w, axis=0))
    assert abs(relative_entropy_maxwellian(wide16, dist, rho, np.zeros_like(w)) - expected) <= 1e-6
    metric = bl.torus_metric(space.n_x, space.side)
    d, _ = bl.bl_distance(bl.grid_measure(space, moment_density(wide16, dist)), bl.grid_measure(space, rho), metric)
    assert d <= 1e-8
    assert np.max(np.abs(fluid.flow - flow)) == 0.0


def test_scaled_with_zero_perturbation_reduces(wide16):
    rho, flow = reference_fields(wide16.space, 0.5, 0.5)
    a, _ = init_well_prepared(wide16, rho, flow)
    b, _ = init_scaled_well_prepared(wide16, rho, flow, np.zeros_like(flow), 0.2)
    assert np.array_equal(a, b)


def test_initial_data_guards(wide16):
    rho, flow = reference_fields(wide16.space, 0.5, 0.5)
    with pytest.raises(InitialDataError):
        init_well_prepared(wide16, 2 * rho, flow)
    with pytest.raises(InitialDataError):
        init_well_prepared(wide16, rho - 0.5 * np.max(rho), flow)
    with pytest.raises(InitialDataError):
        init_scaled_well_prepared(wide16, rho, flow, 2 * reference_perturbation(wide16.space, 1.0), 0.1)


# ------------------------------------------------------------------- audit


def test_identical_systems_zero_modulated_energy(grid16):
    space = grid16.space
    eps = 0.2
    rho, flow = reference_fields(space, 0.5, 0.5)
    dist = maxwellian(grid16, rho, effective_velocity(space, rho, flow, eps))
    data = evaluate_step_data(grid16, CoupledState(dist, flow.copy(), 0.0, eps))
    terms = audit_terms(grid16, data, rho, flow, eps)
    assert terms.modulated <= 1e-6
    assert terms.fluid_part == 0.0


@pytest.fixture(scope="module")
def small_run():
    cfg = config_from_dict(dict(SMALL, eps_list=[0.4, 0.2, 0.1], T=0.1))
    return EpsRun(cfg, 0.2).run().result()


def test_audit_holds_well_prepared(small_run):
    assert small_run.audit_rows
    assert all(row.holds for row in small_run.audit_rows)
    assert small_run.metrics["audit_worst_slack"] >= -1e-4
    first = small_run.audit_rows[0]
    assert first.lhs == first.rhs


def test_energy_inequality_inline(small_run):
    assert small_run.metrics["energy_worst_excess"] <= 1e-4


# --------------------------------------------------------- sweep / report


def test_sweep_needs_three_eps():
    cfg = config_from_dict(dict(SMALL, eps_list=[0.4, 0.2]))
    with pytest.raises(ConfigError):
        eps_sweep(cfg)


def test_sweep_failure_keeps_partial(monkeypatch):
    from vfpns.harness import sweep as sweep_mod

    calls = {"n": 0}
    real = sweep_mod.EpsRun.run

    def flaky(self, stop_step=None):
        calls["n"] += 1
        if calls["n"] == 2:
            raise FloatingPointError("injected")
        return real(self, stop_step)

    monkeypatch.setattr(sweep_mod.EpsRun, "run", flaky)
    with pytest.raises(SweepError) as info:
        eps_sweep(config_from_dict(SMALL), with_limit_run=False)
    assert [r.eps for r in info.value.partial.runs] == [0.4]


def test_empty_report(tmp_path):
    emit_report(SweepResult(RunConfig()), tmp_path)
    lines = (tmp_path / "rates.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("eps,dt,n_steps")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["entries"] == 0
    assert svg_polyline_count((tmp_path / "rates.svg").read_text()) == {}


@pytest.fixture(scope="module")
def small_sweep():
    return eps_sweep(config_from_dict(SMALL))


def test_report_structure(small_sweep, tmp_path):
    emit_report(small_sweep, tmp_path)
    counts = svg_polyline_count((tmp_path / "rates.svg").read_text())
    assert counts == {"E0": 1, "E1": 1, "D": 1}
    rows = (tmp_path / "rates.csv").read_text().splitlines()
    assert len(rows) == 4
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["entries"] == 3 and "slope_E0" in summary["acceptance"]
    assert (tmp_path / "records_eps0.4.csv").exists()
    assert (tmp_path / "audit_eps0.2.csv").exists()


def test_report_idempotent(small_sweep, tmp_path):
    emit_report(small_sweep, tmp_path / "a")
    emit_report(small_sweep, tmp_path / "b")
    for name in ("rates.csv", "fits.csv", "summary.json", "rates.svg", "records_eps0.3.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_svg_checker_rejects_non_svg():
    with pytest.raises(ValueError):
        svg_polyline_count("<html/>")


def test_sweep_constants_reported(small_sweep):
    assert set(small_sweep.constants) >= {"sup_l1_rho", "sup_l2_v", "modulated_gronwall"}
    assert all(len(vals) == 3 for vals in small_sweep.constants.values())
    assert small_sweep.limit_summary["mass_drift"] <= 1e-12


# --------------------------------------------------------------------- cli


def _write(tmp_path: Path, raw: dict) -> str:
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_cli_config_error(tmp_path):
    assert cli.main(["sweep", "--config", _write(tmp_path, {"schema_version": 1, "bogus": 0})]) == cli.EXIT_CONFIG
    assert cli.main(["simulate", "--config", _write(tmp_path, SMALL), "--eps", "0.2,x"]) == cli.EXIT_CONFIG


def test_cli_numerical_failure(tmp_path):
    raw = dict(SMALL, grid={"n_x": 16, "n_v": 16})
    code = cli.main(["simulate", "--config", _write(tmp_path, raw), "--out", str(tmp_path / "o"), "--eps", "0.4,0.3,0.2"])
    assert code == cli.EXIT_NUMERICAL


def test_cli_simulate_and_limit(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    assert (out / "records_eps0.4.csv").exists() and (out / "checkpoint" / "checkpoint.json").exists()
    assert cli.main(["limit", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    assert cli.main(["bl", str(out / "limit_density.vfb"), str(out / "limit_density.vfb")]) == cli.EXIT_OK


def test_cli_sweep_exit_code(tmp_path, capsys):
    code = cli.main(["sweep", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path / "s")])
    printed = capsys.readouterr().out
    assert code == (cli.EXIT_ACCEPTANCE if "FAIL" in printed else cli.EXIT_OK)
    assert (tmp_path / "s" / "summary.json").exists()


def test_cli_oracle(capsys):
    assert cli.main(["oracle", "--instances", "10"]) == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["worst_gap"] <= 1e-6 and report["point_mass_gap"] <= 1e-6
