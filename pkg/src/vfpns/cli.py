"""Command-line entry point: ``vfpns <subcommand> [--config ...] [--out ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bl
from .coupled import EnergyInequalityError
from .entropy import TruncationRiskError
from .fluid import CFLError, NumericalFailure
from .harness import report
from .harness.config import ConfigError, RunConfig, load_config
from .harness.initial import reference_fields
from .harness.session import EpsRun
from .harness.sweep import SweepError, eps_sweep
from .io import ContainerError, read_field, write_field
from .kinetic import PositivityError
from .limit import VacuumError, run_limit

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4
NUMERICAL_ERRORS = (NumericalFailure, PositivityError, EnergyInequalityError, CFLError, TruncationRiskError, VacuumError)

log = logging.getLogger("vfpns")


class AuditViolation(RuntimeError):
    pass


def _parse_eps(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --eps list {text!r}") from exc


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "eps", None):
        cfg = cfg.with_eps(_parse_eps(args.eps))
    return cfg


def _out(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.output_dir)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    if args.resume:
        run = EpsRun.resume(cfg, args.resume)
    else:
        run = EpsRun(cfg, cfg.eps_list[0])
    ckpt = out / "checkpoint"
    while not run.finished:
        step = 0 if run.state is None else run.state.step
        run.run(stop_step=min(step + run.stride, run.n_steps))
        run.checkpoint(ckpt)
    res = run.result()
    tag = report.eps_tag(res.eps)
    report.write_records(out, tag, res.records)
    if res.audit_rows:
        report.write_audit(out, tag, res.audit_rows)
    report.write_json(out / f"metrics_{tag}.json", {"eps": res.eps, "dt": res.dt, "n_steps": res.n_steps, **res.metrics})
    print(json.dumps({k: res.metrics[k] for k in ("E0", "E1", "sup_bl_rho")}))
    return EXIT_OK


def cmd_limit(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    space = cfg.phase_grid().space
    density0, flow0 = reference_fields(space, cfg.initial.density_amplitude, cfg.initial.flow_amplitude)
    dt = args.dt if args.dt else 0.5 * min(cfg.T / cfg.diagnostics.records, space.h**2)
    traj = run_limit(space, density0, flow0, cfg.T, dt, record_stride=max(1, int(round(cfg.T / dt / cfg.diagnostics.records))))
    cols = ["t", "mass", "min_rho", "max_rho", "sup_grad_loggrad"]
    report.write_csv(out / "limit.csv", cols, [[d[c] for c in cols] for d in traj.diagnostics])
    grid = space.descriptor()
    write_field(out / "limit_density.vfb", "density", traj.densities[-1], grid, {"t": traj.times[-1]})
    write_field(out / "limit_flow.vfb", "flow", traj.flows[-1], grid, {"t": traj.times[-1]})
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    try:
        result = eps_sweep(cfg, progress=lambda r: log.info("eps=%g done: E0=%.4e", r.eps, r.metrics["E0"]))
    except SweepError as exc:
        report.emit_report(exc.partial, out)
        raise exc.__cause__ if exc.__cause__ is not None else exc
    report.emit_report(result, out)
    failed = [name for name, entry in result.acceptance.items() if not entry.get("pass", True)]
    for name in sorted(result.acceptance):
        print(f"{name}: {'pass' if result.acceptance[name]['pass'] else 'FAIL'}")
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def cmd_audit(args) -> int:
    cfg = _config(args)
    if not cfg.diagnostics.audit:
        raise ConfigError("audit requires diagnostics.audit = true")
    out = _out(args, cfg)
    bad = []
    for eps in cfg.eps_list if args.all else cfg.eps_list[:1]:
        res = EpsRun(cfg, eps).run().result()
        report.write_audit(out, report.eps_tag(eps), res.audit_rows)
        bad += [(eps, row.t) for row in res.audit_rows if not row.holds]
        print(f"eps={eps:g}: worst slack {res.metrics['audit_worst_slack']:.3e}")
    if bad:
        raise AuditViolation(f"modulated energy inequality violated at {bad[:5]}")
    return EXIT_OK


def cmd_bl(args) -> int:
    a, ha, _ = read_field(args.first)
    b, hb, _ = read_field(args.second)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError("bl needs two square scalar fields of equal shape")
    side = float(ha.get("grid", {}).get("side", 2 * np.pi))
    n = a.shape[0]
    area = (side / n) ** 2
    value, sol = bl.bl_distance(bl.DiscreteMeasure(a.ravel() * area), bl.DiscreteMeasure(b.ravel() * area), bl.torus_metric(n, side))
    print(json.dumps({"bl": value, "status": sol.status}))
    return EXIT_OK


def cmd_oracle(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.instances):
        n = int(rng.integers(2, 65))
        pts = rng.uniform(0, 2, size=(n, 2))
        mu = bl.DiscreteMeasure(rng.dirichlet(np.ones(n)))
        nu = bl.DiscreteMeasure(rng.dirichlet(np.ones(n)))
        metric = bl.ExplicitMetric.from_points(pts)
        worst = max(worst, abs(bl.bl_distance(mu, nu, metric)[0] - bl.bl_oracle(mu, nu, metric)))
    delta = 0.0
    for d in (0.1, 0.5, 1.0, 3.0):
        metric = bl.ExplicitMetric(np.array([[0.0, d], [d, 0.0]]))
        got = bl.bl_distance(bl.DiscreteMeasure(np.array([1.0, 0.0])), bl.DiscreteMeasure(np.array([0.0, 1.0])), metric)[0]
        delta = max(delta, abs(got - bl.point_mass_value(d)))
    print(json.dumps({"instances": args.instances, "worst_gap": worst, "point_mass_gap": delta}))
    return EXIT_OK if worst <= 1e-6 and delta <= 1e-6 else EXIT_ACCEPTANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vfpns")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, eps: bool = True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (defaults to the config's output_dir)")
        if eps:
            p.add_argument("--eps", help="comma separated eps list overriding the config")
        return p

    p = common(sub.add_parser("simulate", help="one coupled run at the first eps"))
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.set_defaults(func=cmd_simulate)
    p = common(sub.add_parser("limit", help="limit system only"), eps=False)
    p.add_argument("--dt", type=float, default=None)
    p.set_defaults(func=cmd_limit)
    common(sub.add_parser("sweep", help="rate experiment over the eps list")).set_defaults(func=cmd_sweep)
    p = common(sub.add_parser("audit", help="modulated energy inequality check"))
    p.add_argument("--all", action="store_true", help="audit every eps instead of the first")
    p.set_defaults(func=cmd_audit)
    p = sub.add_parser("bl", help="BL distance between two stored density fields")
    p.add_argument("first")
    p.add_argument("second")
    p.set_defaults(func=cmd_bl)
    p = sub.add_parser("oracle", help="small-instance BL solver verification")
    p.add_argument("--instances", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (*NUMERICAL_ERRORS, AuditViolation, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ContainerError, report.ReportError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
