"""CSV, JSON and SVG output for sweeps and single runs."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

from ..entropy import DiagnosticsRecord

RATE_COLUMNS = [
    "eps",
    "dt",
    "n_steps",
    "E0",
    "E1",
    "E0_outer",
    "E1_outer",
    "sup_l1_rho",
    "sup_l2_v",
    "int_grad_v_sq",
    "flux_l1",
    "sup_bl_rho",
    "int_bl_f_sq",
    "modulated_kinetic_integral",
    "energy_worst_excess",
    "audit_worst_slack",
    "clipped_mass",
]
AUDIT_COLUMNS = ["t", "lhs", "rhs", "slack", "rhs_flipped", "modulated", "modulated_kinetic_integral"]
PLOT_SERIES = (("E0", "E0"), ("E1", "E1"), ("sup_bl_rho", "D"))


class ReportError(IOError):
    pass


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, str)):
        return str(value)
    return repr(float(value))


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {str(key): _clean(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(item) for item in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(val) for val in row])
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return path


def write_json(path: Path, payload) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_clean(payload), indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return path


def write_records(out_dir: Path, tag: str, records: list[DiagnosticsRecord]) -> list[Path]:
    """Diagnostics as CSV with a header row plus a JSON-lines mirror."""
    cols = DiagnosticsRecord.columns()
    csv_path = write_csv(out_dir / f"records_{tag}.csv", cols, [r.as_row() for r in records])
    jl = out_dir / f"records_{tag}.jsonl"
    try:
        with open(jl, "w") as fh:
            for r in records:
                fh.write(json.dumps(_clean(dict(zip(cols, r.as_row()))), sort_keys=True) + "\n")
    except OSError as exc:
        raise ReportError(f"cannot write {jl}: {exc}") from exc
    return [csv_path, jl]


def write_audit(out_dir: Path, tag: str, rows) -> Path:
    return write_csv(out_dir / f"audit_{tag}.csv", AUDIT_COLUMNS, [[getattr(r, c) for c in AUDIT_COLUMNS] for r in rows])


def eps_tag(eps: float) -> str:
    return f"eps{eps:g}"


# ------------------------------------------------------------------- svg


def loglog_svg(series: dict[str, list[tuple[float, float]]], fits: dict[str, tuple[float, float]], title: str) -> str:
    """Log-log plot: one polyline per series, fitted lines drawn as ``line`` elements."""
    width, height, pad = 480, 360, 50
    pts = [(x, y) for s in series.values() for x, y in s if x > 0 and y > 0]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f"<title>{escape(title)}</title>",
        f'<rect x="{pad}" y="{pad // 2}" width="{width - 1.5 * pad:g}" height="{height - 1.5 * pad:g}" fill="none" stroke="black"/>',
    ]
    if pts:
        lx = [math.log10(x) for x, _ in pts]
        ly = [math.log10(y) for _, y in pts]
        x0, x1 = min(lx) - 0.1, max(lx) + 0.1
        y0, y1 = min(ly) - 0.2, max(ly) + 0.2

        def sx(val: float) -> float:
            return pad + (val - x0) / (x1 - x0) * (width - 1.5 * pad)

        def sy(val: float) -> float:
            return height - pad + (val - y0) / (y1 - y0) * -(height - 1.5 * pad)

        colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
        for idx, (name, data) in enumerate(series.items()):
            color = colors[idx % len(colors)]
            good = [(x, y) for x, y in data if x > 0 and y > 0]
            coords = " ".join(f"{sx(math.log10(x)):.2f},{sy(math.log10(y)):.2f}" for x, y in good)
            parts.append(f'<polyline data-series="{escape(name)}" points="{coords}" fill="none" stroke="{color}"/>')
            if name in fits:
                slope, intercept = fits[name]
                a, b = x0 + 0.1, x1 - 0.1
                ya = (intercept + slope * a * math.log(10)) / math.log(10)
                yb = (intercept + slope * b * math.log(10)) / math.log(10)
                parts.append(
                    f'<line data-fit="{escape(name)}" x1="{sx(a):.2f}" y1="{sy(ya):.2f}" x2="{sx(b):.2f}" '
                    f'y2="{sy(yb):.2f}" stroke="{color}" stroke-dasharray="4 3"/>'
                )
            parts.append(
                f'<text x="{width - pad - 60}" y="{pad + 14 * (idx + 1)}" fill="{color}" font-size="12">'
                f"{escape(name)}</text>"
            )
    parts.append(f'<text x="{width / 2:g}" y="{height - 12}" font-size="12" text-anchor="middle">log10 eps</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ----------------------------------------------------------------- sweep


def emit_report(sweep, out_dir: str | Path) -> list[Path]:
    """Write rate tables, per-run records, audit rows, a JSON summary and SVG plots."""
    out = Path(out_dir)
    written: list[Path] = []
    runs = list(getattr(sweep, "runs", []) or [])
    rows = []
    for r in runs:
        row = []
        for col in RATE_COLUMNS:
            if col in ("eps", "dt", "n_steps", "clipped_mass"):
                row.append({"eps": r.eps, "dt": r.dt, "n_steps": r.n_steps, "clipped_mass": r.clipped_mass}[col])
            else:
                row.append(r.metrics.get(col, float("nan")))
        rows.append(row)
    written.append(write_csv(out / "rates.csv", RATE_COLUMNS, rows))
    fit_rows = [[name, fit.slope, fit.intercept, fit.residual, fit.points_used] for name, fit in sorted(sweep.fits.items())] if runs else []
    written.append(write_csv(out / "fits.csv", ["metric", "slope", "intercept", "residual", "points"], fit_rows))
    for r in runs:
        tag = eps_tag(r.eps)
        written.extend(write_records(out, tag, r.records))
        if r.audit_rows:
            written.append(write_audit(out, tag, r.audit_rows))
    summary = {
        "entries": len(runs),
        "eps": [r.eps for r in runs],
        "fits": {key: fit.as_dict() for key, fit in sorted(sweep.fits.items())} if runs else {},
        "constants": dict(sweep.constants) if runs else {},
        "acceptance": dict(sweep.acceptance) if runs else {},
        "limit": {key: val for key, val in (sweep.limit_summary or {}).items() if key != "records"},
        "config": sweep.config.to_dict() if getattr(sweep, "config", None) is not None else None,
    }
    written.append(write_json(out / "summary.json", summary))
    series = {label: [(r.eps, r.metrics.get(key, float("nan"))) for r in runs] for key, label in PLOT_SERIES} if runs else {}
    fits = {label: (sweep.fits[key].slope, sweep.fits[key].intercept) for key, label in PLOT_SERIES if key in sweep.fits}
    svg = out / "rates.svg"
    try:
        svg.write_text(loglog_svg(series, fits, "error versus eps"))
    except OSError as exc:
        raise ReportError(f"cannot write {svg}: {exc}") from exc
    written.append(svg)
    return written


def svg_polyline_count(text: str) -> dict[str, int]:
    """Minimal structural check: polylines per ``data-series`` label."""
    import xml.etree.ElementTree as ET

    root = ET.fromstring(text)
    if not root.tag.endswith("svg"):
        raise ValueError("root element is not svg")
    counts: dict[str, int] = {}
    for el in root.iter():
        if el.tag.endswith("polyline"):
            name = el.attrib.get("data-series", "")
            counts[name] = counts.get(name, 0) + 1
    return counts
