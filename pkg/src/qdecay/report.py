"""Writing reports to disk: JSON, CSV tables and standalone SVG charts."""

from __future__ import annotations

import csv
import io
import math
import re
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import QDecayError
from .experiments import ExperimentReport, Table

__all__ = [
    "FORMATS",
    "OutputError",
    "emit_outputs",
    "load_report",
    "table_to_csv",
    "table_from_csv",
    "trajectory_table",
    "render_svg",
]

FORMATS = ("csv", "json", "svg", "all")


class OutputError(QDecayError, OSError):
    pass


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def table_to_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


_INT = re.compile(r"^[+-]?\d+$")
_FLOAT = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _parse(text: str):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    if _INT.match(text):
        return int(text)
    if _FLOAT.match(text):
        return float(text)
    return text


def table_from_csv(text: str) -> Table:
    rows = list(csv.reader(io.StringIO(text)))
    return Table(rows[0], [[_parse(v) for v in r] for r in rows[1:]])


def trajectory_table(traj, components: bool = False) -> Table:
    """Per-step table ``t, eta[, sup_error][, q_0 .. q_{D-1}]`` for one trajectory.

    With ``components`` only the steps whose iterates were recorded appear.
    """
    cols = ["t", "eta"]
    has_err = traj.errors is not None
    if has_err:
        cols.append("sup_error")
    first = 1
    if components:
        if traj.iterates is None:
            raise ValueError("trajectory has no recorded iterates")
        first = traj.first_index
        cols += [f"q_{d}" for d in range(traj.iterates.shape[-1])]
    table = Table(cols)
    for t in range(first, traj.steps + 1):
        row = [t, float(traj.etas[t - 1])]
        if has_err:
            row.append(float(traj.errors[t]))
        if components:
            row += [float(v) for v in traj.iterates[t - first]]
        table.add(*row)
    return table


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def emit_outputs(report: ExperimentReport, directory, formats: str = "all") -> list[Path]:
    """Write ``report.json``, one CSV per table and one SVG per figure."""
    if formats not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    if formats in ("json", "all"):
        path = out / "report.json"
        _write(path, report.to_json())
        written.append(path)
    if formats in ("csv", "all"):
        for name, table in report.tables.items():
            path = out / f"{name}.csv"
            _write(path, table_to_csv(table))
            written.append(path)
    if formats in ("svg", "all"):
        for fig in report.figures:
            path = out / f"{fig['name']}.svg"
            _write(path, render_svg(report.tables[fig["table"]], fig))
            written.append(path)
    return written


def load_report(directory_or_file) -> ExperimentReport:
    path = Path(directory_or_file)
    if path.is_dir():
        path = path / "report.json"
    try:
        return ExperimentReport.from_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# SVG

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
_W, _H = 640, 420
_MARGIN = (70, 20, 30, 50)  # left, right, top, bottom


def _fmt(v: float) -> str:
    return format(v, ".4g")


class _Axis:
    def __init__(self, lo, hi, log, start, end):
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        pad = 0.03 * (hi - lo)
        self.lo, self.hi, self.log = lo - pad, hi + pad, log
        self.start, self.end = start, end

    def __call__(self, v):
        if self.log:
            v = math.log10(v)
        return self.start + (v - self.lo) / (self.hi - self.lo) * (self.end - self.start)

    def ticks(self, k=5):
        vals = [self.lo + (self.hi - self.lo) * i / (k - 1) for i in range(k)]
        return [(10**v if self.log else v) for v in vals]


def _usable(v, log):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and (v > 0 or not log)


def render_svg(table: Table, fig: dict) -> str:
    """Line chart (optionally with a +/- band) or scatter plot as SVG 1.1 text."""
    x, y = fig["x"], fig["y"]
    band, group = fig.get("band"), fig.get("group")
    logx, logy = bool(fig.get("logx")), bool(fig.get("logy"))
    groups: dict = {}
    for r in table.rows:
        rec = dict(zip(table.columns, r))
        xv, yv = rec[x], rec[y]
        if not (_usable(xv, logx) and _usable(yv, logy)):
            continue
        s = rec[band] if band and _usable(rec.get(band), False) else 0.0
        groups.setdefault(str(rec[group]) if group else y, []).append((float(xv), float(yv), float(s)))

    # y extent includes bands, clipped to positive values on log axes
    xs = [p[0] for pts in groups.values() for p in pts] or [0.0, 1.0]
    ys = []
    for pts in groups.values():
        for _, yv, s in pts:
            ys.append(yv + s)
            lo = yv - s
            ys.append(lo if (lo > 0 or not logy) else yv)
    ys = ys or [0.0, 1.0]
    left, right, top, bottom = _MARGIN
    xa = _Axis(min(xs), max(xs), logx, left, _W - right)
    ya = _Axis(min(ys), max(ys), logy, _H - bottom, top)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<title>{escape(fig.get("title", fig["name"]))}</title>',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{_W - left - right}" height="{_H - top - bottom}" '
        'fill="none" stroke="#444" stroke-width="1"/>',
    ]
    for tv in xa.ticks():
        px = xa(tv)
        parts.append(f'<line x1="{px:.2f}" y1="{_H - bottom}" x2="{px:.2f}" y2="{_H - bottom + 5}" stroke="#444"/>')
        parts.append(f'<text x="{px:.2f}" y="{_H - bottom + 18}" font-size="11" text-anchor="middle">{_fmt(tv)}</text>')
    for tv in ya.ticks():
        py = ya(tv)
        parts.append(f'<line x1="{left - 5}" y1="{py:.2f}" x2="{left}" y2="{py:.2f}" stroke="#444"/>')
        parts.append(f'<text x="{left - 8}" y="{py + 4:.2f}" font-size="11" text-anchor="end">{_fmt(tv)}</text>')
    parts.append(f'<text x="{(left + _W - right) / 2}" y="{_H - 8}" font-size="12" text-anchor="middle">'
                 f'{escape(x)}</text>')
    parts.append(f'<text x="14" y="{(top + _H - bottom) / 2}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 14 {(top + _H - bottom) / 2})">{escape(y)}</text>')

    if fig.get("diagonal"):
        lo = max(min(xs), min(ys))
        hi = min(max(xs), max(ys))
        if hi > lo:
            parts.append(f'<line x1="{xa(lo):.2f}" y1="{ya(lo):.2f}" x2="{xa(hi):.2f}" y2="{ya(hi):.2f}" '
                         'stroke="#888" stroke-dasharray="4 3"/>')

    for i, (name, pts) in enumerate(groups.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = sorted(pts) if fig["type"] == "line" else pts
        if fig["type"] == "line":
            if band and any(s > 0 for _, _, s in pts):
                upper = [(xa(a), ya(b + s)) for a, b, s in pts]
                lower = [(xa(a), ya(b - s if (b - s > 0 or not logy) else b)) for a, b, s in reversed(pts)]
                poly = " ".join(f"{px:.2f},{py:.2f}" for px, py in upper + lower)
                parts.append(f'<polygon points="{poly}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
            line = " ".join(f"{xa(a):.2f},{ya(b):.2f}" for a, b, _ in pts)
            parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        else:
            for a, b, _ in pts:
                parts.append(f'<circle cx="{xa(a):.2f}" cy="{ya(b):.2f}" r="2" fill="{color}" fill-opacity="0.7"/>')
        ly = top + 14 + 15 * i
        parts.append(f'<rect x="{left + 10}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{left + 25}" y="{ly}" font-size="11">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
