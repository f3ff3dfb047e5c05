"""Reporting: learning-curve aggregation, SVG charts, and a summary table.

Curves from different repetitions cover different annotated areas, so each
repetition is linearly interpolated onto a shared area grid before taking
the mean and min/max band. The summary table reports, per method and step
size, the annotated tissue percentage at which the mean curve first
reaches a target fraction of the full-annotation reference, or "/" when it
never does.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import FormatError, MetricsRecord, atomic_write_bytes, read_metrics

__all__ = [
    "CurveSummary",
    "aggregate_curves",
    "crossing_area",
    "render_chart",
    "write_report",
    "METRICS_FILE_PATTERN",
]

METRICS_FILE_PATTERN = re.compile(
    r"metrics_(?P<method>[a-z_]+)_k(?P<k>\d+)_l(?P<l>\d+)\.csv$")

_COLORS = {
    "random": "#7f7f7f",
    "standard": "#1f77b4",
    "standard_nonsquare": "#2ca02c",
    "adaptive": "#d62728",
}


@dataclass(frozen=True)
class CurveSummary:
    areas: np.ndarray
    mean: np.ndarray
    low: np.ndarray
    high: np.ndarray


def aggregate_curves(records: list[MetricsRecord]) -> CurveSummary:
    """Interpolate per-repetition curves onto a common area grid."""
    if not records:
        raise FormatError("no metrics records to aggregate")
    reps: dict[int, list[MetricsRecord]] = {}
    for r in records:
        reps.setdefault(r.repetition, []).append(r)
    curves = []
    for rows in reps.values():
        rows = sorted(rows, key=lambda r: r.cycle)
        areas = np.array([r.annotated_tissue_pct for r in rows])
        mious = np.array([r.miou_tumor for r in rows])
        curves.append((areas, mious))
    lo = max(c[0][0] for c in curves)
    hi = min(c[0][-1] for c in curves)
    grid = np.unique(np.concatenate([c[0] for c in curves]))
    grid = grid[(grid >= lo) & (grid <= hi)]
    if grid.size == 0:
        grid = np.array([lo])
    stack = np.vstack([np.interp(grid, a, m) for a, m in curves])
    return CurveSummary(grid, stack.mean(axis=0), stack.min(axis=0),
                        stack.max(axis=0))


def crossing_area(areas: np.ndarray, values: np.ndarray,
                  target: float) -> float | None:
    """First area at which the piecewise-linear curve reaches ``target``."""
    if areas.size == 0:
        return None
    if values[0] >= target:
        return float(areas[0])
    for i in range(1, len(areas)):
        if values[i] >= target:
            a0, a1 = areas[i - 1], areas[i]
            v0, v1 = values[i - 1], values[i]
            if v1 == v0:
                return float(a1)
            return float(a0 + (target - v0) * (a1 - a0) / (v1 - v0))
    return None


def _svg_path(points) -> str:
    return " ".join(f"{'M' if i == 0 else 'L'}{x:.2f},{y:.2f}"
                    for i, (x, y) in enumerate(points))


def render_chart(series: dict[str, CurveSummary], title: str,
                 reference: float | None = None) -> str:
    """Line chart with min/max bands: x annotated tissue %, y mIoU."""
    width, height = 720, 480
    ml, mr, mt, mb = 64, 24, 40, 56
    pw, ph = width - ml - mr, height - mt - mb
    x_max = max((float(s.areas.max()) for s in series.values()
                 if s.areas.size), default=1.0)
    x_max = max(x_max, 1e-9)

    def sx(a):
        return ml + pw * a / x_max

    def sy(v):
        return mt + ph * (1.0 - min(max(v, 0.0), 1.0))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{ml}" y="24" font-family="sans-serif" font-size="16">'
        f'{title}</text>',
    ]
    for i in range(6):
        v = i / 5.0
        y = sy(v)
        parts.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" '
                     f'y2="{y:.2f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{v:.1f}</text>')
    for i in range(6):
        a = x_max * i / 5.0
        x = sx(a)
        parts.append(f'<line x1="{x:.2f}" y1="{mt}" x2="{x:.2f}" '
                     f'y2="{mt + ph}" stroke="#eeeeee"/>')
        parts.append(f'<text x="{x:.2f}" y="{mt + ph + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{a:.1f}</text>')
    parts.append(f'<text x="{ml + pw / 2:.2f}" y="{height - 12}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="13">annotated tissue area (%)</text>')
    parts.append(f'<text x="16" y="{mt + ph / 2:.2f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" '
                 f'transform="rotate(-90 16 {mt + ph / 2:.2f})">'
                 f'mIoU (tumor)</text>')
    if reference is not None:
        y = sy(reference)
        parts.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" '
                     f'y2="{y:.2f}" stroke="#444444" stroke-dasharray="6,4"/>')
    for idx, (method, s) in enumerate(sorted(series.items())):
        color = _COLORS.get(method, "#000000")
        band = [(sx(a), sy(v)) for a, v in zip(s.areas, s.high)]
        band += [(sx(a), sy(v)) for a, v in zip(s.areas[::-1], s.low[::-1])]
        if len(band) >= 3:
            pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in band)
            parts.append(f'<polygon points="{pts}" fill="{color}" '
                         f'fill-opacity="0.15" stroke="none"/>')
        line = [(sx(a), sy(v)) for a, v in zip(s.areas, s.mean)]
        if len(line) == 1:
            x, y = line[0]
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" '
                         f'fill="{color}"/>')
        else:
            parts.append(f'<path d="{_svg_path(line)}" fill="none" '
                         f'stroke="{color}" stroke-width="2"/>')
        ly = mt + 16 + 16 * idx
        parts.append(f'<line x1="{ml + pw - 150}" y1="{ly}" x2="{ml + pw - 126}" '
                     f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw - 120}" y="{ly + 4}" '
                     f'font-family="sans-serif" font-size="12">{method}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _load_runs(in_dir: Path) -> dict[tuple[int, int], dict[str, CurveSummary]]:
    runs: dict[tuple[int, int], dict[str, CurveSummary]] = {}
    for path in sorted(in_dir.iterdir()):
        m = METRICS_FILE_PATTERN.match(path.name)
        if not m:
            continue
        key = (int(m.group("k")), int(m.group("l")))
        runs.setdefault(key, {})[m.group("method")] = \
            aggregate_curves(read_metrics(path))
    return runs


def _read_reference(in_dir: Path) -> float | None:
    ref_path = in_dir / "full_annotation.csv"
    if not ref_path.exists():
        return None
    lines = ref_path.read_text(encoding="utf-8").strip().splitlines()
    if len(lines) != 2 or lines[0] != "miou_tumor":
        raise FormatError(f"{ref_path}: expected a miou_tumor header and one row")
    return float(lines[1])


def write_report(in_dir, out_dir, target_fraction: float = 1.0) -> list[Path]:
    """Render one SVG per step size plus summary.csv; returns written paths."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    runs = _load_runs(in_dir)
    if not runs:
        raise FormatError(f"no metrics files found in {in_dir}")
    reference = _read_reference(in_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    methods = sorted({m for series in runs.values() for m in series})
    summary_rows = []
    for (k, l), series in sorted(runs.items()):
        chart = render_chart(series, f"step size k={k}, l={l}px", reference)
        path = out_dir / f"curves_k{k}_l{l}.svg"
        atomic_write_bytes(path, chart.encode("utf-8"))
        written.append(path)
    for method in methods:
        row = [method]
        for key in sorted(runs):
            series = runs[key]
            cell = "/"
            if method in series and reference is not None:
                s = series[method]
                hit = crossing_area(s.areas, s.mean, target_fraction * reference)
                if hit is not None:
                    cell = f"{hit:.3f}"
            row.append(cell)
        summary_rows.append(row)
    header = ["method"] + [f"k{k}_l{l}" for k, l in sorted(runs)]
    lines = [",".join(header)] + [",".join(r) for r in summary_rows]
    summary = out_dir / "summary.csv"
    atomic_write_bytes(summary, ("\n".join(lines) + "\n").encode("utf-8"))
    written.append(summary)
    return written
