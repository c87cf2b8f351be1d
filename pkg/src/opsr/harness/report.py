"""Write experiment reports as CSV, JSON and SVG."""
from __future__ import annotations

import csv
import io
import os
from xml.sax.saxutils import escape

import numpy as np

from opsr.harness.protocol import AGENTS, ExperimentReport

CURVES_HEADER = ("task_id", "seed", "agent", "episode", "return", "steps")
AURC_HEADER = ("task_id", "seed", "agent", "aurc", "aurc_normalized")
OCCUPANCY_HEADER = ("timestep", "controller", "count", "alive")
FORMATS = ("csv", "json", "svg")
COLORS = {"primitive": "#1f77b4", "options": "#d62728"}


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def curve_bands(report: ExperimentReport) -> dict:
    """agent -> (mean, min, max) per episode over every (task, seed) run."""
    per = {}
    for tid, seed, agent, ep, ret, _ in report.curves:
        per.setdefault(agent, {}).setdefault((tid, seed), {})[int(ep)] = float(ret)
    out = {}
    for agent, runs in per.items():
        n_ep = max(max(r) for r in runs.values()) + 1
        mat = np.full((len(runs), n_ep), np.nan)
        for i, key in enumerate(sorted(runs)):
            for ep, v in runs[key].items():
                mat[i, ep] = v
        out[agent] = (np.nanmean(mat, axis=0), np.nanmin(mat, axis=0), np.nanmax(mat, axis=0))
    return out


def curves_svg(report: ExperimentReport, width: int = 640, height: int = 400) -> str:
    """Mean learning curve per agent with a shaded min/max band."""
    bands = curve_bands(report)
    pad = 50
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if bands:
        n_ep = max(len(m) for m, _, _ in bands.values())
        lo = min(float(np.min(b[1])) for b in bands.values())
        hi = max(float(np.max(b[2])) for b in bands.values())
        if hi == lo:
            hi = lo + 1.0

        def px(i):
            return pad + (width - 2 * pad) * (i / max(n_ep - 1, 1))

        def py(v):
            return height - pad - (height - 2 * pad) * ((v - lo) / (hi - lo))

        parts.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>')
        parts.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>')
        parts.append(f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle" font-size="12">episode</text>')
        parts.append(f'<text x="{pad}" y="{pad - 10}" font-size="12">return [{lo:.1f}, {hi:.1f}]</text>')
        for k, agent in enumerate(a for a in AGENTS if a in bands):
            mean, mn, mx = bands[agent]
            color = COLORS.get(agent, "#444444")
            upper = " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(mx))
            lower = " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in reversed(list(enumerate(mn))))
            parts.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
            line = " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(mean))
            parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            parts.append(f'<text x="{width - pad - 100}" y="{pad + 15 * (k + 1)}" font-size="12" fill="{color}">{escape(agent)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json", "svg")) -> list:
    """Write the requested formats into ``out_dir``; returns the written paths."""
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ValueError(f"unknown report formats: {sorted(bad)}")
    files = {}
    if "csv" in formats:
        files["curves.csv"] = _csv(CURVES_HEADER, report.curves)
        files["aurc.csv"] = _csv(AURC_HEADER, report.aurc)
        files["occupancy.csv"] = _csv(OCCUPANCY_HEADER, report.occupancy)
    if "json" in formats:
        files["report.json"] = report.dumps() + "\n"
    if "svg" in formats:
        files["curves.svg"] = curves_svg(report)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc
    written = []
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def load_report(in_dir) -> ExperimentReport:
    with open(os.path.join(in_dir, "report.json"), encoding="utf-8") as fh:
        return ExperimentReport.loads(fh.read())
