"""Run records, ``metrics.csv`` and static SVG line charts.

``metrics.csv`` columns, in this order (one row per evaluation):

=======================  ===========================================================
env_steps                environment steps summed over actors at evaluation time
mean_return              mean undiscounted extrinsic return of the greedy evaluator
median_return            median of the same returns
mean_episode_length      mean evaluator episode length
steps_to_first_reward    env step of the first positive extrinsic reward seen by
                         any actor (``nan`` until it happens)
steps_to_first_goal      env step at which any actor first reached the goal
extra_action_usage       fraction of evaluator steps where the extra action was the
                         greedy choice (0 without an extra action); the usage chart
                         adds a 20-point moving average
flight_step_fraction     fraction of actor steps since the previous row spent in flights
state_coverage           mean number of distinct states per evaluator episode
mean_rnd_error           mean RND prediction error over the states visited by the
                         evaluator (``nan`` outside RND-based pre-training)
wall_time                seconds since the run started (excluded from equality)
=======================  ===========================================================

``episodes.csv`` (when present) logs one row per actor episode:
``episode_id, actor, eps, eps_levy, return, length, flight_steps, flights,
extra_action_steps``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

USAGE_WINDOW = 20


@dataclass
class EvalRow:
    env_steps: int
    mean_return: float
    median_return: float
    mean_episode_length: float
    steps_to_first_reward: float
    steps_to_first_goal: float
    extra_action_usage: float
    flight_step_fraction: float
    state_coverage: float
    mean_rnd_error: float = math.nan
    wall_time: float = field(default=0.0, compare=False)

    def __eq__(self, other):
        if not isinstance(other, EvalRow):
            return NotImplemented
        for f in fields(self):
            if not f.compare:
                continue
            a, b = getattr(self, f.name), getattr(other, f.name)
            if not (a == b or (isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b))):
                return False
        return True


COLUMNS = tuple(f.name for f in fields(EvalRow))


@dataclass
class EpisodeLog:
    episode_id: int
    actor: int
    eps: float
    eps_levy: float
    ret: float
    length: int
    flight_steps: int
    flights: int
    extra_action_steps: int


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    episodes: list = field(default_factory=list, compare=False)
    info: dict = field(default_factory=dict, compare=False)

    def add(self, row: EvalRow) -> None:
        if self.rows and row.env_steps <= self.rows[-1].env_steps:
            raise ValueError("evaluation rows must be strictly increasing in env_steps")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def final_return(self) -> float:
        return self.rows[-1].mean_return if self.rows else math.nan


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    # shortest repr that round-trips exactly
    return repr(v)


def metrics_csv(run: RunRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in run.rows:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def episodes_csv(run: RunRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = ["episode_id", "actor", "eps", "eps_levy", "return", "length", "flight_steps", "flights", "extra_action_steps"]
    w.writerow(names)
    for e in run.episodes:
        d = asdict(e)
        w.writerow([_fmt(d["ret"] if n == "return" else d[n]) for n in names])
    return buf.getvalue()


def read_metrics_csv(path) -> RunRecord:
    run = RunRecord()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {c: float(row[c]) for c in COLUMNS if c in row}
            vals["env_steps"] = int(vals["env_steps"])
            run.rows.append(EvalRow(**vals))
    return run


def moving_average(x: np.ndarray, window: int = USAGE_WINDOW) -> np.ndarray:
    """Trailing mean over up to ``window`` points (shorter at the start)."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


# --- SVG ------------------------------------------------------------------------

_W, _H, _PAD = 640, 400, 56
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def svg_line_chart(title: str, series: Sequence[tuple], x_label: str = "env_steps") -> str:
    """``series`` is a list of ``(label, xs, ys)``; non-finite points are skipped."""
    pts = []
    for _, xs, ys in series:
        x, y = np.asarray(xs, float), np.asarray(ys, float)
        keep = np.isfinite(x) & np.isfinite(y)
        pts.append((x[keep], y[keep]))
    all_x = np.concatenate([p[0] for p in pts] + [np.empty(0)])
    all_y = np.concatenate([p[1] for p in pts] + [np.empty(0)])
    x0, x1 = (float(all_x.min()), float(all_x.max())) if all_x.size else (0.0, 1.0)
    y0, y1 = (float(all_y.min()), float(all_y.max())) if all_y.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(v):
        return _PAD + (v - x0) / (x1 - x0) * (_W - 2 * _PAD)

    def sy(v):
        return _H - _PAD - (v - y0) / (y1 - y0) * (_H - 2 * _PAD)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{_esc(title)}</text>',
        f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<text x="{_W / 2:.1f}" y="{_H - 14}" text-anchor="middle" font-family="sans-serif" font-size="12">{_esc(x_label)}</text>',
        f'<text x="{_PAD}" y="{_H - _PAD + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{_fmt(x0)}</text>',
        f'<text x="{_W - _PAD}" y="{_H - _PAD + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{_fmt(x1)}</text>',
        f'<text x="{_PAD - 6}" y="{_H - _PAD}" text-anchor="end" font-family="sans-serif" font-size="10">{_fmt(y0)}</text>',
        f'<text x="{_PAD - 6}" y="{_PAD + 4}" text-anchor="end" font-family="sans-serif" font-size="10">{_fmt(y1)}</text>',
    ]
    for i, ((label, _, _), (x, y)) in enumerate(zip(series, pts)):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"><title>{_esc(label)}</title></polyline>')
        out.append(
            f'<text x="{_W - _PAD + 4}" y="{_PAD + 14 * i}" font-family="sans-serif" font-size="10" fill="{color}">{_esc(label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def metric_series(runs: Sequence[tuple], metric: str) -> list[tuple]:
    """Series for one metric over several ``(label, RunRecord)`` pairs."""
    series = []
    for label, run in runs:
        x, y = run.column("env_steps"), run.column(metric)
        series.append((label, x, y))
        if metric == "extra_action_usage":
            series.append((f"{label} (moving avg {USAGE_WINDOW})", x, moving_average(y)))
    return series


def emit_metrics(run: RunRecord, out_dir, label: str = "run") -> list[Path]:
    """Write ``metrics.csv`` (+ ``episodes.csv``) and one SVG per metric."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.csv"]
    written[0].write_text(metrics_csv(run))
    if run.episodes:
        p = out / "episodes.csv"
        p.write_text(episodes_csv(run))
        written.append(p)
    written += emit_charts([(label, run)], out)
    return written


def emit_charts(runs: Sequence[tuple], out_dir, metrics: Optional[Sequence[str]] = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in metrics or [c for c in COLUMNS if c != "env_steps"]:
        p = out / f"{metric}.svg"
        p.write_text(svg_line_chart(metric, metric_series(runs, metric)))
        paths.append(p)
    return paths
