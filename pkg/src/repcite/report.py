"""Posterior summaries: forest rows, citation-style profiles, Bayesian R²,
and their CSV/SVG renderings.

The CSV files are the source of truth. SVG files are drawn from the same
rows and format every data number with :func:`fmt`, so each number shown
in a figure also appears verbatim in the sibling CSV. Axis tick labels
(class ``tick``) are decoration and are not part of that contract.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from repcite.model import SCIENCE, ModelConfig, PaperRecord, _features, _group_index

STYLE_THRESHOLD = 0.005
MIN_DRAWS = 40
R2_DEFINITION = (
    "squared Pearson correlation, over all observed (paper, year) cells, between observed counts "
    "and posterior-mean expected counts (1 - gate_i) * mu_i * sum_k omega[r_i][k] * base_k^max(t - shift_k, 0); "
    "per-year cells, not per-paper totals"
)


def fmt(x: float) -> str:
    """Shared number format for CSV and SVG output."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.6g}"


@dataclass(frozen=True)
class ForestRow:
    label: str
    mean: float
    lo: float
    hi: float

    def __post_init__(self):
        # a tiny tolerance absorbs rounding for constant columns
        tol = 1e-12 * max(1.0, abs(self.mean))
        if not (self.lo - tol <= self.mean <= self.hi + tol):
            raise ValueError(f"{self.label}: mean {self.mean} outside [{self.lo}, {self.hi}]")

    @property
    def excludes_zero(self) -> int:
        """+1 if the interval is strictly positive, -1 if strictly negative, else 0."""
        return 1 if self.lo > 0 else (-1 if self.hi < 0 else 0)


def interval(x: np.ndarray, level: float = 0.95) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=float)
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(x, [a, 1.0 - a])
    mean = float(x.mean())
    # quantile interpolation can land a hair inside a constant column's mean
    return mean, float(min(lo, mean)), float(max(hi, mean))


def summarize(pd, labels: Sequence[str] | Mapping[str, str], level: float = 0.95) -> list[ForestRow]:
    """Posterior mean and central interval for each named parameter.

    ``labels`` is a list of column names or a mapping column -> display label.
    """
    if len(pd.values) < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} retained draws, have {len(pd.values)}")
    mapping = dict(labels) if isinstance(labels, Mapping) else {n: n for n in labels}
    missing = [n for n in mapping if n not in pd.names]
    if missing:
        raise KeyError(f"unknown parameter(s) {', '.join(missing)}; available: {', '.join(pd.names)}")
    return [ForestRow(label, *interval(pd.column(name), level)) for name, label in mapping.items()]


@dataclass
class StyleProfile:
    k: int
    omega_S: tuple[float, float, float]
    omega_F: tuple[float, float, float]
    base: tuple[float, float, float]
    shift: tuple[float, float, float]
    trajectory: np.ndarray  # T x 3: mean, lo, hi of the log multiplier


def style_trajectories(base: np.ndarray, shift: np.ndarray, T: int) -> np.ndarray:
    """Per-draw log multipliers max(t - shift, 0) * log(base), draws x T."""
    t = np.arange(T, dtype=float)
    return np.maximum(t[None, :] - shift[:, None], 0.0) * np.log(base)[:, None]


def style_profiles(pd, cfg: ModelConfig, threshold: float = STYLE_THRESHOLD, level: float = 0.95) -> list[StyleProfile]:
    """Profiles of styles whose mean weight exceeds ``threshold`` in either
    population, sorted by style index."""
    out = []
    for k in range(cfg.K):
        ws, wf = pd.column(f"omega_S[{k}]"), pd.column(f"omega_F[{k}]")
        if max(ws.mean(), wf.mean()) <= threshold:
            continue
        base, shift = pd.column(f"base[{k}]"), pd.column(f"shift[{k}]")
        traj = style_trajectories(base, shift, cfg.T)
        steps = np.diff(traj, axis=1)
        up, down = base > 1, base < 1
        if np.any(steps[up] < -1e-12) or np.any(steps[down] > 1e-12):
            raise AssertionError(f"style {k}: trajectory not monotone in t")
        band = np.array([interval(traj[:, t], level) for t in range(cfg.T)])
        out.append(StyleProfile(k, interval(ws, level), interval(wf, level), interval(base, level), interval(shift, level), band))
    return out


@dataclass
class R2Result:
    value: float
    defined: bool
    n_cells: int
    definition: str = R2_DEFINITION
    notes: list[str] = field(default_factory=list)

    def metadata(self) -> dict:
        return {
            "r2": None if not self.defined else self.value,
            "defined": self.defined,
            "n_cells": self.n_cells,
            "definition": self.definition,
            "notes": self.notes,
        }


def r2_score(pred: np.ndarray, obs: np.ndarray) -> R2Result:
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.size < 2 or np.ptp(pred) == 0 or np.ptp(obs) == 0:
        return R2Result(math.nan, False, int(pred.size), notes=["zero-variance predictions or observations; R2 undefined"])
    r = np.corrcoef(pred, obs)[0, 1]
    return R2Result(float(r * r), True, int(pred.size))


def expected_counts(pd, data: Sequence[PaperRecord], cfg: ModelConfig, max_draws: int = 1000) -> np.ndarray:
    """Posterior-mean expected count for every observed cell, in
    paper-major order."""
    data = list(data)
    K, T = cfg.K, cfg.T
    rows = np.linspace(0, len(pd.values) - 1, min(max_draws, len(pd.values))).astype(int)
    V = pd.values[rows]
    col = pd.index

    def block(prefix, keys):
        return V[:, [col(f"{prefix}[{k}]") for k in keys]]

    ws, wf = block("omega_S", range(K)), block("omega_F", range(K))
    base, shift = block("base", range(K)), block("shift", range(K))
    gate = block("gate", [r.id for r in data])
    t = np.arange(T, dtype=float)
    # D x K x T multipliers
    mult = np.exp(np.maximum(t[None, None, :] - shift[:, :, None], 0.0) * np.log(base)[:, :, None])
    if cfg.variant == SCIENCE:
        beta = block("beta", cfg.groups)
        bias = block("bias", cfg.groups)
        f = np.array([_group_index(r, cfg) for r in data])
        s = np.array([float(r.reproduced) for r in data])
        log_mu = beta[:, f] * s[None, :] + bias[:, f]
    else:
        beta = block("beta", cfg.groups)
        X = np.array([_features(r, cfg) for r in data])
        log_mu = beta @ X.T + V[:, [col("bias")]]
    succ = np.array([r.reproduced for r in data])
    pred = []
    for i, rec in enumerate(data):
        w = ws if succ[i] else wf
        traj = np.einsum("dk,dkt->dt", w, mult)  # D x T
        cell = (1.0 - gate[:, i])[:, None] * np.exp(log_mu[:, i])[:, None] * traj
        pred.append(cell.mean(axis=0)[rec.observed[:T]])
    return np.concatenate(pred) if pred else np.zeros(0)


def bayes_r2(pd, data: Sequence[PaperRecord], cfg: ModelConfig) -> R2Result:
    """R² of posterior-mean cell predictions; see ``R2_DEFINITION``."""
    data = list(data)
    pred = expected_counts(pd, data, cfg)
    obs = np.concatenate([r.counts[: cfg.T][r.observed[: cfg.T]] for r in data]).astype(float)
    return r2_score(pred, obs)


# -- CSV ---------------------------------------------------------------------


def _open_for_write(path):
    path = Path(path)
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_forest_csv(rows: Sequence[ForestRow], path) -> None:
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "mean", "lo", "hi"])
        for r in rows:
            w.writerow([r.label, fmt(r.mean), fmt(r.lo), fmt(r.hi)])


def emit_styles_csv(profiles: Sequence[StyleProfile], weights_path, trajectories_path) -> None:
    with _open_for_write(weights_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["style", "omega_S_mean", "omega_S_lo", "omega_S_hi", "omega_F_mean", "omega_F_lo", "omega_F_hi",
                    "base_mean", "shift_mean"])
        for p in profiles:
            w.writerow([p.k, *map(fmt, p.omega_S), *map(fmt, p.omega_F), fmt(p.base[0]), fmt(p.shift[0])])
    with _open_for_write(trajectories_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["style", "t", "mean", "lo", "hi"])
        for p in profiles:
            for t, (m, lo, hi) in enumerate(p.trajectory):
                w.writerow([p.k, t, fmt(m), fmt(lo), fmt(hi)])


# -- SVG ---------------------------------------------------------------------

_SVG_HEAD = '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\n'
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22")


def _svg(width, height, body: list[str]) -> str:
    return (
        _SVG_HEAD
        + f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        + f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + j * step for j in range(int((hi - start) / step + 1e-9) + 1)]


def _write(path, text: str) -> None:
    with _open_for_write(path) as fh:
        fh.write(text)


def forest_svg(rows: Sequence[ForestRow], title: str = "", xlabel: str = "coefficient") -> str:
    """Horizontal interval plot with a dashed zero reference line."""
    left, right, top, row_h = 200, 40, 40, 26
    plot_w = 420
    height = top + max(len(rows), 2) * row_h + 60
    width = left + plot_w + right
    body = [f'<text x="{width / 2}" y="20" text-anchor="middle" font-weight="bold">{escape(title)}</text>']
    lo = min([r.lo for r in rows] + [0.0])
    hi = max([r.hi for r in rows] + [0.0])
    pad = 0.05 * (hi - lo or 1.0)
    lo, hi = lo - pad, hi + pad

    def x(v):
        return left + (v - lo) / (hi - lo) * plot_w

    y_axis = height - 40
    body.append(f'<line x1="{left}" y1="{y_axis}" x2="{left + plot_w}" y2="{y_axis}" stroke="black"/>')
    for tv in _nice_ticks(lo, hi):
        body.append(f'<line x1="{x(tv):.2f}" y1="{y_axis}" x2="{x(tv):.2f}" y2="{y_axis + 5}" stroke="black"/>')
        body.append(f'<text class="tick" x="{x(tv):.2f}" y="{y_axis + 18}" text-anchor="middle">{tv:g}</text>')
    body.append(f'<text x="{left + plot_w / 2}" y="{height - 5}" text-anchor="middle">{escape(xlabel)}</text>')
    body.append(
        f'<line class="zero" x1="{x(0.0):.2f}" y1="{top - 10}" x2="{x(0.0):.2f}" y2="{y_axis}" '
        'stroke="gray" stroke-dasharray="4,3"/>'
    )
    if not rows:
        body.append(f'<text class="no-data" x="{left + plot_w / 2}" y="{top + row_h}" text-anchor="middle">no data</text>')
    for j, r in enumerate(rows):
        yy = top + j * row_h + row_h / 2
        body.append(f'<text x="{left - 8}" y="{yy + 4}" text-anchor="end">{escape(r.label)}</text>')
        body.append(
            f'<g class="interval" data-mean="{fmt(r.mean)}" data-lo="{fmt(r.lo)}" data-hi="{fmt(r.hi)}">'
            f"<title>{escape(r.label)}: {fmt(r.mean)} [{fmt(r.lo)}, {fmt(r.hi)}]</title>"
            f'<line x1="{x(r.lo):.2f}" y1="{yy}" x2="{x(r.hi):.2f}" y2="{yy}" stroke="black" stroke-width="2"/>'
            f'<circle cx="{x(r.mean):.2f}" cy="{yy}" r="4" fill="black"/></g>'
        )
    return _svg(width, height, body)


def symlog(y, linthresh: float = 1.0):
    """Symmetric log scale: linear inside [-linthresh, linthresh]."""
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    return np.where(a <= linthresh, y, np.sign(y) * linthresh * (1.0 + np.log10(np.maximum(a, linthresh) / linthresh)))


def styles_svg(profiles: Sequence[StyleProfile], T: int, title: str = "") -> str:
    """One polyline per style: posterior-mean log multiplier over years on a
    symmetric-log axis."""
    left, right, top, bottom = 70, 120, 40, 50
    plot_w, plot_h = 440, 300
    width, height = left + plot_w + right, top + plot_h + bottom
    means = [p.trajectory[:, 0] for p in profiles]
    vals = symlog(np.concatenate(means)) if means else np.zeros(1)
    lo, hi = min(float(vals.min()), 0.0), max(float(vals.max()), 0.0)
    if hi - lo < 1e-9:
        lo, hi = -1.0, 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def px(t):
        return left + (t / max(T - 1, 1)) * plot_w

    def py(v):
        return top + (hi - float(symlog(v))) / (hi - lo) * plot_h

    body = [f'<text x="{width / 2}" y="20" text-anchor="middle" font-weight="bold">{escape(title)}</text>']
    body.append(f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>')
    body.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>')
    for t in range(T):
        body.append(f'<text class="tick" x="{px(t):.2f}" y="{top + plot_h + 16}" text-anchor="middle">{t}</text>')
    for tv in (-100, -10, -1, 0, 1, 10, 100):
        sv = float(symlog(tv))
        if lo <= sv <= hi:
            body.append(f'<text class="tick" x="{left - 6}" y="{py(tv) + 4:.2f}" text-anchor="end">{tv}</text>')
    body.append(f'<text x="{left + plot_w / 2}" y="{height - 8}" text-anchor="middle">years since publication</text>')
    body.append(
        f'<text x="16" y="{top + plot_h / 2}" text-anchor="middle" transform="rotate(-90 16 {top + plot_h / 2})">'
        "log rate multiplier (symlog)</text>"
    )
    if not profiles:
        body.append(f'<text class="no-data" x="{left + plot_w / 2}" y="{top + plot_h / 2}" text-anchor="middle">no data</text>')
    for j, p in enumerate(profiles):
        color = _PALETTE[j % len(_PALETTE)]
        pts = " ".join(f"{px(t):.2f},{py(m):.2f}" for t, m in enumerate(p.trajectory[:, 0]))
        vals = " ".join(fmt(m) for m in p.trajectory[:, 0])
        body.append(
            f'<polyline class="trajectory" data-style="{p.k}" data-values="{vals}" points="{pts}" '
            f'fill="none" stroke="{color}" stroke-width="2"><title>style {p.k}</title></polyline>'
        )
        body.append(f'<text x="{left + plot_w + 8}" y="{top + 14 * j + 10}" fill="{color}">style {p.k}</text>')
    return _svg(width, height, body)


def emit_forest(rows: Sequence[ForestRow], svg_path, csv_path, title: str = "", xlabel: str = "coefficient") -> None:
    emit_forest_csv(rows, csv_path)
    _write(svg_path, forest_svg(rows, title, xlabel))


def emit_styles(profiles: Sequence[StyleProfile], T: int, svg_path, weights_csv, trajectories_csv, title: str = "") -> None:
    emit_styles_csv(profiles, weights_csv, trajectories_csv)
    _write(svg_path, styles_svg(profiles, T, title))
