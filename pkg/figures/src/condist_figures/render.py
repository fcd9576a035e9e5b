"""Renderers for the seven figure kinds.

Input schemas (CSV with header; extra columns are ignored):

    scatter       x, y                    point cloud (data or atoms)
    trajectories  x, atom, y              one line per atom index
    derivative    x, avg_abs_der          adaptivity profile
    error_vs_x    x, estimator, w1        one curve per estimator
    delta_cdf     seed, delta             one empirical CDF per seed
    proj_cdf      t, series, F            CDF overlays; optional `panel`
                                          column makes one subplot per panel
    histogram     estimator, w1           20 uniform bins on [0, 0.1] by
                                          default, overflow folded into the
                                          rightmost bin; one panel per
                                          estimator

All rendering is deterministic: fixed figure geometry, fixed color
cycle, no timestamps in the output file.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


class SchemaError(ValueError):
    """The input CSV does not match the schema for the figure kind."""


_DPI = 150
_COLORS = plt.rcParams["axes.prop_cycle"].by_key()["color"]


def read_rows(path, required: list[str]) -> list[dict]:
    """Read CSV rows, checking required columns and non-emptiness."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [col for col in required if col not in header]
        if missing:
            raise SchemaError(
                f"{path}: missing column(s) {', '.join(missing)}; "
                f"found {', '.join(header) or '(no header)'}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no rows")
    return rows


def _floats(rows, col):
    try:
        return np.array([float(r[col]) for r in rows])
    except ValueError as err:
        raise SchemaError(f"column {col!r} holds a non-numeric value: {err}") from err


def _save(fig, out):
    try:
        fig.savefig(out, dpi=_DPI, metadata={"Software": "condist-figures"})
    finally:
        plt.close(fig)


def render_scatter(in_path, out_path, title=None):
    rows = read_rows(in_path, ["x", "y"])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(_floats(rows, "x"), _floats(rows, "y"), s=4, color=_COLORS[0],
               alpha=0.5, linewidths=0)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title or "samples")
    fig.tight_layout()
    _save(fig, out_path)


def render_trajectories(in_path, out_path, title=None):
    rows = read_rows(in_path, ["x", "atom", "y"])
    xs = _floats(rows, "x")
    atoms = _floats(rows, "atom").astype(int)
    ys = _floats(rows, "y")
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, atom in enumerate(np.unique(atoms)):
        sel = atoms == atom
        order = np.argsort(xs[sel])
        ax.plot(xs[sel][order], ys[sel][order], lw=0.8,
                color=_COLORS[i % len(_COLORS)])
    ax.set_xlabel("x")
    ax.set_ylabel("atom position")
    ax.set_title(title or "atom trajectories")
    fig.tight_layout()
    _save(fig, out_path)


def render_derivative(in_path, out_path, title=None):
    rows = read_rows(in_path, ["x", "avg_abs_der"])
    xs = _floats(rows, "x")
    vals = _floats(rows, "avg_abs_der")
    order = np.argsort(xs)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(xs[order], vals[order], color=_COLORS[3])
    ax.set_xlabel("x")
    ax.set_ylabel("avg |d atom / dx|")
    ax.set_title(title or "average absolute derivative")
    fig.tight_layout()
    _save(fig, out_path)


def render_error_vs_x(in_path, out_path, title=None):
    rows = read_rows(in_path, ["x", "estimator", "w1"])
    names = sorted({r["estimator"] for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, name in enumerate(names):
        sub = [r for r in rows if r["estimator"] == name]
        xs = _floats(sub, "x")
        ws = _floats(sub, "w1")
        order = np.argsort(xs)
        ax.plot(xs[order], ws[order], label=name, color=_COLORS[i % len(_COLORS)])
    ax.set_xlabel("x")
    ax.set_ylabel("W1 error")
    ax.set_title(title or "error vs x")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out_path)


def render_delta_cdf(in_path, out_path, title=None):
    rows = read_rows(in_path, ["seed", "delta"])
    seeds = sorted({r["seed"] for r in rows})
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, seed in enumerate(seeds):
        vals = np.sort(_floats([r for r in rows if r["seed"] == seed], "delta"))
        levels = np.arange(1, vals.size + 1) / vals.size
        ax.step(vals, levels, where="post", lw=0.9,
                color=_COLORS[i % len(_COLORS)], label=f"seed {seed}")
    ax.set_xlabel("excess distance")
    ax.set_ylabel("empirical CDF")
    ax.set_title(title or "excess-distance CDFs")
    if len(seeds) <= 10:
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out_path)


def render_proj_cdf(in_path, out_path, title=None):
    rows = read_rows(in_path, ["t", "series", "F"])
    panels = sorted({r.get("panel", "0") for r in rows})
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.5),
                             squeeze=False)
    for p, panel in enumerate(panels):
        ax = axes[0][p]
        sub = [r for r in rows if r.get("panel", "0") == panel]
        for i, series in enumerate(sorted({r["series"] for r in sub})):
            ss = [r for r in sub if r["series"] == series]
            ts = _floats(ss, "t")
            fs = _floats(ss, "F")
            order = np.argsort(ts)
            ax.plot(ts[order], fs[order], label=series,
                    color=_COLORS[i % len(_COLORS)])
        ax.set_xlabel("t")
        ax.set_ylabel("CDF")
        ax.set_title(f"panel {panel}")
        ax.legend(fontsize=7)
    fig.suptitle(title or "projected conditional CDFs")
    fig.tight_layout()
    _save(fig, out_path)


def render_histogram(in_path, out_path, title=None, bins=20,
                     bin_range=(0.0, 0.1)):
    """Raw per-query errors binned with the overflow-rightmost convention."""
    rows = read_rows(in_path, ["estimator", "w1"])
    names = sorted({r["estimator"] for r in rows})
    edges = np.linspace(bin_range[0], bin_range[1], bins + 1)
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3),
                             squeeze=False)
    for i, name in enumerate(names):
        vals = _floats([r for r in rows if r["estimator"] == name], "w1")
        counts, _ = np.histogram(vals, bins=edges)
        counts[-1] += int((vals > bin_range[1]).sum())
        ax = axes[0][i]
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge",
               color=_COLORS[i % len(_COLORS)], edgecolor="white", linewidth=0.3)
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("W1 error")
        if i == 0:
            ax.set_ylabel("count")
    fig.suptitle(title or "projected error histograms")
    fig.tight_layout()
    _save(fig, out_path)


RENDERERS = {
    "scatter": render_scatter,
    "trajectories": render_trajectories,
    "derivative": render_derivative,
    "error_vs_x": render_error_vs_x,
    "delta_cdf": render_delta_cdf,
    "proj_cdf": render_proj_cdf,
    "histogram": render_histogram,
}
