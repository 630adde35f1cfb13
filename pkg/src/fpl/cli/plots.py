"""Deterministic SVG rendering of scenario CSVs.

Plot requests are plain dicts stored in the manifest. Figures use the Agg
backend, a fixed palette, a fixed ``svg.hashsalt`` and no date metadata,
so reruns on identical data give identical files.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from fpl.errors import PlotError

PALETTE = ["#222222", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b"]


def _mpl():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams.update({"svg.hashsalt": "fpl", "svg.fonttype": "path", "path.simplify": False})
    return plt


def read_table(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise PlotError(f"result file {path.name} is missing")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PlotError(f"{path.name} is empty")
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def _column(table: dict, name: str, source: str) -> np.ndarray:
    if name not in table:
        raise PlotError(f"series '{name}' not found in {source} (columns: {', '.join(table)})")
    return table[name]


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def overlay(path, x, series, *, title: str = "", points=None, logx: bool = False, logy: bool = False,
            markers: bool = False, xlabel: str = "", ylabel: str = "") -> Path:
    """Line overlay; legend entries follow the order of ``series``."""
    if not series:
        raise PlotError("overlay needs at least one series")
    plt = _mpl()
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, (label, y) in enumerate(series):
        ax.plot(x, y, color=PALETTE[j % len(PALETTE)], lw=1.5, label=label, marker="o" if markers else None)
    if points is not None:
        ax.plot(points[0], points[1], "k*", ms=9, label="training data")
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    _save(fig, Path(path))
    plt.close(fig)
    return Path(path)


def heatmap(path, x, y, values, *, title: str = "", points=None) -> Path:
    """Values on a tensor grid (row order as written by the runner), drawn
    with a diverging palette centered at 0."""
    from matplotlib.colors import TwoSlopeNorm

    xs, ys = np.unique(x), np.unique(y)
    if xs.size * ys.size != values.size:
        raise PlotError(f"heatmap values ({values.size}) do not fill a {xs.size}x{ys.size} grid")
    Z = values.reshape(xs.size, ys.size).T
    span = float(np.max(np.abs(Z))) or 1.0
    plt = _mpl()
    fig, ax = plt.subplots(figsize=(5, 4.2))
    mesh = ax.pcolormesh(xs, ys, Z, cmap="RdBu_r", norm=TwoSlopeNorm(vmin=-span, vcenter=0.0, vmax=span),
                         shading="nearest")
    fig.colorbar(mesh, ax=ax)
    if points is not None:
        ax.plot(points[0], points[1], "k*", ms=10)
    ax.set_title(title)
    ax.set_aspect("equal")
    fig.tight_layout()
    _save(fig, Path(path))
    plt.close(fig)
    return Path(path)


def scatter(path, x, series, *, title: str = "", identity: bool = True) -> Path:
    if not series:
        raise PlotError("scatter needs at least one series")
    plt = _mpl()
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for j, (label, y) in enumerate(series):
        ax.scatter(x, y, s=2, color=PALETTE[(j + 1) % len(PALETTE)], label=label, rasterized=False)
    if identity:
        lo = float(min(np.min(x), *(np.min(y) for _, y in series)))
        hi = float(max(np.max(x), *(np.max(y) for _, y in series)))
        ax.plot([lo, hi], [lo, hi], color="k", lw=1, label="identity")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, Path(path))
    plt.close(fig)
    return Path(path)


def render(request: dict, out_dir) -> Path:
    """Render one plot request against CSVs in ``out_dir``."""
    out_dir = Path(out_dir)
    kind = request.get("kind")
    src = request.get("csv")
    table = read_table(out_dir / src)
    pts = None
    if request.get("points"):
        pt = read_table(out_dir / request["points"])
        cols = list(pt)
        pts = (pt[cols[0]], pt[cols[1]] if kind == "heatmap" else pt[cols[-1]])
    target = out_dir / request["file"]
    if kind == "overlay":
        names = request.get("series") or []
        if not names:
            raise PlotError(f"plot {request['file']}: empty overlay list")
        series = [(n, _column(table, n, src)) for n in names]
        return overlay(target, _column(table, request["x"], src), series, title=request.get("title", ""),
                       points=pts, logx=request.get("logx", False), logy=request.get("logy", False),
                       markers=request.get("markers", False), xlabel=request["x"])
    if kind == "heatmap":
        return heatmap(target, _column(table, request["x"], src), _column(table, request["y"], src),
                       _column(table, request["value"], src), title=request.get("title", ""), points=pts)
    if kind == "scatter":
        names = request.get("series") or []
        if not names:
            raise PlotError(f"plot {request['file']}: empty series list")
        series = [(n, _column(table, n, src)) for n in names]
        return scatter(target, _column(table, request["x"], src), series, title=request.get("title", ""),
                       identity=request.get("identity", True))
    raise PlotError(f"unknown plot kind {kind!r}")


def emit_plots(manifest) -> list:
    """Render every plot request recorded in ``manifest``; returns the paths."""
    return [render(req, manifest.out_dir) for req in manifest.plots]
