"""Static figure rendering for experiment reports.

Every report path can drop PNG figures next to its delimited output; the
figures are decorative summaries, the CSV/JSON artifacts stay canonical.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .grid import GridFunction

__all__ = [
    "save_grid_heatmap",
    "save_trace",
    "save_scatter_values",
    "save_loglog",
    "save_ratio_bands",
]


def _finish(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path


def save_grid_heatmap(u: GridFunction, path: str, title: str = "") -> str:
    lat = u.lattice
    if lat.ndim != 2:
        return ""
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    img = u.values.reshape(lat.node_shape)
    extent = [lat.node_origin[0], lat.node_origin[0] + (lat.node_shape[0] - 1) * lat.h,
              lat.node_origin[1], lat.node_origin[1] + (lat.node_shape[1] - 1) * lat.h]
    im = ax.imshow(img.T, origin="lower", extent=extent, aspect="equal", cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return _finish(fig, path)


def save_trace(values, path: str, ylabel: str, title: str = "",
               logy: bool = False) -> str:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.plot(np.arange(len(values)), values, "o-", ms=3)
    if logy and np.all(np.asarray(values) > 0):
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_scatter_values(points, values, path: str, title: str = "") -> str:
    points = np.asarray(points)
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    finite = np.isfinite(values)
    sc = ax.scatter(points[finite, 0], points[finite, 1], c=np.asarray(values)[finite],
                    s=14, cmap="viridis")
    fig.colorbar(sc, ax=ax, shrink=0.85)
    ax.set_title(title)
    ax.set_aspect("equal")
    return _finish(fig, path)


def save_loglog(xs, ys, path: str, xlabel: str, ylabel: str, title: str = "",
                fit_slope: bool = True) -> str:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.loglog(xs, ys, "o-", ms=4)
    if fit_slope and len(xs) > 1 and np.all(ys > 0):
        slope = np.polyfit(np.log(xs), np.log(ys), 1)[0]
        ax.set_title(f"{title} (slope {slope:.3f})".strip())
    else:
        ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3, which="both")
    return _finish(fig, path)


def save_ratio_bands(coords, lower, upper, path: str, title: str = "") -> str:
    fig, axes = plt.subplots(1, 2, figsize=(8.6, 3.6))
    for ax, vals, name in ((axes[0], lower, "u / lower reference"),
                           (axes[1], upper, "u / upper reference")):
        vals = np.asarray(vals, dtype=float)
        ok = np.isfinite(vals) & (vals > 0)
        if np.any(ok):
            ax.hist(vals[ok], bins=40, color="tab:blue", alpha=0.8)
        ax.set_xlabel(name)
        ax.set_ylabel("nodes")
        ax.grid(alpha=0.3)
    fig.suptitle(title)
    return _finish(fig, path)
