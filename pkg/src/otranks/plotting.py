"""Figures written to files: power cells, depth grids and QQ plots.

Uses the non-interactive Agg backend, so nothing opens a window.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_cells(cells, path, sites=None, title="Power cells"):
    """Draw polygons, each a ``(k, 2)`` vertex array, on the unit square.

    ``sites`` are drawn as points when given; they may lie outside the
    square, so the view covers both.
    """
    fig, ax = plt.subplots(figsize=(5, 5))
    polys = [np.asarray(p) for p in cells if len(p) >= 3]
    coll = PolyCollection(polys, facecolors="none", edgecolors="k", linewidths=0.6)
    ax.add_collection(coll)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_aspect("equal")
    ax.set_title(title)
    if sites is not None:
        inset = fig.add_axes([1.0, 0.1, 0.35, 0.35])
        s = np.asarray(sites)
        inset.plot(s[:, 0], s[:, 1], ".", ms=3)
        inset.set_title("sites", fontsize=8)
        inset.tick_params(labelsize=6)
    return _save(fig, path)


def plot_depth_grid(x, y, depth, path, data=None, title="Depth"):
    """Filled contours of depth values on a lattice.

    ``x`` and ``y`` are the lattice coordinates of each value (flat or
    ``(G, G)``); ``data`` is overlaid as points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    depth = np.asarray(depth, dtype=float)
    G = int(round(np.sqrt(depth.size)))
    fig, ax = plt.subplots(figsize=(5, 4.2))
    if G * G == depth.size and G >= 2:
        cs = ax.contourf(x.reshape(G, G), y.reshape(G, G), depth.reshape(G, G), levels=12,
                         cmap="viridis")
    else:
        cs = ax.scatter(x, y, c=depth, cmap="viridis", s=8)
    fig.colorbar(cs, ax=ax)
    if data is not None:
        d = np.asarray(data)
        ax.plot(d[:, 0], d[:, 1], "w.", ms=2)
    ax.set_title(title)
    return _save(fig, path)


def plot_qq(a, b, path, labels=("first", "second"), title="QQ plot"):
    """Quantiles of ``b`` against quantiles of ``a`` with the identity line."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(a, b, "o", ms=3)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    ax.set_title(title)
    return _save(fig, path)


def plot_replicates(observed, replicates, path, title="Permutation replicates"):
    """Histogram of permutation replicates with the observed statistic."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(replicates, bins=min(30, max(5, len(replicates) // 3)), color="0.7")
    ax.axvline(observed, color="r")
    ax.set_title(title)
    return _save(fig, path)
