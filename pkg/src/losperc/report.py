"""Matplotlib figures written next to the JSON-lines / CSV outputs."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
import numpy as np  # noqa: E402

from .coarsegrain import BAD, GOOD, SiteGrid  # noqa: E402

AXIS_LABELS = {"p": r"relay probability $p$", "U": r"users per street $U$",
               "H": r"hops per street $H$", "r": r"range $r$", "lambda": r"user intensity $\lambda$"}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_crossing_curve(rows: Sequence[dict], axis: str, path, target: Optional[float] = 0.5,
                        critical: Optional[float] = None):
    """Crossing probability against one parameter with Wilson error bars."""
    rows = sorted(rows, key=lambda r: r[axis])
    x = np.array([r[axis] for r in rows], dtype=float)
    y = np.array([r["p_hat"] for r in rows])
    lo = np.array([r["ci_low"] for r in rows])
    hi = np.array([r["ci_high"] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(x, y, yerr=[np.clip(y - lo, 0, None), np.clip(hi - y, 0, None)], fmt="o-", color="k", ms=4, capsize=3, lw=1)
    if target is not None:
        ax.axhline(target, color="0.6", ls=":", lw=1)
    if critical is not None:
        ax.axvline(critical, color="tab:red", ls="--", lw=1, label=f"{axis} = {critical:.3f}")
        ax.legend(frameon=False)
    ax.set_xlabel(AXIS_LABELS.get(axis, axis))
    ax.set_ylabel("crossing probability")
    ax.set_ylim(-0.03, 1.03)
    return _finish(fig, path)


def plot_realization(tessellation, nodes, labels, path, window=None):
    """Street system, users, relays and the largest component of one realisation."""
    t = tessellation
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    segs = np.stack([t.edge_a, t.edge_b], axis=1)
    ax.add_collection(LineCollection(segs, colors="tab:blue", linestyles="--", linewidths=0.4, alpha=0.6))
    if len(nodes):
        big = labels.largest()
        he, hn = nodes.host_edge, nodes.host_node
        same = he[1:] == he[:-1]
        i, j = hn[:-1][same], hn[1:][same]
        linked = labels.label[i] == labels.label[j]
        i, j = i[linked], j[linked]
        main = labels.label[i] == big
        links = np.stack([nodes.position[i], nodes.position[j]], axis=1)
        ax.add_collection(LineCollection(links[~main], colors="k", linewidths=0.6))
        ax.add_collection(LineCollection(links[main], colors="tab:orange", linewidths=1.2, zorder=4))
        size = float(np.clip(4000.0 / len(nodes), 0.2, 6.0))
        users = nodes.kind == 0
        ax.scatter(*nodes.position[users].T, s=size, c="tab:red", lw=0, zorder=3, label="users")
        ax.scatter(*nodes.position[~users].T, s=3 * size, marker="^", lw=0, c="tab:green", zorder=3, label="relays")
        ax.legend(loc="upper right", fontsize=7, frameon=True)
    w = window or t.window
    ax.set_xlim(w.min.x, w.max.x)
    ax.set_ylim(w.min.y, w.max.y)
    ax.set_aspect("equal")
    return _finish(fig, path)


def plot_site_grid(grid: SiteGrid, path):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    n = grid.n
    colours = {GOOD: "tab:green", BAD: "tab:red"}
    for (i, j), s in zip(grid.sites.tolist(), grid.state.tolist()):
        if s not in colours:
            continue
        ax.add_patch(plt.Rectangle((i * n - n / 2, j * n - n / 2), n, n,
                                   facecolor=colours[s], edgecolor="w", alpha=0.8))
    if len(grid.sites):
        lo = grid.sites.min(axis=0) * n - n
        hi = grid.sites.max(axis=0) * n + n
        ax.set_xlim(lo[0], hi[0])
        ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_title(f"{grid.mode.value} sites, n = {n:g}")
    return _finish(fig, path)


def plot_tessellation_stats(rows: Sequence[dict], path, lambda_S: float):
    """Per-realisation estimates against the planar closed forms."""
    g = np.array([r["gamma_hat"] for r in rows])
    lb = np.array([r["lbar_hat"] for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(7, 3))
    for ax, vals, exact, name in ((axes[0], g, 2 * math.sqrt(lambda_S), r"$\hat\gamma$"),
                                  (axes[1], lb, 2 / (3 * math.sqrt(lambda_S)), r"$\hat{\bar l}$")):
        ax.plot(np.arange(len(vals)), vals, "o", color="k", ms=3)
        ax.axhline(exact, color="tab:red", lw=1)
        ax.set_xlabel("realisation")
        ax.set_ylabel(name)
    return _finish(fig, path)
