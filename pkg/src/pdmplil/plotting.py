"""Optional figures rendered next to the CSV/JSON reports.

Figures are drawn on bare ``Figure`` objects with the Agg canvas, so no
global pyplot state or display is involved.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

GOLDEN = (math.sqrt(5) - 1.0) / 2.0
STYLE = {"font.size": 9, "axes.spines.top": False, "axes.spines.right": False}


def _figure(width=6.0, height=None):
    fig = Figure(figsize=(width, height or width * GOLDEN), dpi=120)
    FigureCanvasAgg(fig)
    return fig


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    return Path(path)


def _styled(ax):
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)
    ax.tick_params(labelsize=STYLE["font.size"])
    return ax


def plot_path(path, out):
    """Post-jump states against jump times, coloured by flow index."""
    fig = _figure()
    ax = _styled(fig.add_subplot(1, 1, 1))
    ax.step(path.tau, path.y[:, 0], where="post", lw=0.6, color="0.4")
    sc = ax.scatter(path.tau, path.y[:, 0], c=path.i, s=4, cmap="viridis", zorder=3)
    if len(np.unique(path.i)) > 1:
        fig.colorbar(sc, ax=ax, label="flow index")
    ax.set_xlabel("time")
    ax.set_ylabel("y (post-jump)")
    return _save(fig, out)


def plot_coupling(mean_dist, fit, out):
    """Mean coupled distance on a log scale with the fitted geometric rate."""
    fig = _figure()
    ax = _styled(fig.add_subplot(1, 1, 1))
    n = np.arange(len(mean_dist))
    pos = np.asarray(mean_dist) > 0
    ax.semilogy(n[pos], np.asarray(mean_dist)[pos], ".", ms=3, label="mean distance")
    if fit and np.isfinite(fit.get("q", np.nan)):
        hi = int(fit["window"][1])
        xs = np.arange(hi + 1)
        ax.semilogy(xs, np.exp(fit["intercept"]) * fit["q"] ** xs, "-", lw=1,
                    label=f"rate {fit['q']:.3f}, R$^2$ {fit['r2']:.3f}")
    ax.set_xlabel("step")
    ax.set_ylabel("E distance")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, out)


def plot_decay(report, out):
    fig = _figure()
    ax = _styled(fig.add_subplot(1, 1, 1))
    ax.semilogy(report["n"], report["dfm"], "o-", ms=3, lw=0.8, label="distance to invariant")
    ax.axhline(report["floor"], color="0.6", ls="--", lw=0.8, label="noise floor")
    ax.set_xlabel("step")
    ax.set_ylabel("Fortet-Mourier distance")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, out)


def plot_lil(report, out):
    """``s(t)`` per replica at the recorded checkpoints, with the split into
    martingale, remainder and drift terms for the first replica."""
    tr = report["traces"]
    t = np.asarray(tr["t"])
    fig = _figure(7.0, 5.0)
    ax1 = _styled(fig.add_subplot(2, 1, 1))
    s = np.asarray(tr["s"])
    ax1.semilogx(t, s, color="0.5", lw=0.4, alpha=0.5)
    sb = report.get("sigma", {}).get("bar", {}).get("value")
    if sb:
        ax1.axhline(sb, color="C3", lw=1, label="sigma bar")
        ax1.axhline(-sb, color="C3", lw=1)
        ax1.legend(frameon=False, fontsize=8)
    ax1.set_ylabel("s(t)")
    ax2 = _styled(fig.add_subplot(2, 1, 2, sharex=ax1))
    for key in ("I1", "I2", "I3"):
        ax2.semilogx(t, np.asarray(tr[key])[:, 0], lw=0.9, label=key)
    ax2.set_xlabel("t")
    ax2.set_ylabel("terms")
    ax2.legend(frameon=False, fontsize=8, ncol=3)
    return _save(fig, out)
