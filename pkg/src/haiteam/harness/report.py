"""Figures written next to the result tables."""
from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..nnkit import forward  # noqa: E402

SYSTEM_COLORS = {"Human": "#7f7f7f", "AO": "#1f77b4", "TS": "#ff7f0e", "JC": "#2ca02c", "JCP": "#d62728"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    # no Software tag: keeps PNG bytes stable across matplotlib builds
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_summary(summary: list[dict], path: Path, title: str = "") -> Path:
    """Grouped bars of mean total reward with standard-error whiskers."""
    variants = list(OrderedDict.fromkeys(s["variant"] for s in summary))
    systems = list(OrderedDict.fromkeys(s["system"] for s in summary))
    idx = {(s["variant"], s["system"]): s for s in summary}
    width = 0.8 / len(systems)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 1.2 * len(variants) + 2), 2.8))
        x = np.arange(len(variants))
        for k, sysname in enumerate(systems):
            means = [idx[(v, sysname)]["mean"] if (v, sysname) in idx else np.nan for v in variants]
            errs = [(idx[(v, sysname)]["stderr"] or 0.0) if (v, sysname) in idx else 0.0 for v in variants]
            ax.bar(x + (k - (len(systems) - 1) / 2) * width, means, width, yerr=errs, capsize=2,
                   label=sysname, color=SYSTEM_COLORS.get(sysname))
        ax.set_xticks(x)
        ax.set_xticklabels(variants)
        ax.set_ylabel("total test reward")
        if title:
            ax.set_title(title)
        ax.legend(ncol=len(systems), frameon=False, loc="upper center", bbox_to_anchor=(0.5, -0.15))
        return _save(fig, path)


def plot_routing(summary: list[dict], path: Path) -> Path:
    """Share of test instances sent to a human, per variant and system."""
    variants = list(OrderedDict.fromkeys(s["variant"] for s in summary))
    systems = [s for s in OrderedDict.fromkeys(s["system"] for s in summary) if s in ("TS", "JC", "JCP")]
    idx = {(s["variant"], s["system"]): s for s in summary}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.5, 2.6))
        for sysname in systems:
            vals = [idx[(v, sysname)]["human_fraction_mean"] if (v, sysname) in idx else np.nan for v in variants]
            ax.plot(variants, vals, marker="o", label=sysname, color=SYSTEM_COLORS.get(sysname))
        ax.set_ylim(-0.02, 1.02)
        ax.set_ylabel("fraction routed to humans")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_compliance(test, systems: dict, path: Path) -> Path:
    """Test points coloured by true action, with each system's routing region shaded."""
    X = test.X
    y = np.array([1 if 1 in lab else 0 for lab in test.labels])
    shown = [k for k in ("TS", "JC") if k in systems and systems[k].router is not None]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, max(len(shown), 1), figsize=(3.2 * max(len(shown), 1), 3.0), squeeze=False)
        lo, hi = X.min(axis=0) - 0.3, X.max(axis=0) + 0.3
        gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], 200), np.linspace(lo[1], hi[1], 200))
        grid = np.c_[gx.ravel(), gy.ravel()]
        for ax, name in zip(axes[0], shown or ["data"]):
            ax.scatter(X[y == 1, 0], X[y == 1, 1], s=6, c="#2ca02c", label="complier")
            ax.scatter(X[y == 0, 0], X[y == 0, 1], s=6, c="#9467bd", marker="x", label="non-complier")
            if name in systems:
                s = systems[name]
                human = (forward(s.router, grid)[:, 0] > 0.5).reshape(gx.shape)
                ax.contourf(gx, gy, human, levels=[0.5, 1.5], colors=["#d62728"], alpha=0.12)
                act = np.argmax(forward(s.policy, grid), axis=1).reshape(gx.shape)
                ax.contour(gx, gy, act, levels=[0.5], colors=["#1f77b4"], linewidths=1.0)
                ax.set_title(f"{name}: shaded = routed to human")
            ax.set_xlabel("x1")
            ax.set_ylabel("x2")
        axes[0][0].legend(frameon=False, loc="lower right")
        return _save(fig, path)
