"""Matplotlib figures written next to the CSV outputs of the command-line tools."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "legend.frameon": False,
}
COLORS = {"model": "#1f77b4", "truth": "#ff7f0e", "baseline": "#2ca02c"}
# PNG metadata is pinned so repeated runs write identical bytes
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def loss_curve(history, path, val_history=()):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        steps = [h[0] for h in history]
        ax.plot(steps, [h[1] for h in history], lw=0.8, color=COLORS["model"], label="train")
        if val_history:
            ax.plot([v[0] for v in val_history], [v[1] for v in val_history], "o-", ms=3,
                    color=COLORS["truth"], label="validation")
        ax.set_xlabel("optimizer step")
        ax.set_ylabel("noise-prediction MSE")
        ax.set_yscale("log")
        ax.legend()
        _save(fig, path)


def histogram(rows, path, title=None):
    """Bar chart of ``(bin_left, bin_right, count, tag)`` rows, each series normalised to a density."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for tag in ("model", "truth"):
            sel = [r for r in rows if r[3] == tag]
            if not sel:
                continue
            left = np.array([r[0] for r in sel])
            width = np.array([r[1] - r[0] for r in sel])
            counts = np.array([r[2] for r in sel], dtype=float)
            total = counts.sum()
            dens = counts / (total * width) if total else counts
            ax.bar(left, dens, width=width, align="edge", alpha=0.55, color=COLORS[tag], label=tag)
        ax.set_xlabel("value")
        ax.set_ylabel("density")
        if title:
            ax.set_title(title)
        ax.legend()
        _save(fig, path)


def fan_chart(samples, path, truth=None, variable=""):
    """Median and 5-95% / 25-75% bands of an ``(K, p)`` ensemble for one variable."""
    samples = np.asarray(samples, dtype=float)
    steps = np.arange(1, samples.shape[1] + 1)
    q = np.percentile(samples, [5, 25, 50, 75, 95], axis=0)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.fill_between(steps, q[0], q[4], color=COLORS["model"], alpha=0.2, label="5-95%")
        ax.fill_between(steps, q[1], q[3], color=COLORS["model"], alpha=0.35, label="25-75%")
        ax.plot(steps, q[2], color=COLORS["model"], label="median")
        if truth is not None:
            ax.plot(steps, truth, "o-", ms=3, color=COLORS["truth"], label="truth")
        ax.set_xlabel("steps ahead")
        ax.set_ylabel(variable)
        ax.legend()
        _save(fig, path)


def metrics_by_horizon(summaries, path):
    """CRPS/MAE/MSE against horizon, one line per method (error bars = trial std)."""
    names = ("crps", "mae", "mse")
    with plt.rc_context({**STYLE, "figure.figsize": (10.0, 3.4)}):
        fig, axes = plt.subplots(1, 3)
        for s in summaries:
            hs = sorted({int(k.split(".")[1]) for k in s.mean if k.startswith("horizon.")})
            for ax, metric in zip(axes, names):
                ax.errorbar(hs, [s.mean[f"horizon.{h}.{metric}"] for h in hs],
                            yerr=[s.std[f"horizon.{h}.{metric}"] for h in hs],
                            marker="o", ms=3, capsize=2, label=s.label)
        for ax, metric in zip(axes, names):
            ax.set_xlabel("horizon")
            ax.set_title(metric.upper())
        axes[0].legend()
        _save(fig, path)
