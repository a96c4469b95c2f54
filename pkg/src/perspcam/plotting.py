"""Report figures. Every PNG is written without timestamps or version metadata
so repeated runs produce identical bytes."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import LogLocator, NullFormatter, StrMethodFormatter  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "perspcam",
}


def _plain_log_x(ax) -> None:
    ax.set_xscale("log")
    ax.xaxis.set_major_locator(LogLocator(subs=(1.0, 2.0, 5.0)))
    ax.xaxis.set_major_formatter(StrMethodFormatter("{x:g}"))
    ax.xaxis.set_minor_formatter(NullFormatter())


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_distortion(tz, distortion, path, marks=None) -> Path:
    """Log-log curve of distortion magnitude against pelvis depth."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.4))
        ax.plot(tz, distortion, "-o", ms=3, color="tab:blue")
        ax.set_yscale("log")
        _plain_log_x(ax)
        for x in marks or ():
            ax.axvline(x, color="0.6", lw=0.8, ls="--")
        ax.set_xlabel("pelvis depth $T_z$ (m)")
        ax.set_ylabel("perspective distortion")
        ax.set_title("Distortion vs subject distance")
        fig.tight_layout()
        return _save(fig, path)


def plot_metric_report(rows, path, tz=None, f_gt=None, f_pred=None) -> Path:
    """Per-record error overview: focal scatter, E_f against depth, mIoU histogram."""
    e_f = np.array([r["e_f"] for r in rows], dtype=float)
    iou = np.array([r["miou_pct"] for r in rows], dtype=float)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
        ax = axes[0]
        if f_gt is not None and len(f_gt):
            lim = [0.9 * min(np.min(f_gt), np.min(f_pred)), 1.1 * max(np.max(f_gt), np.max(f_pred))]
            ax.plot(lim, lim, color="0.6", lw=0.8)
            ax.scatter(f_gt, f_pred, s=8)
            ax.set_xlim(lim)
            ax.set_ylim(lim)
        ax.set_xlabel("ground-truth focal (px)")
        ax.set_ylabel("recovered focal (px)")
        ax.set_title("Focal length")

        ax = axes[1]
        if tz is not None and len(tz):
            ax.scatter(tz, e_f, s=8)
            _plain_log_x(ax)
        ax.set_xlabel("pelvis depth $T_z$ (m)")
        ax.set_ylabel("$E_f$")
        ax.set_title("Relative focal error")

        ax = axes[2]
        if len(iou):
            ax.hist(iou, bins=np.linspace(min(80.0, iou.min()), 100.0, 21), color="tab:green")
        ax.set_xlabel("mIoU (%)")
        ax.set_ylabel("records")
        ax.set_title("Silhouette agreement")
        fig.tight_layout()
        return _save(fig, path)


def plot_tz_histogram(tz, path, near_band=(0.3, 1.2)) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.4))
        tz = np.asarray(tz, dtype=float)
        if tz.size:
            bins = np.geomspace(max(tz.min(), 1e-3), tz.max() * 1.0001, 25)
            ax.hist(tz, bins=bins, color="tab:orange")
            _plain_log_x(ax)
        for x in near_band:
            ax.axvline(x, color="0.6", lw=0.8, ls="--")
        ax.set_xlabel("pelvis depth $T_z$ (m)")
        ax.set_ylabel("records")
        ax.set_title("Sampled depths")
        fig.tight_layout()
        return _save(fig, path)
