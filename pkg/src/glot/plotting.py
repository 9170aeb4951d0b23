"""Figures written next to the text/JSON reports (Agg backend, files only)."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training_log(log: Sequence[dict], path, terms: Optional[Sequence[str]] = None) -> Path:
    """Total loss and individual terms against step, log scale."""
    steps = np.array([e["step"] for e in log])
    terms = terms or [k for k in log[0] if k not in ("step", "lr")]
    with plt.rc_context(STYLE):
        fig, (ax, ax_lr) = plt.subplots(2, 1, figsize=(6, 5), sharex=True,
                                        gridspec_kw={"height_ratios": [3, 1]})
        for k in terms:
            y = np.array([e[k] for e in log])
            if np.all(y <= 0):
                continue
            ax.plot(steps, np.maximum(y, 1e-12), lw=1.4 if k == "total" else 0.8,
                    color="k" if k == "total" else None, label=k)
        ax.set_yscale("log")
        ax.set_ylabel("loss")
        ax.legend(ncol=4, frameon=False, loc="upper center", bbox_to_anchor=(0.5, 1.3))
        ax_lr.plot(steps, [e["lr"] for e in log], color="tab:gray")
        ax_lr.set_ylabel("lr")
        ax_lr.set_xlabel("step")
        return _save(fig, path)


def plot_per_frame(frames: Sequence[dict], path, key: str = "mpjpe") -> Path:
    """Per-frame error of every sequence in a metric report."""
    seqs = sorted({f["seq"] for f in frames})
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        for s in seqs:
            sel = [f for f in frames if f["seq"] == s and f.get(key) is not None]
            ax.plot([f["frame"] for f in sel], [f[key] for f in sel], lw=0.8, label=f"seq {s}")
        ax.set_xlabel("frame")
        ax.set_ylabel(f"{key} (mm)")
        if len(seqs) <= 8:
            ax.legend(frameon=False, ncol=4)
        return _save(fig, path)


def plot_sweep(result, path) -> Path:
    """One bar group per swept value, one panel per metric, seeds as dots."""
    from .sweep import METRICS

    values = result.values
    x = np.arange(len(values))
    summary = result.summary()
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(METRICS), figsize=(2.4 * len(METRICS), 2.8))
        for ax, m in zip(axes, METRICS):
            ax.bar(x, [summary[v][m] for v in values], color="tab:blue", alpha=0.6)
            for i, v in enumerate(values):
                pts = [getattr(r, m) for r in result.rows if r.value == v]
                ax.scatter(np.full(len(pts), i), pts, s=8, color="k", zorder=3)
            ax.set_xticks(x)
            ax.set_xticklabels(values, rotation=30)
            ax.set_title(m.upper().replace("_", "-"))
        axes[0].set_ylabel("mm")
        fig.suptitle(f"sweep over {result.axis}")
        return _save(fig, path)


def plot_attention(maps: dict[str, list], path, batch_index: int = 0) -> Path:
    """Heatmaps of every attention layer and head for one window."""
    panels = []
    for name, layers in maps.items():
        for li, w in enumerate(layers):
            w = np.asarray(w)
            if w.ndim == 4:
                w = w[batch_index]
            for h in range(w.shape[0]):
                panels.append((f"{name} L{li} h{h}", w[h]))
    ncol = min(4, len(panels))
    nrow = int(np.ceil(len(panels) / ncol))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrow, ncol, figsize=(2.2 * ncol, 2.0 * nrow), squeeze=False)
        for ax in axes.flat[len(panels):]:
            ax.axis("off")
        for ax, (title, w) in zip(axes.flat, panels):
            ax.imshow(w, cmap="viridis", vmin=0.0, vmax=max(float(w.max()), 1e-12), aspect="auto",
                      interpolation="nearest")
            ax.set_title(title, fontsize=7)
            ax.set_xticks([])
            ax.set_yticks([])
        return _save(fig, path)


def plot_trajectory(pred: np.ndarray, gt: np.ndarray, path, joint: int = 20) -> Path:
    """Root-relative coordinates of one joint over time, prediction against ground truth."""
    pred = pred - pred[:, :1]
    gt = gt - gt[:, :1]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, figsize=(6, 4), sharex=True)
        for c, ax in enumerate(axes):
            ax.plot(gt[:, joint, c], color="k", lw=1.0, label="gt")
            ax.plot(pred[:, joint, c], color="tab:red", lw=0.8, label="pred")
            ax.set_ylabel("xyz"[c])
        axes[0].legend(frameon=False, ncol=2)
        axes[-1].set_xlabel("frame")
        return _save(fig, path)
