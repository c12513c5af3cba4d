"""Figure output for the CLI report paths (files only, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_loss(losses, path):
    """``losses``: rows of (step, lr, total, cls, box)."""
    steps = [r[0] for r in losses]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, [r[2] for r in losses], label="total", lw=1.5)
    ax.plot(steps, [r[3] for r in losses], label="focal", lw=1)
    ax.plot(steps, [r[4] for r in losses], label="smooth L1", lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_sweep(ks, maps, path, saturation=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ks, maps, marker="o")
    ax.set_xscale("log")
    ax.set_xlabel("max pillars K")
    ax.set_ylabel("mAP@0.5")
    if saturation is not None:
        ax.axvline(saturation, color="gray", ls="--", lw=1)
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_pr(curves, path):
    """``curves``: mapping label -> (recall, precision)."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for label, (r, p) in curves.items():
        ax.plot(r, p, drawstyle="steps-post", label=label)
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    if curves:
        ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)
