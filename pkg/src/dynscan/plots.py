"""Figure rendering for the report paths: every CSV the CLI emits gets a
matching PNG written next to it. matplotlib is imported lazily so library
users without a display stack pay nothing."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def save_psnr_curves(curves: list[tuple[str, np.ndarray, np.ndarray]],
                     path: str | Path) -> Path:
    """PSNR-vs-%FOV lines; curves entries are (label, percents, mean_psnr)."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, pct, vals in curves:
        ax.plot(pct, vals, marker=".", label=label)
    ax.set_xlabel("% FOV measured")
    ax.set_ylabel("mean channel PSNR (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_auc_table_figure(rows, path: str | Path) -> Path:
    """AUC vs c, one line per window descriptor (rows: CandidateResult)."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    windows = sorted({r.window_desc for r in rows})
    for wdesc in windows:
        sel = sorted((r.c, r.auc) for r in rows if r.window_desc == wdesc)
        ax.plot([c for c, _ in sel], [a for _, a in sel], marker="o", label=wdesc)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("c")
    ax.set_ylabel("avg m/z PSNR AUC")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_mask_figure(mask: np.ndarray, path: str | Path, title: str = "") -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(mask, cmap="gray", interpolation="nearest")
    if title:
        ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
