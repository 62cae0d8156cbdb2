"""Report figures rendered straight to files (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def figsize(scale: float = 1.0, aspect: float = (np.sqrt(5.0) - 1.0) / 2.0) -> tuple[float, float]:
    """Width of a 6.4 in column times ``scale``; height from ``aspect`` (golden ratio by default)."""
    width = 6.4 * scale
    return width, width * aspect


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_curves(rows: Sequence[Sequence[float]], path: str | Path, title: str = "training loss") -> Path:
    """Rows of ``(step, l_pix, l_feat, l_total)`` on a log scale."""
    data = np.asarray(rows, dtype=float).reshape(-1, 4)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize(0.8))
        for col, label in ((1, "pixel"), (2, "perceptual"), (3, "total")):
            values = data[:, col]
            if np.any(values > 0):
                ax.plot(data[:, 0], values, label=label)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_per_view(views: Sequence[int], psnr: Sequence[float], ssim: Sequence[float], path: str | Path,
                  baselines: Mapping[str, Mapping[str, Sequence[float]]] | None = None) -> Path:
    """Per-view PSNR and SSIM of synthesized views, with optional baseline curves."""
    with plt.rc_context(RC):
        fig, (ax_p, ax_s) = plt.subplots(1, 2, figsize=figsize(1.0, 0.4))
        ax_p.plot(views, psnr, "o-", label="model", ms=3)
        ax_s.plot(views, ssim, "o-", label="model", ms=3)
        for name, vals in (baselines or {}).items():
            ax_p.plot(views, vals["psnr"], "--", label=name)
            ax_s.plot(views, vals["ssim"], "--", label=name)
        ax_p.set_xlabel("view")
        ax_p.set_ylabel("PSNR (dB)")
        ax_s.set_xlabel("view")
        ax_s.set_ylabel("SSIM")
        ax_p.legend(frameon=False)
        return _save(fig, path)


def plot_epi_comparison(panels: Mapping[str, np.ndarray], path: str | Path) -> Path:
    """Side-by-side EPIs ``(W, A)``: angular axis vertical, as usually drawn."""
    with plt.rc_context(RC):
        fig, axes = plt.subplots(len(panels), 1, figsize=figsize(1.0, 0.25 * len(panels)), squeeze=False)
        for ax, (name, epi) in zip(axes[:, 0], panels.items()):
            ax.imshow(np.asarray(epi).T, cmap="gray", vmin=0, vmax=1, aspect="auto", interpolation="nearest")
            ax.set_ylabel(name)
            ax.set_xticks([])
            ax.set_yticks([])
        return _save(fig, path)


def plot_attention_submap(submap: np.ndarray, path: str | Path, s0: int, s1: int) -> Path:
    """Heat map of one ``(x0, x1)`` attention sub-map."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize(0.5, 1.0))
        im = ax.imshow(submap, cmap="viridis", interpolation="nearest")
        ax.set_xlabel(f"x1 (view {s1})")
        ax.set_ylabel(f"x0 (view {s0})")
        fig.colorbar(im, ax=ax, fraction=0.046)
        return _save(fig, path)
