"""PSNR/SSIM, reconstruction baselines and the synthesized-view evaluation protocol."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP = 100.0

Reconstructor = Callable[[np.ndarray], np.ndarray]


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak ** 2 / mse)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, peak: float = 1.0) -> float:
    """Mean SSIM over all fully-supported Gaussian windows of two 2D images."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("ssim expects 2D images")
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} is smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)

    def blur(x):
        return convolve2d(x, w, mode="valid")

    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def nearest_input(view: int, alpha_a: int) -> int:
    r = view % alpha_a
    k = view // alpha_a
    return k if r <= alpha_a - r else k + 1


def baseline_nearest(sparse: np.ndarray, alpha_a: int) -> np.ndarray:
    """Each output view copies the closest input view (ties go to the lower index)."""
    n_in = sparse.shape[-1]
    if n_in < 2:
        raise ValueError("need at least 2 input views")
    n_out = alpha_a * (n_in - 1) + 1
    return sparse[..., [nearest_input(j, alpha_a) for j in range(n_out)]]


def baseline_linear(sparse: np.ndarray, alpha_a: int) -> np.ndarray:
    n_in = sparse.shape[-1]
    n_out = alpha_a * (n_in - 1) + 1
    pos = np.arange(n_out) / alpha_a
    lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return sparse[..., lo] * (1 - frac) + sparse[..., hi] * frac


@dataclass
class EvalReport:
    views: list[int]  # synthesized view indices, one entry per list element below
    psnr: list[float]
    ssim: list[float]
    excluded: list[int]  # input view indices left out of the averages
    avg_psnr: float
    avg_ssim: float
    factor: int
    n_slices: int
    input_psnr: float | None = None
    runtime_s: float = 0.0
    per_slice_psnr: list[float] = field(default_factory=list)
    baselines: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        kv = out_dir / f"{stem}.json"
        kv.write_text(json.dumps(self.to_dict(), indent=2))
        table = out_dir / f"{stem}.txt"
        table.write_text(self.table())
        return kv, table

    def table(self) -> str:
        lines = [f"factor {self.factor}x over {self.n_slices} slice(s)", f"{'view':>6} {'PSNR':>9} {'SSIM':>8}"]
        lines += [f"{v:>6d} {p:>9.3f} {s:>8.5f}" for v, p, s in zip(self.views, self.psnr, self.ssim)]
        lines.append(f"{'avg':>6} {self.avg_psnr:>9.3f} {self.avg_ssim:>8.5f}")
        for name, (bp, bs) in self.baselines.items():
            lines.append(f"{name:>6} {bp:>9.3f} {bs:>8.5f}")
        lines.append(f"excluded input views: {self.excluded}")
        if self.input_psnr is not None:
            lines.append(f"input-view fidelity PSNR: {self.input_psnr:.3f}")
        return "\n".join(lines) + "\n"


def usable_views(n_views: int, factor: int) -> int:
    """Largest ``factor*k + 1 <= n_views``."""
    return ((n_views - 1) // factor) * factor + 1


def _view_ssim(a: np.ndarray, b: np.ndarray) -> float:
    return ssim(a, b) if min(a.shape) >= 11 else float("nan")


def evaluate(reconstruct: Reconstructor | None, slices: Sequence[np.ndarray], factor: int,
             baselines: dict[str, Reconstructor] | None = None) -> EvalReport:
    """Decimate each dense ``(W, H, A)`` slice by ``factor``, reconstruct, and score synthesized views.

    ``reconstruct=None`` stands for an ideal reconstructor that returns the
    ground truth.
    """
    start = time.perf_counter()
    per_view_p: dict[int, list[float]] = {}
    per_view_s: dict[int, list[float]] = {}
    input_p, per_slice = [], []
    base_scores = {name: ([], []) for name in (baselines or {})}
    excluded: set[int] = set()
    for dense in slices:
        dense = np.asarray(dense, dtype=np.float64)
        dense = dense[..., :usable_views(dense.shape[-1], factor)]
        sparse = dense[..., ::factor]
        recon = dense if reconstruct is None else np.clip(reconstruct(sparse), 0.0, 1.0)
        if recon.shape != dense.shape:
            raise ValueError(f"reconstruction shape {recon.shape} != ground truth {dense.shape}")
        synth = [j for j in range(dense.shape[-1]) if j % factor]
        excluded.update(j for j in range(dense.shape[-1]) if j % factor == 0)
        slice_scores = []
        for j in synth:
            p = psnr(recon[..., j], dense[..., j])
            per_view_p.setdefault(j, []).append(p)
            per_view_s.setdefault(j, []).append(_view_ssim(recon[..., j], dense[..., j]))
            slice_scores.append(p)
        per_slice.append(float(np.mean(slice_scores)))
        input_p.append(psnr(recon[..., ::factor], sparse))
        for name, fn in (baselines or {}).items():
            b = np.clip(fn(sparse), 0.0, 1.0)
            base_scores[name][0].extend(psnr(b[..., j], dense[..., j]) for j in synth)
            base_scores[name][1].extend(_view_ssim(b[..., j], dense[..., j]) for j in synth)
    views = sorted(per_view_p)
    p_list = [float(np.mean(per_view_p[j])) for j in views]
    s_list = [float(np.mean(per_view_s[j])) for j in views]
    return EvalReport(
        views=views, psnr=p_list, ssim=s_list, excluded=sorted(excluded),
        avg_psnr=float(np.mean(p_list)), avg_ssim=float(np.mean(s_list)),
        factor=factor, n_slices=len(per_slice), input_psnr=float(np.mean(input_p)),
        runtime_s=time.perf_counter() - start, per_slice_psnr=per_slice,
        baselines={k: (float(np.mean(v[0])), float(np.mean(v[1]))) for k, v in base_scores.items()},
    )
