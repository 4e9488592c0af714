"""PSNR / SSIM and evaluation sweeps over held-out views."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import convolve2d

from .config import EvalConfig, RenderConfig
from .synthdata import Dataset, pose_delta


def psnr(a, b, cap: float = 100.0) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float(cap)
    return min(float(cap), 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(x, y, w, c1, c2):
    filt = lambda img: convolve2d(img, w, mode="valid")
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully contained Gaussian windows.

    Accepts ``(H, W)`` or ``(H, W, 3)`` images in [0, 1]; colour images are
    scored per channel and averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3 or a.shape[-1] not in (1, 3):
        raise ValueError(f"expected single- or three-channel image, got shape {a.shape}")
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape[:2]} is smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)
    c1, c2 = k1 ** 2, k2 ** 2
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], w, c1, c2) for c in range(a.shape[-1])]))


@dataclass
class ViewScore:
    scene: str
    view: int
    pose_delta_deg: float
    psnr_db: float
    ssim: float


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    buckets: list = field(default_factory=lambda: [0.0, 60.0, 90.0, 120.0, 180.0])
    header: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr_db for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows])) if self.rows else float("nan")

    def bucket_label(self, delta: float) -> str:
        edges = self.buckets
        for lo, hi in zip(edges[:-1], edges[1:]):
            if lo <= delta < hi or (hi == edges[-1] and delta == hi):
                return f"{lo:g}-{hi:g}"
        return f">{edges[-1]:g}"

    def by_bucket(self) -> dict[str, tuple[float, float, int]]:
        """Mean (PSNR, SSIM, count) per pose-difference bucket."""
        groups: dict[str, list[ViewScore]] = {}
        for r in self.rows:
            groups.setdefault(self.bucket_label(r.pose_delta_deg), []).append(r)
        return {k: (float(np.mean([r.psnr_db for r in v])), float(np.mean([r.ssim for r in v])), len(v))
                for k, v in groups.items()}

    def mean_where(self, min_delta: float) -> float:
        vals = [r.psnr_db for r in self.rows if r.pose_delta_deg >= min_delta]
        return float(np.mean(vals)) if vals else float("nan")

    def aggregate_line(self) -> str:
        return f"PSNR {self.mean_psnr:.2f} dB  SSIM {self.mean_ssim:.4f}"

    def write_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            for key, value in self.header.items():
                fh.write(f"# {key}: {value}\n")
            w = csv.writer(fh)
            w.writerow(["scene", "view", "pose_delta_deg", "psnr_db", "ssim"])
            for r in self.rows:
                w.writerow([r.scene, r.view, f"{r.pose_delta_deg:.4f}", f"{r.psnr_db:.6f}", f"{r.ssim:.6f}"])

    def table(self) -> str:
        lines = [f"{'bucket':>10}  {'n':>4}  {'PSNR':>7}  {'SSIM':>7}"]
        for key, (p, s, n) in sorted(self.by_bucket().items(), key=lambda kv: float(kv[0].split('-')[0].lstrip('>'))):
            lines.append(f"{key:>10}  {n:>4}  {p:7.2f}  {s:7.4f}")
        lines.append(f"{'all':>10}  {len(self.rows):>4}  {self.mean_psnr:7.2f}  {self.mean_ssim:7.4f}")
        return "\n".join(lines)


def score_views(pairs, render_fn, truth_fn, delta_fn, cfg: EvalConfig) -> MetricsReport:
    report = MetricsReport(buckets=list(cfg.pose_buckets))
    for scene, view in pairs:
        pred = render_fn(scene, view)
        gt = truth_fn(scene, view)
        report.rows.append(ViewScore(
            scene, view, delta_fn(scene, view),
            psnr(pred, gt, cfg.psnr_cap),
            ssim(pred, gt, cfg.ssim_window, cfg.ssim_sigma, cfg.ssim_k1, cfg.ssim_k2),
        ))
    return report


def evaluate(model, dataset: Dataset, split: str, render_cfg: RenderConfig,
             eval_cfg: Optional[EvalConfig] = None, limit: Optional[int] = None) -> MetricsReport:
    """Render every ``split`` view conditioned on its scene's reference view."""
    from .renderer import render_image

    eval_cfg = eval_cfg or EvalConfig()
    pairs = dataset.split(split)
    if not pairs:
        raise ValueError(f"split {split!r} of {dataset.root} is empty")
    if limit is not None:
        pairs = pairs[:limit]

    def reference(scene):
        return dataset.view(scene, dataset.reference_view(scene))

    def render_fn(scene, view):
        return render_image(model, reference(scene), dataset.cameras(scene)[view], render_cfg,
                            seed=eval_cfg.seed)

    def delta_fn(scene, view):
        cams = dataset.cameras(scene)
        return pose_delta(cams[dataset.reference_view(scene)], cams[view])

    report = score_views(pairs, render_fn, dataset.image, delta_fn, eval_cfg)
    report.header = {
        "split": split,
        "ssim": f"gaussian {eval_cfg.ssim_window}x{eval_cfg.ssim_window} sigma={eval_cfg.ssim_sigma} "
                f"C1=({eval_cfg.ssim_k1})^2 C2=({eval_cfg.ssim_k2})^2",
        "psnr_cap_db": eval_cfg.psnr_cap,
    }
    return report
