"""Differentiable volume rendering through a conditioned field."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch

from .config import RenderConfig
from .geometry import Camera, camera_rays, depth_deltas, pixel_grid, sample_depths
from .model import CameraBatch, Conditioning, ConditionedField

# sigma * delta is clamped here before exponentiation
MAX_OPTICAL_DEPTH = 80.0


def composite(colors: torch.Tensor, densities: torch.Tensor, deltas: torch.Tensor,
              background) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Alpha-composite samples front to back.

    ``colors`` is ``(..., S, 3)``, ``densities`` and ``deltas`` are
    ``(..., S)``. Returns ``(pixel, weights, transmittance_end)`` where the
    escaped transmittance is filled with ``background``.
    """
    colors = torch.as_tensor(colors)
    densities = torch.as_tensor(densities, dtype=colors.dtype)
    deltas = torch.as_tensor(deltas, dtype=colors.dtype)
    if not (colors.shape[:-1] == densities.shape == deltas.shape):
        raise ValueError(f"sample count mismatch: colors {tuple(colors.shape)}, "
                         f"densities {tuple(densities.shape)}, deltas {tuple(deltas.shape)}")
    tau = (densities * deltas).clamp(max=MAX_OPTICAL_DEPTH)
    accum = torch.cumsum(tau, dim=-1)
    trans = torch.exp(-torch.cat([torch.zeros_like(accum[..., :1]), accum[..., :-1]], dim=-1))
    weights = trans * -torch.expm1(-tau)
    t_end = torch.exp(-accum[..., -1])
    bg = torch.as_tensor(background, dtype=colors.dtype)
    pixel = (weights[..., None] * colors).sum(dim=-2) + t_end[..., None] * bg
    return pixel, weights, t_end


def render_conditioned(model: ConditionedField, cond: Conditioning, origins: torch.Tensor,
                       dirs: torch.Tensor, cfg: RenderConfig, samples: Optional[int] = None,
                       stratified: Optional[bool] = None,
                       generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Render ``(B, R, 3)`` rays for ``B`` conditioned objects in one pass."""
    samples = samples or cfg.samples_per_ray
    stratified = cfg.stratified if stratified is None else stratified
    B, R, _ = origins.shape
    depths = sample_depths((B, R), cfg.near, cfg.far, samples, stratified, generator, origins.dtype)
    return _render_with_depths(model, cond, origins, dirs, depths, cfg)


def _render_with_depths(model, cond, origins, dirs, depths, cfg):
    B, R, S = depths.shape
    points = origins[..., None, :] + depths[..., None] * dirs[..., None, :]
    view = dirs[..., None, :].expand(B, R, S, 3)
    rgb, sigma = model.query(cond, points.reshape(B, R * S, 3), view.reshape(B, R * S, 3))
    pixel, _, _ = composite(rgb.reshape(B, R, S, 3), sigma.reshape(B, R, S),
                            depth_deltas(depths, cfg.far), cfg.background)
    return pixel


def condition_on(model: ConditionedField, images: Sequence, cameras: Sequence[Camera]) -> Conditioning:
    dtype = next(model.parameters()).dtype
    imgs = torch.stack([torch.as_tensor(np.asarray(im), dtype=dtype) for im in images])
    return model.condition(imgs, CameraBatch.from_cameras(cameras, dtype))


def render_rays(model: ConditionedField, reference, origins, dirs, cfg: RenderConfig,
                seed: int = 0, chunk: Optional[int] = None) -> torch.Tensor:
    """Render rays ``(R, 3)`` of one object conditioned on ``reference``.

    ``reference`` is any object with ``image`` and ``camera`` attributes
    (a :class:`~mirrorfield.synthdata.ViewRecord`). Stratified jitter, when
    enabled, is drawn for all rays up front so results do not depend on the
    chunk size.
    """
    dtype = next(model.parameters()).dtype
    origins = torch.as_tensor(origins, dtype=dtype).reshape(-1, 3)
    dirs = torch.as_tensor(dirs, dtype=dtype).reshape(-1, 3)
    chunk = chunk or cfg.chunk_rays
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        cond = condition_on(model, [reference.image], [reference.camera])
        depths = sample_depths((1, origins.shape[0]), cfg.near, cfg.far, cfg.samples_per_ray,
                               cfg.stratified, gen, dtype)
        out = []
        for lo in range(0, origins.shape[0], chunk):
            hi = lo + chunk
            out.append(_render_with_depths(model, cond, origins[None, lo:hi], dirs[None, lo:hi],
                                           depths[:, lo:hi], cfg)[0])
    return torch.cat(out, dim=0)


def render_image(model: ConditionedField, reference, target: Camera, cfg: RenderConfig,
                 seed: int = 0) -> np.ndarray:
    """Render the full ``(H, W, 3)`` image seen by ``target``."""
    dtype = next(model.parameters()).dtype
    uv = pixel_grid(target.intrinsics, dtype=dtype).reshape(-1, 2)
    o, d = camera_rays(uv, target.intrinsics, target.extrinsics)
    rgb = render_rays(model, reference, o, d, cfg, seed=seed)
    H, W = target.intrinsics.height, target.intrinsics.width
    return rgb.reshape(H, W, 3).clamp(0.0, 1.0).cpu().numpy().astype(np.float64)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Linear [0, 1] to 8-bit with round-half-up."""
    return np.floor(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
