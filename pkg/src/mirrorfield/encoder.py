"""Image encoder: global latent code plus a pixel-aligned feature volume."""
from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import CameraIntrinsics, CameraExtrinsics, SymmetryTransform, mirror_point, project


def uniform_fan_in_(module: nn.Module, generator: torch.Generator, gain: float = 1.0):
    """Reset every conv/linear layer to U(-b, b) with b = gain * sqrt(3 / fan_in)."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = gain * math.sqrt(3.0 / fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.uniform_(-1.0 / math.sqrt(fan_in), 1.0 / math.sqrt(fan_in), generator=generator)


class ConvBlock(nn.Module):
    # kernel 4 / stride 2 / pad 1 keeps the sampling lattice mirror-aligned
    # for even widths, so symmetric kernels give flip-equivariant features.
    def __init__(self, cin: int, cout: int, convs: int = 2):
        super().__init__()
        layers = [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.SiLU()]
        for _ in range(convs - 1):
            layers += [nn.Conv2d(cout, cout, 3, stride=1, padding=1), nn.SiLU()]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class ImageEncoder(nn.Module):
    """Maps a batch of RGB images to latent codes and feature volumes.

    The feature volume is the channel concatenation of every block's output,
    bilinearly upsampled to the input resolution, so it has
    ``sum(channels)`` channels. The latent code is a linear map of the
    globally averaged features of all blocks.
    """

    def __init__(self, image_size: int, channels: Sequence[int] = (16, 16, 16, 16),
                 latent_dim: int = 128, convs_per_block: int = 2, seed: int = 0):
        super().__init__()
        if image_size % (2 ** len(channels)) != 0:
            raise ValueError(f"image size {image_size} must be divisible by {2 ** len(channels)}")
        self.image_size = image_size
        self.latent_dim = latent_dim
        self.feature_dim = int(sum(channels))
        blocks, cin = [], 3
        for c in channels:
            blocks.append(ConvBlock(cin, c, convs_per_block))
            cin = c
        self.blocks = nn.ModuleList(blocks)
        self.latent_head = nn.Linear(self.feature_dim, latent_dim)
        uniform_fan_in_(self, torch.Generator().manual_seed(seed))

    def _check(self, images: torch.Tensor):
        if images.dim() != 4 or images.shape[-1] != 3:
            raise ValueError(f"expected (B, H, W, 3) images, got shape {tuple(images.shape)}")
        if images.shape[1] != self.image_size or images.shape[2] != self.image_size:
            raise ValueError(f"expected {self.image_size}x{self.image_size} images, "
                             f"got {images.shape[1]}x{images.shape[2]}")

    def forward(self, images: torch.Tensor, with_features: bool = True):
        """Encode ``(B, H, W, 3)`` images in [0, 1].

        Returns ``(z, features)`` with ``z`` of shape ``(B, k)`` and
        ``features`` of shape ``(B, H, W, n)``, or ``None`` when
        ``with_features`` is false.
        """
        self._check(images)
        x = images.permute(0, 3, 1, 2)
        size = x.shape[-2:]
        maps, pooled = [], []
        for block in self.blocks:
            x = block(x)
            pooled.append(x.mean(dim=(2, 3)))
            if with_features:
                maps.append(F.interpolate(x, size=size, mode="bilinear", align_corners=False))
        z = self.latent_head(torch.cat(pooled, dim=1))
        if not with_features:
            return z, None
        return z, torch.cat(maps, dim=1).permute(0, 2, 3, 1).contiguous()

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def sample_features(features: torch.Tensor, uv: torch.Tensor,
                    valid: torch.Tensor | None = None) -> torch.Tensor:
    """Bilinear lookup in a ``(B, H, W, n)`` volume at pixel coords ``(B, N, 2)``.

    Integer coordinates return stored values exactly. The image covers
    ``[-0.5, W-0.5] x [-0.5, H-0.5]``; within the outer half-pixel border the
    edge value is held. Coordinates outside the image (or where ``valid`` is
    false) give zeros.
    """
    B, H, W, n = features.shape
    u, v = uv[..., 0], uv[..., 1]
    inside = (u >= -0.5) & (u <= W - 0.5) & (v >= -0.5) & (v <= H - 0.5)
    if valid is not None:
        inside = inside & valid
    zero = torch.zeros_like(u)
    u = torch.where(inside, u, zero).clamp(0, W - 1)
    v = torch.where(inside, v, zero).clamp(0, H - 1)
    u0f, v0f = torch.floor(u), torch.floor(v)
    fu, fv = u - u0f, v - v0f
    u0, v0 = u0f.long(), v0f.long()
    u1, v1 = (u0 + 1).clamp(max=W - 1), (v0 + 1).clamp(max=H - 1)
    flat = features.reshape(B, H * W, n)

    def gather(vi, ui):
        idx = (vi * W + ui).reshape(B, -1, 1).expand(-1, -1, n)
        return torch.gather(flat, 1, idx).reshape(*uv.shape[:-1], n)

    w00 = ((1 - fu) * (1 - fv))[..., None]
    w01 = (fu * (1 - fv))[..., None]
    w10 = ((1 - fu) * fv)[..., None]
    w11 = (fu * fv)[..., None]
    out = gather(v0, u0) * w00 + gather(v0, u1) * w01 + gather(v1, u0) * w10 + gather(v1, u1) * w11
    return out * inside[..., None].to(out.dtype)


def sample_feature(volume: torch.Tensor, uv) -> torch.Tensor:
    """Single-volume convenience form: ``(H, W, n)`` volume, ``(..., 2)`` coords."""
    uv = torch.as_tensor(uv, dtype=volume.dtype)
    flat = uv.reshape(1, -1, 2)
    return sample_features(volume[None], flat)[0].reshape(*uv.shape[:-1], volume.shape[-1])


def extract_point_features(volume: torch.Tensor, X: torch.Tensor, intr: CameraIntrinsics,
                           extr: CameraExtrinsics, sym: SymmetryTransform
                           ) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel-aligned features of ``X`` and of its mirror point ``M X``.

    Points behind the camera or projecting outside the image yield zeros.
    """
    X = torch.as_tensor(X, dtype=volume.dtype)
    local = _features_at(volume, X, intr, extr)
    symmetric = _features_at(volume, mirror_point(X, sym), intr, extr)
    return local, symmetric


def _features_at(volume, X, intr, extr):
    uv, depth = project(X, intr, extr, check=False)
    flat_uv = uv.reshape(1, -1, 2)
    valid = (depth > 0).reshape(1, -1)
    out = sample_features(volume[None], flat_uv, valid)[0]
    return out.reshape(*X.shape[:-1], volume.shape[-1])
