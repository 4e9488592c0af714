"""Wiring of encoder, hypernetwork and field for the four ablation modes.

Modes:

* ``global_only``  -- latent code drives the hypernetwork; no image features.
* ``global_local`` -- adds the pixel-aligned feature of each query point.
* ``full``         -- adds the feature of the mirrored point as well.
* ``no_hypernet``  -- local + mirrored features into one shared, directly
  optimized field; the latent code is not used.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .config import ABLATION_MODES, ModelConfig
from .encoder import ImageEncoder, sample_features
from .field import FieldSpec, PositionalEncodingSpec, query_field
from .geometry import Camera, SymmetryTransform
from .hypernet import HyperNetwork, standard_init


@dataclass
class CameraBatch:
    """Per-object reference cameras stacked as tensors."""

    R: torch.Tensor       # (B, 3, 3)
    t: torch.Tensor       # (B, 3)
    focal: torch.Tensor   # (B, 2)
    center: torch.Tensor  # (B, 2)
    width: int
    height: int

    @classmethod
    def from_cameras(cls, cams: Sequence[Camera], dtype=torch.float32) -> "CameraBatch":
        intr = [c.intrinsics for c in cams]
        if len({(i.width, i.height) for i in intr}) != 1:
            raise ValueError("reference cameras in one batch must share an image size")
        return cls(
            R=torch.tensor(np.stack([c.extrinsics.R for c in cams]), dtype=dtype),
            t=torch.tensor(np.stack([c.extrinsics.t for c in cams]), dtype=dtype),
            focal=torch.tensor([[i.fx, i.fy] for i in intr], dtype=dtype),
            center=torch.tensor([[i.cx, i.cy] for i in intr], dtype=dtype),
            width=intr[0].width,
            height=intr[0].height,
        )

    def project(self, X: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Project ``(B, N, 3)`` world points; returns ``uv (B, N, 2)``, ``depth (B, N)``."""
        Xc = torch.einsum("bij,bnj->bni", self.R, X) + self.t[:, None, :]
        depth = Xc[..., 2]
        z = torch.where(depth.abs() > 1e-12, depth, torch.full_like(depth, 1e-12))
        uv = Xc[..., :2] / z[..., None] * self.focal[:, None, :] + self.center[:, None, :]
        return uv, depth


@dataclass
class Conditioning:
    """Everything a field query needs from the reference views."""

    theta: torch.Tensor               # (B, l), or (l,) when shared
    features: Optional[torch.Tensor]  # (B, H, W, n)
    cameras: CameraBatch
    latent: Optional[torch.Tensor] = None


def feature_channels(mode: str, n: int) -> int:
    return {"global_only": 0, "global_local": n, "full": 2 * n, "no_hypernet": 2 * n}[mode]


class ConditionedField(nn.Module):
    def __init__(self, cfg: ModelConfig, image_size: int, mode: str = "full"):
        super().__init__()
        if mode not in ABLATION_MODES:
            raise ValueError(f"unknown ablation mode {mode!r}")
        self.mode = mode
        self.cfg = cfg
        self.encoder = ImageEncoder(image_size, cfg.encoder_channels, cfg.latent_dim,
                                    cfg.convs_per_block, seed=cfg.seed)
        n = self.encoder.feature_dim
        self.spec = FieldSpec(
            position=PositionalEncodingSpec(cfg.pos_freqs, cfg.include_input),
            direction=PositionalEncodingSpec(cfg.dir_freqs, cfg.include_input),
            feature_dim=feature_channels(mode, n),
            width=cfg.field_width,
            depth=cfg.field_depth,
        )
        self.layout = self.spec.layout()
        bias = {"density": cfg.density_bias_init}
        if mode == "no_hypernet":
            self.hypernet = None
            gen = torch.Generator().manual_seed(cfg.seed + 1)
            self.theta = nn.Parameter(standard_init(self.layout, gen, bias))
        else:
            self.hypernet = HyperNetwork(cfg.latent_dim, self.layout, cfg.hypernet_hidden,
                                         seed=cfg.seed + 1, bias_overrides=bias)
            self.theta = None
        self.sym = SymmetryTransform.plane(cfg.symmetry_normal, cfg.symmetry_offset)
        # instrumentation for mode-wiring checks
        self.feature_reads = 0
        self.hypernet_calls = 0

    @property
    def uses_local(self) -> bool:
        return self.mode != "global_only"

    @property
    def uses_symmetric(self) -> bool:
        return self.mode in ("full", "no_hypernet")

    def condition(self, images: torch.Tensor, cameras: CameraBatch) -> Conditioning:
        """Encode ``(B, H, W, 3)`` reference images."""
        z, features = self.encoder(images, with_features=self.uses_local)
        if self.hypernet is None:
            theta = self.theta
        else:
            self.hypernet_calls += 1
            theta = self.hypernet(z)
        return Conditioning(theta=theta, features=features, cameras=cameras, latent=z)

    def point_features(self, cond: Conditioning, X: torch.Tensor) -> Optional[torch.Tensor]:
        """Local (and mirrored) features for ``(B, N, 3)`` points."""
        if not self.uses_local:
            return None
        self.feature_reads += 1
        cams = cond.cameras
        uv, depth = cams.project(X)
        parts = [sample_features(cond.features, uv, depth > 0)]
        if self.uses_symmetric:
            M = torch.as_tensor(self.sym.M, dtype=X.dtype)
            Xm = X @ M[:3, :3].T + M[:3, 3]
            uvm, depthm = cams.project(Xm)
            parts.append(sample_features(cond.features, uvm, depthm > 0))
        return torch.cat(parts, dim=-1)

    def query(self, cond: Conditioning, X: torch.Tensor, d: torch.Tensor):
        feats = self.point_features(cond, X)
        return query_field(cond.theta, self.spec, X, d, feats)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(cfg: ModelConfig, image_size: int, mode: str = "full",
                dtype=torch.float32) -> ConditionedField:
    return ConditionedField(cfg, image_size, mode).to(dtype)
