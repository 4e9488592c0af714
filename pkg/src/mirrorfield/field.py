"""Conditioned radiance field evaluated with externally supplied weights."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .hypernet import FieldLayout, LayerSpec, unflatten


@dataclass(frozen=True)
class PositionalEncodingSpec:
    num_frequencies: int
    include_input: bool = True

    def dim(self, d: int) -> int:
        return (d if self.include_input else 0) + 2 * d * self.num_frequencies


def positional_encode(v: torch.Tensor, spec: PositionalEncodingSpec) -> torch.Tensor:
    """``[v, sin(2^j pi v), cos(2^j pi v)]`` for ``j < num_frequencies``.

    Frequencies vary fastest within each sin/cos group:
    ``sin(pi v_0), sin(pi v_1), ..., sin(2 pi v_0), ...``.
    """
    parts = [v] if spec.include_input else []
    for j in range(spec.num_frequencies):
        arg = (2.0 ** j) * math.pi * v
        parts += [torch.sin(arg), torch.cos(arg)]
    if not parts:
        return v[..., :0]
    return torch.cat(parts, dim=-1)


@dataclass(frozen=True)
class FieldSpec:
    position: PositionalEncodingSpec
    direction: PositionalEncodingSpec
    feature_dim: int
    width: int = 128
    depth: int = 4

    @property
    def input_dim(self) -> int:
        return self.position.dim(3) + self.direction.dim(3) + self.feature_dim

    def layout(self) -> FieldLayout:
        layers = [LayerSpec("trunk0", self.input_dim, self.width)]
        layers += [LayerSpec(f"trunk{i}", self.width, self.width) for i in range(1, self.depth)]
        half = max(self.width // 2, 1)
        layers += [
            LayerSpec("density", self.width, 1),
            LayerSpec("color0", self.width, half),
            LayerSpec("color1", half, 3),
        ]
        layout = FieldLayout(tuple(layers))
        assert layout["trunk0"].fan_in == self.position.dim(3) + self.direction.dim(3) + self.feature_dim
        return layout


def _dense(x, Wb):
    W, b = Wb
    if W.dim() == 2:
        return x @ W + b
    return torch.baddbmm(b[:, None, :], x, W)


def query_field(theta: torch.Tensor, spec: FieldSpec, X: torch.Tensor, d: torch.Tensor,
                features: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Color and density at points ``X`` seen along unit directions ``d``.

    Shapes: ``theta`` is ``(B, l)`` (or ``(l,)`` shared by every object),
    ``X`` and ``d`` are ``(B, N, 3)``, ``features`` is ``(B, N, feature_dim)``
    holding the local features followed by the symmetric ones. Returns
    ``rgb (B, N, 3)`` in [0, 1] and ``sigma (B, N)`` >= 0.
    """
    layout = spec.layout()
    if theta.shape[-1] != layout.size:
        raise ValueError(f"theta has length {theta.shape[-1]}, field layout needs {layout.size}")
    squeeze = X.dim() == 2
    if squeeze:
        X, d = X[None], d[None]
        features = None if features is None else features[None]
        theta = theta if theta.dim() == 1 else theta.reshape(1, -1)
    if theta.dim() == 2 and theta.shape[0] != X.shape[0]:
        raise ValueError(f"{theta.shape[0]} parameter sets for {X.shape[0]} objects")
    feat_dim = 0 if features is None else features.shape[-1]
    if feat_dim != spec.feature_dim:
        raise ValueError(f"field expects {spec.feature_dim} feature channels, got {feat_dim}")
    parts = [positional_encode(X, spec.position), positional_encode(d, spec.direction)]
    if features is not None:
        parts.append(features)
    h = torch.cat(parts, dim=-1)
    p = unflatten(theta, layout)
    for i in range(spec.depth):
        h = F.silu(_dense(h, p[f"trunk{i}"]))
    sigma = F.softplus(_dense(h, p["density"]))[..., 0]
    c = F.silu(_dense(h, p["color0"]))
    rgb = torch.sigmoid(_dense(c, p["color1"]))
    if squeeze:
        return rgb[0], sigma[0]
    return rgb, sigma
