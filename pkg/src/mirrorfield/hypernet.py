"""Hypernetwork mapping a latent code to the flat weight vector of a field MLP."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn

from .encoder import uniform_fan_in_


@dataclass(frozen=True)
class LayerSpec:
    name: str
    fan_in: int
    fan_out: int

    @property
    def size(self) -> int:
        return (self.fan_in + 1) * self.fan_out


@dataclass(frozen=True)
class FieldLayout:
    """Ordered dense layers of a generated MLP.

    Each layer stores its ``fan_in x fan_out`` weight matrix row-major
    followed by its ``fan_out`` biases.
    """

    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("layout needs at least one layer")
        for layer in self.layers:
            if layer.fan_in < 1 or layer.fan_out < 1:
                raise ValueError(f"layer {layer.name} has empty dimensions")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")

    @classmethod
    def from_dims(cls, dims: Sequence[tuple[int, int]]) -> "FieldLayout":
        return cls(tuple(LayerSpec(f"layer{i}", fi, fo) for i, (fi, fo) in enumerate(dims)))

    @property
    def size(self) -> int:
        return sum(layer.size for layer in self.layers)

    def offsets(self) -> dict[str, tuple[int, int]]:
        out, pos = {}, 0
        for layer in self.layers:
            out[layer.name] = (pos, pos + layer.size)
            pos += layer.size
        return out

    def __getitem__(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def to_record(self) -> list:
        return [[l.name, l.fan_in, l.fan_out] for l in self.layers]

    @classmethod
    def from_record(cls, rec) -> "FieldLayout":
        return cls(tuple(LayerSpec(str(n), int(a), int(b)) for n, a, b in rec))


def unflatten(theta: torch.Tensor, layout: FieldLayout) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
    """Split ``(B, l)`` flat parameters into per-layer ``(W, b)`` views.

    ``W`` has shape ``(B, fan_in, fan_out)`` and ``b`` has ``(B, fan_out)``.
    """
    if theta.shape[-1] != layout.size:
        raise ValueError(f"parameter vector has length {theta.shape[-1]}, layout needs {layout.size}")
    out, pos = {}, 0
    for layer in layout.layers:
        nw = layer.fan_in * layer.fan_out
        W = theta[..., pos:pos + nw].reshape(*theta.shape[:-1], layer.fan_in, layer.fan_out)
        b = theta[..., pos + nw:pos + layer.size]
        out[layer.name] = (W, b)
        pos += layer.size
    return out


def standard_init(layout: FieldLayout, generator: torch.Generator,
                  bias_overrides: dict[str, float] | None = None) -> torch.Tensor:
    """Flat vector holding a conventional fan-in uniform initialization."""
    bias_overrides = bias_overrides or {}
    chunks = []
    for layer in layout.layers:
        bound = 1.0 / math.sqrt(layer.fan_in)
        W = (torch.rand(layer.fan_in * layer.fan_out, generator=generator, dtype=torch.float64) * 2 - 1)
        W = W * math.sqrt(3.0) * bound
        if layer.name in bias_overrides:
            b = torch.full((layer.fan_out,), float(bias_overrides[layer.name]), dtype=torch.float64)
        else:
            b = torch.zeros(layer.fan_out, dtype=torch.float64)
        chunks += [W, b]
    return torch.cat(chunks).float()


class HyperNetwork(nn.Module):
    """Shared two-layer trunk followed by one linear head per field layer.

    Heads start with their weights scaled by ``1/sqrt(fan_in)`` of the layer
    they generate and their biases set to a standard initialization of that
    layer, so a freshly built hypernetwork emits an ordinary-looking MLP
    whose weights still depend on ``z``.
    """

    def __init__(self, latent_dim: int, layout: FieldLayout, hidden: int = 256, seed: int = 0,
                 bias_overrides: dict[str, float] | None = None):
        super().__init__()
        self.latent_dim = latent_dim
        self.layout = layout
        self.trunk = nn.Sequential(
            nn.Linear(latent_dim, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
        )
        self.heads = nn.ModuleList(nn.Linear(hidden, layer.size) for layer in layout.layers)
        gen = torch.Generator().manual_seed(seed)
        uniform_fan_in_(self.trunk, gen)
        base = standard_init(layout, gen, bias_overrides)
        offsets = layout.offsets()
        with torch.no_grad():
            for head, layer in zip(self.heads, layout.layers):
                bound = 1.0 / math.sqrt(hidden) / math.sqrt(layer.fan_in)
                head.weight.uniform_(-bound, bound, generator=gen)
                lo, hi = offsets[layer.name]
                head.bias.copy_(base[lo:hi])

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent code has dimension {z.shape[-1]}, expected {self.latent_dim}")
        h = self.trunk(z)
        return torch.cat([head(h) for head in self.heads], dim=-1)


def generate_field_params(z: torch.Tensor, hypernet: HyperNetwork,
                          layout: FieldLayout | None = None) -> torch.Tensor:
    if layout is not None and layout != hypernet.layout:
        raise ValueError("hypernetwork was built for a different field layout")
    return hypernet(z)
