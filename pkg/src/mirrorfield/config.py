"""Typed configuration with strict YAML loading.

Every tunable default lives here; ``default_config().to_dict()`` is the full
effective configuration and is echoed into checkpoints and reports.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

CONFIG_ENV_VAR = "MIRRORFIELD_CONFIG"
ABLATION_MODES = ("global_only", "global_local", "full", "no_hypernet")


@dataclass
class DataConfig:
    image_size: int = 64
    num_scenes: int = 16
    views_per_scene: int = 24
    num_primitives: int = 3
    perturbation: float = 0.0
    elevation_min: float = 10.0
    elevation_max: float = 40.0
    camera_distance: float = 3.0
    # fx = fy = focal_factor * image_size
    focal_factor: float = 1.5
    # scenes whose views are all evaluation targets
    holdout_scenes: int = 0
    # per remaining scene, views withheld from training
    heldout_views: int = 2
    min_test_angle: float = 90.0
    background: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    seed: int = 0


@dataclass
class ModelConfig:
    latent_dim: int = 128
    encoder_channels: list = field(default_factory=lambda: [16, 16, 16, 16])
    convs_per_block: int = 2
    hypernet_hidden: int = 256
    field_width: int = 128
    field_depth: int = 4
    pos_freqs: int = 6
    dir_freqs: int = 4
    include_input: bool = True
    density_bias_init: float = -2.0
    symmetry_normal: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    symmetry_offset: float = 0.0
    seed: int = 0


@dataclass
class TrainConfig:
    objects_per_batch: int = 4
    rays_per_object: int = 256
    samples_per_ray: int = 64
    peak_lr: float = 1e-4
    warmup_steps: int = 2000
    total_steps: int = 50000
    # None derives the rate that reaches final_lr at total_steps
    decay_rate: Optional[float] = None
    final_lr: float = 1e-6
    weight_decay: float = 1e-2
    seed: int = 0
    ablation_mode: str = "full"
    stratified: bool = True
    checkpoint_every: int = 1000
    log_every: int = 50

    def validate(self):
        for name in ("objects_per_batch", "rays_per_object", "samples_per_ray", "total_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"train.{name} must be >= 1")
        if self.warmup_steps < 0:
            raise ValueError("train.warmup_steps must be >= 0")
        if not self.peak_lr > 0:
            raise ValueError("train.peak_lr must be positive")
        if self.ablation_mode not in ABLATION_MODES:
            raise ValueError(f"unknown ablation mode {self.ablation_mode!r}; choose from {ABLATION_MODES}")
        if self.decay_rate is not None and not 0 < self.decay_rate <= 1:
            raise ValueError("train.decay_rate must lie in (0, 1]")


@dataclass
class RenderConfig:
    near: float = 1.5
    far: float = 4.5
    samples_per_ray: int = 64
    stratified: bool = False
    background: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    chunk_rays: int = 1024
    spiral_frames: int = 36
    spiral_turns: float = 2.0
    spiral_elevation_min: float = 5.0
    spiral_elevation_max: float = 45.0

    def validate(self):
        if not 0 < self.near < self.far:
            raise ValueError(f"render bounds need 0 < near < far, got {self.near}, {self.far}")
        if self.samples_per_ray < 1:
            raise ValueError("render.samples_per_ray must be >= 1")


@dataclass
class EvalConfig:
    psnr_cap: float = 100.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    pose_buckets: list = field(default_factory=lambda: [0.0, 60.0, 90.0, 120.0, 180.0])
    seed: int = 0


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "Config":
        self.train.validate()
        self.render.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(Config)}


def _build(cls, values: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys in [{where}]: {sorted(unknown)}")
    return cls(**values)


def config_from_dict(doc: Optional[dict]) -> Config:
    doc = doc or {}
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    sections = {}
    for f in dataclasses.fields(Config):
        cls = f.default_factory().__class__
        sections[f.name] = _build(cls, doc.get(f.name) or {}, f.name)
    return Config(**sections).validate()


def merge(cfg: Config, overrides: dict) -> Config:
    """Return a copy with ``{"section": {"key": value}}`` overrides applied."""
    doc = cfg.to_dict()
    for section, values in overrides.items():
        if section not in doc:
            raise ValueError(f"unknown config section {section!r}")
        for key, value in values.items():
            if key not in doc[section]:
                raise ValueError(f"unknown config key {section}.{key}")
            doc[section][key] = value
    return config_from_dict(doc)


def load_config(path: Optional[str | os.PathLike] = None) -> Config:
    """Load a YAML config; falls back to ``$MIRRORFIELD_CONFIG`` then defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return Config().validate()
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    with p.open() as fh:
        doc = yaml.safe_load(fh)
    if doc is not None and not isinstance(doc, dict):
        raise ValueError(f"config {p} must be a mapping of sections")
    return config_from_dict(doc)


def default_config() -> Config:
    return Config().validate()


def section_dict(obj: Any) -> dict:
    return dataclasses.asdict(obj)
