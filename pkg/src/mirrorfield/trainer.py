"""Optimization of encoder and hypernetwork over a multi-scene dataset.

All per-step randomness (object, reference/target views, pixels, sample
jitter) is derived from ``(train.seed, step)``, so a resumed run replays
exactly the batches an uninterrupted run would have drawn.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import __version__
from .checkpoint import load_arrays, save_arrays
from .config import Config, TrainConfig, config_from_dict
from .geometry import Camera, camera_rays
from .model import CameraBatch, ConditionedField, build_model
from .renderer import render_conditioned
from .synthdata import Dataset

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mirrorfield-checkpoint/1"


class TrainingDiverged(RuntimeError):
    pass


def loss_fn(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Sum over rays of the squared colour error."""
    predicted = torch.as_tensor(predicted)
    target = torch.as_tensor(target, dtype=predicted.dtype)
    if predicted.shape != target.shape:
        raise ValueError(f"prediction {tuple(predicted.shape)} and target {tuple(target.shape)} differ")
    return ((predicted - target) ** 2).sum()


def decay_rate(cfg: TrainConfig) -> float:
    if cfg.decay_rate is not None:
        return cfg.decay_rate
    span = cfg.total_steps - cfg.warmup_steps
    if span <= 0 or cfg.final_lr >= cfg.peak_lr:
        return 1.0
    return (cfg.final_lr / cfg.peak_lr) ** (1.0 / span)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``peak_lr``, then per-step exponential decay."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    return cfg.peak_lr * decay_rate(cfg) ** (step - cfg.warmup_steps)


@dataclass
class Batch:
    images: torch.Tensor    # (B, H, W, 3) reference images
    cameras: CameraBatch    # reference cameras
    origins: torch.Tensor   # (B, R, 3)
    dirs: torch.Tensor      # (B, R, 3)
    targets: torch.Tensor   # (B, R, 3)
    jitter_seed: int


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def sample_batch(dataset: Dataset, cfg: TrainConfig, step: int, dtype=torch.float32) -> Batch:
    """Draw the batch for ``step``.

    Per object: a scene with training views, a uniformly chosen reference
    view, a different training view as target, and uniformly chosen pixels.
    """
    rng = step_rng(cfg.seed, step)
    train = dataset.train_views
    scenes = sorted(train)
    if not scenes:
        raise ValueError(f"dataset {dataset.root} has no training views")
    replace = len(scenes) < cfg.objects_per_batch
    picked = rng.choice(len(scenes), size=cfg.objects_per_batch, replace=replace)
    images, cams, origins, dirs, targets = [], [], [], [], []
    size = dataset.image_size
    for idx in picked:
        scene = scenes[int(idx)]
        views = train[scene]
        ref = views[int(rng.integers(len(views)))]
        others = [v for v in views if v != ref] or views
        tgt = others[int(rng.integers(len(others)))]
        pix = rng.integers(size * size, size=cfg.rays_per_object)
        uv = torch.tensor(np.stack([pix % size, pix // size], axis=-1), dtype=dtype)
        cam: Camera = dataset.cameras(scene)[tgt]
        o, d = camera_rays(uv, cam.intrinsics, cam.extrinsics)
        img = dataset.image(scene, tgt)
        targets.append(torch.as_tensor(img.reshape(-1, 3)[pix], dtype=dtype))
        origins.append(o)
        dirs.append(d)
        images.append(torch.as_tensor(dataset.image(scene, ref), dtype=dtype))
        cams.append(dataset.cameras(scene)[ref])
    return Batch(torch.stack(images), CameraBatch.from_cameras(cams, dtype), torch.stack(origins),
                 torch.stack(dirs), torch.stack(targets), int(rng.integers(2**62)))


@dataclass
class TrainState:
    model: ConditionedField
    optimizer: torch.optim.Optimizer
    config: Config
    image_size: int
    step: int = 0


def make_optimizer(model: ConditionedField, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=0.0, weight_decay=cfg.weight_decay)


def init_state(cfg: Config, image_size: int) -> TrainState:
    model = build_model(cfg.model, image_size, cfg.train.ablation_mode)
    return TrainState(model, make_optimizer(model, cfg.train), cfg, image_size, 0)


def batch_loss(model: ConditionedField, batch: Batch, cfg: Config) -> torch.Tensor:
    cond = model.condition(batch.images, batch.cameras)
    gen = torch.Generator().manual_seed(batch.jitter_seed)
    pred = render_conditioned(model, cond, batch.origins, batch.dirs, cfg.render,
                              samples=cfg.train.samples_per_ray, stratified=cfg.train.stratified,
                              generator=gen)
    return loss_fn(pred, batch.targets)


def train_step(state: TrainState, batch: Batch) -> float:
    """One AdamW update at the scheduled learning rate; returns the loss."""
    lr = lr_schedule(state.step, state.config.train)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad(set_to_none=True)
    loss = batch_loss(state.model, batch, state.config)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value} at step {state.step} (lr={lr:.3e})")
    loss.backward()
    state.optimizer.step()
    state.step += 1
    return value


# --------------------------------------------------------------------------
# checkpoints

def state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays = {}
    params = list(state.model.named_parameters())
    for name, p in params:
        arrays[f"model/{name}"] = p.detach().cpu().numpy()
    for name, p in params:
        st = state.optimizer.state.get(p)
        if not st:
            continue
        for key in ("exp_avg", "exp_avg_sq"):
            arrays[f"optim/{name}/{key}"] = st[key].detach().cpu().numpy()
        arrays[f"optim/{name}/step"] = np.asarray([float(st["step"])], dtype=np.float64)
    return arrays


def save_state(state: TrainState, path) -> Path:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": __version__,
        "step": state.step,
        "image_size": state.image_size,
        "mode": state.model.mode,
        "layout": state.model.layout.to_record(),
        "config": state.config.to_dict(),
        "rng": "per-step generators seeded from (train.seed, step)",
    }
    save_arrays(path, state_arrays(state), meta)
    return Path(path)


def load_state(path, config: Optional[Config] = None) -> TrainState:
    """Rebuild model and optimizer from a checkpoint.

    ``config`` replaces the stored training schedule (for example a longer
    ``total_steps``); model settings always come from the checkpoint.
    """
    arrays, meta = load_arrays(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    stored = config_from_dict(meta["config"])
    cfg = stored if config is None else config_from_dict({**config.to_dict(), "model": meta["config"]["model"]})
    model = build_model(stored.model, int(meta["image_size"]), meta["mode"])
    if model.layout.to_record() != meta["layout"]:
        raise ValueError(f"field layout in {path} does not match the rebuilt model")
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name, p in params.items():
            key = f"model/{name}"
            if key not in arrays:
                raise ValueError(f"checkpoint {path} lacks parameter {name}")
            p.copy_(torch.from_numpy(arrays[key]))
    opt = make_optimizer(model, cfg.train)
    for name, p in params.items():
        key = f"optim/{name}/exp_avg"
        if key in arrays:
            opt.state[p] = {
                "step": torch.tensor(float(arrays[f"optim/{name}/step"][0])),
                "exp_avg": torch.from_numpy(arrays[key]).clone(),
                "exp_avg_sq": torch.from_numpy(arrays[f"optim/{name}/exp_avg_sq"]).clone(),
            }
    return TrainState(model, opt, cfg, int(meta["image_size"]), int(meta["step"]))


def checkpoint_step(path) -> int:
    _, meta = load_arrays(path)
    return int(meta["step"])


def load_model(path) -> tuple[ConditionedField, Config]:
    state = load_state(path)
    state.model.eval()
    return state.model, state.config


# --------------------------------------------------------------------------
# loop

def train(dataset: Dataset, cfg: Config, checkpoint_path, resume=None,
          log_path=None, stop_at: Optional[int] = None,
          callback: Optional[Callable[[TrainState, float], None]] = None) -> TrainState:
    """Run (or continue) training up to ``train.total_steps``.

    The checkpoint at ``checkpoint_path`` is rewritten every
    ``train.checkpoint_every`` steps and at the end. ``stop_at`` ends the run
    early at that step without changing the schedule (used to simulate
    interruption).
    """
    checkpoint_path = Path(checkpoint_path)
    log_path = Path(log_path) if log_path else checkpoint_path.with_suffix(".log.csv")
    if resume:
        state = load_state(resume, cfg)
        log.info("resumed from %s at step %d", resume, state.step)
    else:
        state = init_state(cfg, dataset.image_size)
    if state.image_size != dataset.image_size:
        raise ValueError(f"model expects {state.image_size}px images, dataset has {dataset.image_size}px")
    tcfg = state.config.train
    end = tcfg.total_steps if stop_at is None else min(stop_at, tcfg.total_steps)
    fresh_log = not (resume and log_path.exists())
    if fresh_log:
        log_path.write_text("step,lr,loss\n")
    t0 = time.perf_counter()
    state.model.train()
    with log_path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        while state.step < end:
            step = state.step
            batch = sample_batch(dataset, tcfg, step)
            loss = train_step(state, batch)
            lr = lr_schedule(step, tcfg)
            if step % tcfg.log_every == 0 or state.step == end:
                writer.writerow([step, f"{lr:.8e}", f"{loss:.8e}"])
                fh.flush()
                log.info("step %d lr %.3e loss %.5f (%.1fs)", step, lr, loss, time.perf_counter() - t0)
            if callback is not None:
                callback(state, loss)
            if state.step % tcfg.checkpoint_every == 0 and state.step < end:
                save_state(state, checkpoint_path)
    save_state(state, checkpoint_path)
    return state
