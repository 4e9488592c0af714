"""Command-line entry point: ``mirrorfield <make-data|train|render|eval|ablate>``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ABLATION_MODES, CONFIG_ENV_VAR, Config, load_config, merge
from .geometry import Camera
from .metrics import evaluate
from .renderer import render_image
from .synthdata import load_dataset, make_dataset, orbit_camera, save_png
from .trainer import TrainingDiverged, checkpoint_step, load_model, train

log = logging.getLogger("mirrorfield")

ROW_LABELS = {"global_only": "(a)", "global_local": "(b)", "full": "(c)", "no_hypernet": "(d)"}


class CLIError(Exception):
    pass


def _defaults() -> Config:
    return Config()


def _effective(args, overrides: dict) -> Config:
    cfg = load_config(args.config)
    clean = {s: {k: v for k, v in kv.items() if v is not None} for s, kv in overrides.items()}
    cfg = merge(cfg, {s: kv for s, kv in clean.items() if kv})
    print("# effective config")
    print(cfg.dump().rstrip())
    return cfg


def cmd_make_data(args) -> int:
    cfg = _effective(args, {"data": {
        "num_scenes": args.scenes, "views_per_scene": args.views, "image_size": args.size,
        "seed": args.seed, "holdout_scenes": args.holdout_scenes, "heldout_views": args.heldout_views,
        "num_primitives": args.primitives, "perturbation": args.perturbation,
    }})
    d = cfg.data
    out = Path(args.out)
    if not out.parent.exists():
        raise CLIError(f"parent directory of {out} does not exist")
    manifest = make_dataset(out, d.num_scenes, d.views_per_scene, d.image_size, d.seed, d)
    print(f"wrote {len(manifest['scenes']) * d.views_per_scene} images")
    print(out / "manifest.json")
    return 0


def cmd_train(args) -> int:
    cfg = _effective(args, {"train": {"ablation_mode": args.ablation, "total_steps": args.steps,
                                      "seed": args.seed}})
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    state = train(dataset, cfg, out, resume=args.resume, log_path=args.log, stop_at=args.stop_at)
    print(f"checkpoint {out} at step {state.step}")
    return 0


def spiral_cameras(reference: Camera, cfg: Config) -> list[Camera]:
    """Poses along an Archimedean spiral on the viewing sphere."""
    r = cfg.render
    n = r.spiral_frames
    size = reference.intrinsics.width
    focal_factor = reference.intrinsics.fx / size
    distance = float(np.linalg.norm(reference.extrinsics.center))
    cams = []
    for i in range(n):
        s = i / max(n - 1, 1)
        az = 360.0 * r.spiral_turns * s
        el = r.spiral_elevation_min + (r.spiral_elevation_max - r.spiral_elevation_min) * s
        cams.append(orbit_camera(az, el, distance, size, focal_factor))
    return cams


def cmd_render(args) -> int:
    model, cfg = load_model(args.checkpoint)
    if args.config:
        cfg = merge(cfg, {"render": load_config(args.config).to_dict()["render"]})
    if args.frames is not None:
        cfg = merge(cfg, {"render": {"spiral_frames": args.frames}})
    print("# effective config")
    print(cfg.dump().rstrip())
    dataset = load_dataset(args.data)
    if args.scene not in dataset.scenes:
        raise CLIError(f"unknown scene {args.scene!r}")
    ref_view = dataset.reference_view(args.scene) if args.reference_view is None else args.reference_view
    cams = dataset.cameras(args.scene)
    if not 0 <= ref_view < len(cams):
        raise CLIError(f"scene {args.scene} has no view {ref_view}")
    reference = dataset.view(args.scene, ref_view)
    if args.poses == "spiral":
        targets = list(enumerate(spiral_cameras(reference.camera, cfg)))
        names = [f"spiral_{i:03d}.png" for i, _ in targets]
    else:
        try:
            ids = [int(v) for v in args.poses.split(",") if v.strip()]
        except ValueError:
            raise CLIError(f"--poses must be 'spiral' or a comma list of view ids, got {args.poses!r}") from None
        for v in ids:
            if not 0 <= v < len(cams):
                raise CLIError(f"scene {args.scene} has no view {v}")
        targets = [(v, cams[v]) for v in ids]
        names = [f"view_{v:03d}.png" for v in ids]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for (_, cam), name in zip(targets, names):
        save_png(out / name, render_image(model, reference, cam, cfg.render, seed=cfg.eval.seed))
    print(f"wrote {len(targets)} frames to {out}")
    return 0


def cmd_eval(args) -> int:
    model, cfg = load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    report = evaluate(model, dataset, args.split, cfg.render, cfg.eval, limit=args.limit)
    report.header["checkpoint"] = str(args.checkpoint)
    if args.report:
        report.write_csv(args.report)
    print(report.table())
    print(report.aggregate_line())
    return 0


def ablation_rows(reports: dict) -> list[dict]:
    """Table rows in (a)-(d) order with deltas relative to row (a)."""
    base = reports.get("global_only")
    rows = []
    for mode in ABLATION_MODES:
        if mode not in reports:
            continue
        rep = reports[mode]
        row = {"row": ROW_LABELS[mode], "mode": mode, "psnr": rep.mean_psnr, "ssim": rep.mean_ssim}
        if base is not None and mode != "global_only":
            row["psnr_delta_pct"] = 100.0 * (rep.mean_psnr - base.mean_psnr) / base.mean_psnr
            row["ssim_delta_pct"] = 100.0 * (rep.mean_ssim - base.mean_ssim) / base.mean_ssim
        else:
            row["psnr_delta_pct"] = row["ssim_delta_pct"] = None
        for key, (p, _, _) in rep.by_bucket().items():
            row[f"psnr_{key}"] = p
        rows.append(row)
    return rows


def format_ablation(rows: list[dict]) -> str:
    fmt = lambda v: "-" if v is None else f"{v:.1f}%"
    lines = [f"{'':4}{'mode':<14}{'PSNR(delta)':>20}{'SSIM(delta)':>20}"]
    for r in rows:
        lines.append(f"{r['row']:<4}{r['mode']:<14}{r['psnr']:>11.2f} ({fmt(r['psnr_delta_pct']):>6})"
                     f"{r['ssim']:>11.4f} ({fmt(r['ssim_delta_pct']):>6})")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    base = _effective(args, {"train": {"total_steps": args.steps, "seed": args.seed}})
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = args.modes.split(",") if args.modes else list(ABLATION_MODES)
    for m in modes:
        if m not in ABLATION_MODES:
            raise CLIError(f"unknown ablation mode {m!r}")
    reports = {}
    for mode in modes:
        cfg = merge(base, {"train": {"ablation_mode": mode}})
        ckpt = out / f"{mode}.ckpt"
        done = 0
        if ckpt.exists() and not args.retrain:
            done = checkpoint_step(ckpt)
        if done < cfg.train.total_steps:
            train(dataset, cfg, ckpt, resume=ckpt if done else None)
        else:
            log.info("reusing finished %s", ckpt)
        model, mcfg = load_model(ckpt)
        rep = evaluate(model, dataset, args.split, mcfg.render, mcfg.eval)
        rep.header["mode"] = mode
        rep.write_csv(out / f"{mode}_report.csv")
        reports[mode] = rep
        print(f"{ROW_LABELS[mode]} {mode}: {rep.aggregate_line()}")
    rows = ablation_rows(reports)
    keys = sorted({k for r in rows for k in r}, key=lambda k: (not k in ("row", "mode", "psnr", "ssim"), k))
    with (out / "ablation.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    table = format_ablation(rows)
    (out / "ablation.txt").write_text(table + "\n")
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    d = _defaults()
    fmt = argparse.HelpFormatter
    p = argparse.ArgumentParser(prog="mirrorfield", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)
    cfg_help = f"YAML config (default: ${CONFIG_ENV_VAR} or built-in defaults)"

    s = sub.add_parser("make-data", help="generate a synthetic dataset", formatter_class=fmt)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--scenes", type=int, help=f"number of scenes [config: {d.data.num_scenes}]")
    s.add_argument("--views", type=int, help=f"views per scene [config: {d.data.views_per_scene}]")
    s.add_argument("--size", type=int, help=f"image size in pixels [config: {d.data.image_size}]")
    s.add_argument("--seed", type=int, help=f"root seed [config: {d.data.seed}]")
    s.add_argument("--holdout-scenes", type=int, help=f"evaluation-only scenes [config: {d.data.holdout_scenes}]")
    s.add_argument("--heldout-views", type=int, help=f"test views per training scene [config: {d.data.heldout_views}]")
    s.add_argument("--primitives", type=int, help=f"primitive draws per scene [config: {d.data.num_primitives}]")
    s.add_argument("--perturbation", type=float, help=f"asymmetry amplitude [config: {d.data.perturbation}]")
    s.add_argument("--config", help=cfg_help)
    s.set_defaults(func=cmd_make_data)

    s = sub.add_parser("train", help="train a model", formatter_class=fmt)
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--ablation", choices=ABLATION_MODES, help=f"model variant [config: {d.train.ablation_mode}]")
    s.add_argument("--steps", type=int, help=f"total optimization steps [config: {d.train.total_steps}]")
    s.add_argument("--seed", type=int, help=f"training seed [config: {d.train.seed}]")
    s.add_argument("--resume", help="continue from this checkpoint")
    s.add_argument("--stop-at", type=int, default=None, help="stop early at this step (schedule unchanged)")
    s.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    s.add_argument("--config", help=cfg_help)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render novel views from one reference image", formatter_class=fmt)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--reference-view", type=int, default=None, help="conditioning view (default: manifest reference)")
    s.add_argument("--poses", default="spiral", help="'spiral' or comma-separated view ids (default: spiral)")
    s.add_argument("--frames", type=int, default=None, help=f"spiral frame count [config: {d.render.spiral_frames}]")
    s.add_argument("--out", required=True, help="output directory for PNGs")
    s.add_argument("--config", help="YAML whose [render] section replaces the checkpoint's")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="score held-out views", formatter_class=fmt)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", help="manifest split to score (default: test)")
    s.add_argument("--report", default=None, help="CSV report path")
    s.add_argument("--limit", type=int, default=None, help="score only the first N views")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="train and compare all four variants", formatter_class=fmt)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--steps", type=int, help=f"steps per variant [config: {d.train.total_steps}]")
    s.add_argument("--seed", type=int, help=f"shared training seed [config: {d.train.seed}]")
    s.add_argument("--modes", default=None, help="comma-separated subset of modes (default: all four)")
    s.add_argument("--split", default="test", help="manifest split to score (default: test)")
    s.add_argument("--retrain", action="store_true", help="ignore existing checkpoints in --out")
    s.add_argument("--config", help=cfg_help)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (CLIError, FileNotFoundError, KeyError, ValueError, OSError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
