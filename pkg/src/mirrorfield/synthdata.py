"""Procedural mirror-symmetric scenes, an exact ray tracer, and posed datasets.

Scenes are unions of spheres, axis-aligned boxes and capsules inside the
unit ball, mirrored across the plane ``x = 0``. The tracer intersects every
pixel ray analytically and shades the nearest hit with a Lambertian
headlight. Every arithmetic step is sign-symmetric in x, so a symmetric
scene seen from a mirrored camera renders to the exact horizontal flip.

On-disk layout::

    <root>/manifest.json
    <root>/scenes/<scene>/cameras.json     # list of camera records
    <root>/scenes/<scene>/scene.json       # primitive description
    <root>/scenes/<scene>/views/<k>.png    # 8-bit RGB
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .config import DataConfig
from .geometry import Camera, CameraExtrinsics, CameraIntrinsics, SymmetryTransform, angle_between

SHAPES = ("sphere", "box", "capsule")
AMBIENT = 0.25
DATASET_FORMAT = "mirrorfield-dataset/1"
_EPS = 1e-9


@dataclass(frozen=True)
class Primitive:
    """One solid. ``size`` is ``(radius,)`` for spheres, half-extents for
    boxes and ``(half_length, radius)`` for capsules along unit ``axis``."""

    shape: str
    center: tuple
    size: tuple
    albedo: tuple
    axis: tuple = (0.0, 0.0, 1.0)

    def mirrored(self, sym: SymmetryTransform) -> "Primitive":
        S, m = sym.M[:3, :3], sym.M[:3, 3]
        center = S @ np.asarray(self.center) + m
        axis = S @ np.asarray(self.axis)
        return Primitive(self.shape, tuple(center), self.size, self.albedo, tuple(axis))

    def to_record(self) -> dict:
        return {"shape": self.shape, "center": list(self.center), "size": list(self.size),
                "albedo": list(self.albedo), "axis": list(self.axis)}

    @classmethod
    def from_record(cls, rec: dict) -> "Primitive":
        return cls(rec["shape"], tuple(map(float, rec["center"])), tuple(map(float, rec["size"])),
                   tuple(map(float, rec["albedo"])), tuple(map(float, rec.get("axis", (0, 0, 1)))))


@dataclass
class SceneSpec:
    primitives: list
    symmetry: SymmetryTransform = field(default_factory=SymmetryTransform.canonical)
    perturbation: float = 0.0

    def to_record(self) -> dict:
        return {"primitives": [p.to_record() for p in self.primitives],
                "symmetry": self.symmetry.to_record(), "perturbation": self.perturbation}

    @classmethod
    def from_record(cls, rec: dict) -> "SceneSpec":
        return cls([Primitive.from_record(p) for p in rec["primitives"]],
                   SymmetryTransform.from_record(rec["symmetry"]), float(rec.get("perturbation", 0.0)))

    def is_symmetric(self, tol: float = 0.0) -> bool:
        """Whether every primitive has a mirror partner of equal albedo."""
        for p in self.primitives:
            q = p.mirrored(self.symmetry)
            if not any(_same_primitive(q, r, tol) for r in self.primitives):
                return False
        return True


def _same_primitive(a: Primitive, b: Primitive, tol: float) -> bool:
    if a.shape != b.shape:
        return False
    close = lambda x, y: np.allclose(x, y, atol=tol, rtol=0)
    if not (close(a.center, b.center) and close(a.size, b.size) and close(a.albedo, b.albedo)):
        return False
    if a.shape == "capsule":
        return close(a.axis, b.axis) or close(a.axis, -np.asarray(b.axis))
    return True


@dataclass
class ViewRecord:
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    camera: Camera
    scene_id: str = ""
    view_id: int = 0

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.camera.intrinsics

    @property
    def extrinsics(self) -> CameraExtrinsics:
        return self.camera.extrinsics


# --------------------------------------------------------------------------
# scene generation

def _unit_vector(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _random_primitive(rng, on_plane: bool) -> Primitive:
    shape = SHAPES[rng.integers(len(SHAPES))]
    if on_plane:
        center = np.array([0.0, rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)])
    else:
        while True:
            center = np.array([rng.uniform(0.2, 0.65), rng.uniform(-0.6, 0.6), rng.uniform(-0.5, 0.5)])
            if np.linalg.norm(center) <= 0.75:
                break
    albedo = tuple(rng.uniform(0.1, 0.95, size=3))
    axis = (0.0, 0.0, 1.0)
    if shape == "sphere":
        size = (rng.uniform(0.15, 0.35),)
    elif shape == "box":
        size = tuple(rng.uniform(0.1, 0.28, size=3))
    else:
        size = (rng.uniform(0.15, 0.32), rng.uniform(0.08, 0.16))
        a = _unit_vector(rng)
        if on_plane:
            # an on-plane capsule must map to itself
            a = np.array([0.0, a[1], a[2]]) if rng.uniform() < 0.7 else np.array([1.0, 0.0, 0.0])
            a /= np.linalg.norm(a)
        axis = tuple(a)
    return Primitive(shape, tuple(center), tuple(size), albedo, axis)


def generate_scene(seed: int, num_primitives: int = 3, perturbation: float = 0.0,
                   on_plane_prob: float = 0.3) -> SceneSpec:
    """Random scene symmetric about ``x = 0``, optionally perturbed.

    Each of ``num_primitives`` draws is either a single primitive centered on
    the plane or a pair placed at ``+x`` and its mirror at ``-x``. With
    ``perturbation > 0`` every primitive's center and albedo receive
    independent noise of that amplitude.
    """
    if num_primitives < 1:
        raise ValueError("need at least one primitive")
    rng = np.random.default_rng(seed)
    sym = SymmetryTransform.canonical()
    prims = []
    for _ in range(num_primitives):
        on_plane = rng.uniform() < on_plane_prob
        p = _random_primitive(rng, on_plane)
        prims.append(p)
        if not on_plane:
            prims.append(p.mirrored(sym))
    if perturbation > 0:
        noisy = []
        for p in prims:
            c = np.asarray(p.center) + perturbation * rng.uniform(-1, 1, size=3)
            a = np.clip(np.asarray(p.albedo) + perturbation * rng.uniform(-1, 1, size=3), 0.0, 1.0)
            noisy.append(Primitive(p.shape, tuple(c), p.size, tuple(a), p.axis))
        prims = noisy
    return SceneSpec(prims, sym, float(perturbation))


# --------------------------------------------------------------------------
# exact ray tracing

def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _hit_sphere(o, d, center, radius):
    oc = o - center
    b = _dot(oc, d)
    c = _dot(oc, oc) - radius * radius
    disc = b * b - c
    ok = disc >= 0
    t = -b - np.sqrt(np.where(ok, disc, 0.0))
    t = np.where(ok & (t > _EPS), t, np.inf)
    n = (o + np.where(ok, t, 0.0)[..., None] * d - center) / radius
    return t, n


def _hit_box(o, d, center, half):
    lo = np.asarray(center) - np.asarray(half)
    hi = np.asarray(center) + np.asarray(half)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    tnear = np.nan_to_num(np.minimum(t1, t2), nan=-np.inf)
    tfar = np.nan_to_num(np.maximum(t1, t2), nan=np.inf)
    t0 = tnear.max(axis=-1)
    t1m = tfar.min(axis=-1)
    ok = (t1m >= t0) & (t0 > _EPS)
    t = np.where(ok, t0, np.inf)
    axis = tnear.argmax(axis=-1)
    n = np.zeros_like(o)
    sign = -np.sign(np.take_along_axis(d, axis[..., None], axis=-1))[..., 0]
    np.put_along_axis(n, axis[..., None], sign[..., None], axis=-1)
    return t, n


def _hit_capsule(o, d, center, half_length, radius, axis):
    axis = np.asarray(axis)
    a = np.asarray(center) - half_length * axis
    b = np.asarray(center) + half_length * axis
    ba = b - a
    oa = o - a
    baba = float(ba @ ba)
    bard = _dot(d, ba)
    baoa = _dot(oa, ba)
    rdoa = _dot(d, oa)
    oaoa = _dot(oa, oa)
    qa = baba - bard * bard
    qb = baba * rdoa - baoa * bard
    qc = baba * oaoa - baoa * baoa - radius * radius * baba
    h = qb * qb - qa * qc
    body_ok = (h >= 0) & (qa > 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        tb = (-qb - np.sqrt(np.where(body_ok, h, 0.0))) / np.where(body_ok, qa, 1.0)
    y = baoa + tb * bard
    body_ok &= (y > 0) & (y < baba) & (tb > _EPS)
    tb = np.where(body_ok, tb, np.inf)
    ta, _ = _hit_sphere(o, d, a, radius)
    tc, _ = _hit_sphere(o, d, b, radius)
    t = np.minimum(tb, np.minimum(ta, tc))
    p = o + np.where(np.isfinite(t), t, 0.0)[..., None] * d
    pa = p - a
    s = np.clip(_dot(pa, ba) / baba, 0.0, 1.0)
    n = (pa - s[..., None] * ba) / radius
    return t, n


def _hit(prim: Primitive, o, d):
    if prim.shape == "sphere":
        return _hit_sphere(o, d, np.asarray(prim.center), prim.size[0])
    if prim.shape == "box":
        return _hit_box(o, d, prim.center, prim.size)
    if prim.shape == "capsule":
        return _hit_capsule(o, d, prim.center, prim.size[0], prim.size[1], prim.axis)
    raise ValueError(f"unknown primitive shape {prim.shape!r}")


def _pixel_rays(camera: Camera):
    intr, extr = camera.intrinsics, camera.extrinsics
    v, u = np.meshgrid(np.arange(intr.height, dtype=np.float64),
                       np.arange(intr.width, dtype=np.float64), indexing="ij")
    x = (u - intr.cx) / intr.fx
    y = (v - intr.cy) / intr.fy
    R = extr.R
    # explicit sums keep every term sign-symmetric under reflection
    d = np.stack([R[0, j] * x + R[1, j] * y + R[2, j] for j in range(3)], axis=-1)
    d = d / np.sqrt(_dot(d, d))[..., None]
    c = extr.center
    o = np.broadcast_to(c, d.shape)
    return o, d


def oracle_render(scene: SceneSpec, camera: Camera, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Ground-truth ``(H, W, 3)`` image of ``scene`` in [0, 1]."""
    o, d = _pixel_rays(camera)
    H, W = d.shape[:2]
    best_t = np.full((H, W), np.inf)
    color = np.empty((H, W, 3))
    color[:] = np.asarray(background, dtype=np.float64)
    for prim in scene.primitives:
        t, n = _hit(prim, o, d)
        closer = t < best_t
        if not closer.any():
            continue
        shade = AMBIENT + (1.0 - AMBIENT) * np.clip(-_dot(n, d), 0.0, 1.0)
        color[closer] = shade[closer][:, None] * np.asarray(prim.albedo)
        best_t = np.where(closer, t, best_t)
    return color


# --------------------------------------------------------------------------
# datasets

def orbit_camera(azimuth_deg: float, elevation_deg: float, distance: float,
                 image_size: int, focal_factor: float) -> Camera:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    eye = distance * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    intr = CameraIntrinsics.centered(image_size, image_size, focal_factor * image_size)
    return Camera(intr, CameraExtrinsics.look_at(eye))


def scene_cameras(rng, views: int, cfg: DataConfig, image_size: int) -> list[Camera]:
    offset = rng.uniform(0.0, 360.0)
    cams = []
    for k in range(views):
        az = (offset + 360.0 * k / views) % 360.0
        el = rng.uniform(cfg.elevation_min, cfg.elevation_max)
        cams.append(orbit_camera(az, el, cfg.camera_distance, image_size, cfg.focal_factor))
    return cams


def pose_delta(a: Camera, b: Camera) -> float:
    """Angle in degrees between two cameras' optical axes."""
    return angle_between(a.extrinsics.optical_axis, b.extrinsics.optical_axis)


def save_png(path: Path, image: np.ndarray):
    from .renderer import to_uint8
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def load_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def make_dataset(out_dir, num_scenes: int, views_per_scene: int, image_size: int, seed: int,
                 cfg: Optional[DataConfig] = None) -> dict:
    """Generate scenes, render every view and write the dataset to ``out_dir``.

    The first ``cfg.holdout_scenes`` scenes are evaluation-only: their view 0
    is the reference and every view at least ``cfg.min_test_angle`` away is a
    test target. In the remaining scenes ``cfg.heldout_views`` such views are
    withheld as test targets and the rest are training views.
    """
    cfg = cfg or DataConfig()
    if num_scenes < 1 or views_per_scene < 2:
        raise ValueError("need at least one scene and two views per scene")
    root = Path(out_dir)
    if not root.parent.exists():
        raise FileNotFoundError(f"parent directory does not exist: {root.parent}")
    root.mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    scene_seeds = rng.integers(0, 2**31 - 1, size=num_scenes)
    scenes, references, train, test = [], {}, [], []
    for s in range(num_scenes):
        sid = f"{s:04d}"
        srng = np.random.default_rng(int(scene_seeds[s]))
        scene = generate_scene(int(srng.integers(2**31 - 1)), cfg.num_primitives, cfg.perturbation)
        cams = scene_cameras(srng, views_per_scene, cfg, image_size)
        sdir = root / "scenes" / sid
        (sdir / "views").mkdir(parents=True, exist_ok=True)
        for k, cam in enumerate(cams):
            save_png(sdir / "views" / f"{k}.png", oracle_render(scene, cam, cfg.background))
        _write_json(sdir / "cameras.json", [c.to_record() for c in cams])
        _write_json(sdir / "scene.json", scene.to_record())
        far = [k for k in range(1, views_per_scene) if pose_delta(cams[0], cams[k]) >= cfg.min_test_angle]
        if s < cfg.holdout_scenes:
            held = far
        else:
            n_held = min(cfg.heldout_views, len(far))
            held = sorted(int(k) for k in srng.choice(far, size=n_held, replace=False)) if n_held else []
            train += [[sid, k] for k in range(views_per_scene) if k not in held]
        test += [[sid, k] for k in held]
        scenes.append(sid)
        references[sid] = 0
    manifest = {
        "format": DATASET_FORMAT,
        "image_size": image_size,
        "views_per_scene": views_per_scene,
        "seed": seed,
        "background": list(cfg.background),
        "scenes": scenes,
        "reference_views": references,
        "split": {"train": train, "test": test},
        "data_config": {k: v for k, v in vars(cfg).items()},
    }
    _write_json(root / "manifest.json", manifest)
    return manifest


class Dataset:
    """Lazily loaded view of a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        mpath = self.root / "manifest.json"
        if not mpath.is_file():
            raise FileNotFoundError(f"no manifest.json in {self.root}")
        try:
            self.manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt manifest {mpath}: {exc}") from None
        if self.manifest.get("format") != DATASET_FORMAT:
            raise ValueError(f"{mpath} is not a {DATASET_FORMAT} manifest")
        self.image_size = int(self.manifest["image_size"])
        self.background = list(self.manifest["background"])
        self._cameras: dict[str, list[Camera]] = {}
        self._images: dict[tuple, np.ndarray] = {}

    @property
    def scenes(self) -> list[str]:
        return list(self.manifest["scenes"])

    def split(self, name: str) -> list[tuple[str, int]]:
        if name not in self.manifest["split"]:
            raise KeyError(f"unknown split {name!r}; have {sorted(self.manifest['split'])}")
        return [(s, int(k)) for s, k in self.manifest["split"][name]]

    @cached_property
    def train_views(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for s, k in self.split("train"):
            out.setdefault(s, []).append(k)
        return out

    def reference_view(self, scene: str) -> int:
        return int(self.manifest["reference_views"][scene])

    def cameras(self, scene: str) -> list[Camera]:
        if scene not in self._cameras:
            if scene not in self.manifest["scenes"]:
                raise KeyError(f"unknown scene {scene!r}")
            path = self.root / "scenes" / scene / "cameras.json"
            if not path.is_file():
                raise FileNotFoundError(f"missing camera file {path}")
            try:
                recs = json.loads(path.read_text())
                self._cameras[scene] = [Camera.from_record(r) for r in recs]
            except (json.JSONDecodeError, ValueError) as exc:
                raise ValueError(f"invalid camera file {path}: {exc}") from None
        return self._cameras[scene]

    def scene_spec(self, scene: str) -> SceneSpec:
        path = self.root / "scenes" / scene / "scene.json"
        return SceneSpec.from_record(json.loads(path.read_text()))

    def image(self, scene: str, view: int) -> np.ndarray:
        key = (scene, view)
        if key not in self._images:
            path = self.root / "scenes" / scene / "views" / f"{view}.png"
            if not path.is_file():
                raise FileNotFoundError(f"missing image {path}")
            img = load_png(path)
            if img.shape != (self.image_size, self.image_size, 3):
                raise ValueError(f"{path} has shape {img.shape}, expected {self.image_size}^2 RGB")
            self._images[key] = img
        return self._images[key]

    def view(self, scene: str, view: int) -> ViewRecord:
        cams = self.cameras(scene)
        if not 0 <= view < len(cams):
            raise KeyError(f"scene {scene} has no view {view}")
        return ViewRecord(self.image(scene, view), cams[view], scene, view)


def load_dataset(root) -> Dataset:
    return Dataset(root)
