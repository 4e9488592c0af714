"""Pinhole cameras, rays and reflection transforms.

Conventions used throughout the package:

* Extrinsics map world to camera coordinates, ``X_cam = R @ X_world + t``.
* Camera axes follow OpenCV: +x right, +y down, +z forward.
* Pixel ``(u, v)`` is (column, row); integer coordinates address pixel
  centers and the origin is the top-left pixel.
* The canonical symmetry plane is ``x = 0`` in world coordinates.

All batched functions accept tensors with arbitrary leading dimensions and
keep the dtype of their inputs, so the same code runs in float32 for
training and float64 for gradient checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch


class BehindCameraError(ValueError):
    """Raised when a point that must be visible lies at non-positive depth."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")

    @classmethod
    def centered(cls, width: int, height: int, focal: float) -> "CameraIntrinsics":
        """Square-pixel camera whose principal point is the exact image center."""
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraExtrinsics:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "CameraExtrinsics":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> "CameraExtrinsics":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        norm = np.linalg.norm(right)
        if norm < 1e-9:
            raise ValueError("up vector is parallel to the viewing direction")
        right /= norm
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return cls(R, -R @ eye)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    @property
    def optical_axis(self) -> np.ndarray:
        """Unit viewing direction in world coordinates."""
        return self.R[2].copy()

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous world-to-camera transform."""
        E = np.eye(4)
        E[:3, :3] = self.R
        E[:3, 3] = self.t
        return E


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics

    def to_record(self) -> dict:
        i, e = self.intrinsics, self.extrinsics
        return {
            "fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy,
            "width": i.width, "height": i.height,
            "R": [float(v) for v in e.R.reshape(-1)],
            "t": [float(v) for v in e.t],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Camera":
        try:
            intr = CameraIntrinsics(float(rec["fx"]), float(rec["fy"]), float(rec["cx"]),
                                    float(rec["cy"]), int(rec["width"]), int(rec["height"]))
            R = np.asarray(rec["R"], dtype=np.float64)
            t = np.asarray(rec["t"], dtype=np.float64)
        except KeyError as exc:
            raise ValueError(f"camera record missing field {exc}") from None
        if R.size != 9 or t.size != 3:
            raise ValueError("camera record needs 9 rotation and 3 translation entries")
        return cls(intr, CameraExtrinsics(R.reshape(3, 3), t))

    def mirrored(self, sym: "SymmetryTransform") -> "Camera":
        """The camera reflected through the symmetry plane.

        Its image of a reflected scene is the horizontal flip of this camera's
        image of the original scene when ``cx`` is the image center.
        """
        S = sym.M[:3, :3]
        flip = np.diag([-1.0, 1.0, 1.0])
        R = flip @ self.extrinsics.R @ S
        # Mirror the plane offset into t so that the reflected center is exact.
        t = flip @ (self.extrinsics.t + self.extrinsics.R @ sym.M[:3, 3])
        return Camera(self.intrinsics, CameraExtrinsics(R, t))


@dataclass(frozen=True)
class SymmetryTransform:
    """Rigid reflection ``M`` acting on homogeneous world points."""

    M: np.ndarray = field(default_factory=lambda: np.diag([-1.0, 1.0, 1.0, 1.0]))

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.float64).reshape(4, 4)
        A = M[:3, :3]
        if not np.allclose(M[3], [0, 0, 0, 1]):
            raise ValueError("last row of a rigid transform must be (0, 0, 0, 1)")
        if not np.allclose(A.T @ A, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("linear part of a reflection must be orthogonal")
        if abs(np.linalg.det(A) + 1.0) > 1e-9:
            raise ValueError("linear part of a reflection must have determinant -1")
        if not np.allclose(M @ M, np.eye(4), atol=1e-9, rtol=0):
            raise ValueError("reflection must be an involution")
        object.__setattr__(self, "M", M)

    @classmethod
    def plane(cls, normal: Sequence[float], offset: float = 0.0) -> "SymmetryTransform":
        """Reflection about the plane ``normal . X = offset``."""
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        M = np.eye(4)
        M[:3, :3] -= 2.0 * np.outer(n, n)
        M[:3, 3] = 2.0 * offset * n
        return cls(M)

    @classmethod
    def canonical(cls) -> "SymmetryTransform":
        return cls()

    def to_record(self) -> list:
        return [float(v) for v in self.M.reshape(-1)]

    @classmethod
    def from_record(cls, rec) -> "SymmetryTransform":
        return cls(np.asarray(rec, dtype=np.float64).reshape(4, 4))


@dataclass
class Ray:
    origin: torch.Tensor
    direction: torch.Tensor


def _as_tensor(a, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a), dtype=like.dtype, device=like.device)


def transform_points(X: torch.Tensor, extr: CameraExtrinsics) -> torch.Tensor:
    """World to camera coordinates."""
    R = _as_tensor(extr.R, X)
    t = _as_tensor(extr.t, X)
    return X @ R.T + t


def project(X: torch.Tensor, intr: CameraIntrinsics, extr: CameraExtrinsics,
            check: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Perspective projection of world points.

    Returns ``(uv, depth)`` where ``depth`` is the camera-space z. With
    ``check=True`` a point at non-positive depth raises
    :class:`BehindCameraError`; otherwise such points produce meaningless uv
    and callers are expected to mask on ``depth``.
    """
    Xc = transform_points(X, extr)
    depth = Xc[..., 2]
    if check and bool((depth <= 0).any()):
        raise BehindCameraError("point lies at or behind the camera plane")
    z = torch.where(depth.abs() > 1e-12, depth, torch.full_like(depth, 1e-12))
    u = intr.fx * Xc[..., 0] / z + intr.cx
    v = intr.fy * Xc[..., 1] / z + intr.cy
    return torch.stack([u, v], dim=-1), depth


def backproject(uv: torch.Tensor, depth: torch.Tensor, intr: CameraIntrinsics,
                extr: CameraExtrinsics) -> torch.Tensor:
    """World point seen at pixel ``uv`` with camera-space depth ``depth``."""
    x = (uv[..., 0] - intr.cx) / intr.fx * depth
    y = (uv[..., 1] - intr.cy) / intr.fy * depth
    Xc = torch.stack([x, y, depth], dim=-1)
    R = _as_tensor(extr.R, Xc)
    t = _as_tensor(extr.t, Xc)
    return (Xc - t) @ R


def mirror_point(X: torch.Tensor, sym: SymmetryTransform) -> torch.Tensor:
    M = _as_tensor(sym.M, X)
    ones = torch.ones_like(X[..., :1])
    Xh = torch.cat([X, ones], dim=-1) @ M.T
    return Xh[..., :3] / Xh[..., 3:]


def _intrinsics4(intr: CameraIntrinsics) -> np.ndarray:
    K = np.eye(4)
    K[:3, :3] = intr.matrix()
    return K


def symmetric_chain(intr: CameraIntrinsics, extr: CameraExtrinsics,
                    sym: SymmetryTransform) -> np.ndarray:
    """The 4x4 map ``K Rt M Rt^-1 K^-1`` acting on ``[u, v, 1, 1/d]``."""
    K = _intrinsics4(intr)
    E = extr.matrix()
    return K @ E @ sym.M @ np.linalg.inv(E) @ np.linalg.inv(K)


def symmetric_projection(uv: torch.Tensor, depth: torch.Tensor, intr: CameraIntrinsics,
                         extr: CameraExtrinsics, sym: SymmetryTransform
                         ) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel and depth of the mirror image of the point seen at ``(uv, depth)``.

    Applies the chain matrix directly to the normalized projective vector
    ``[u, v, 1, 1/d]``; the result equals ``(d'/d) [u', v', 1, 1/d']``, so
    its third entry recovers the depth ratio.
    """
    if bool((depth <= 0).any()):
        raise BehindCameraError("input depth must be positive")
    C = _as_tensor(symmetric_chain(intr, extr, sym), uv)
    x = torch.cat([uv, torch.ones_like(depth)[..., None], (1.0 / depth)[..., None]], dim=-1)
    y = x @ C.T
    ratio = y[..., 2]
    depth_m = depth * ratio
    if bool((depth_m <= 0).any()):
        raise BehindCameraError("mirrored point lies at or behind the camera plane")
    return y[..., :2] / ratio[..., None], depth_m


def pixel_grid(intr: CameraIntrinsics, dtype=torch.float32) -> torch.Tensor:
    """(H, W, 2) grid of pixel-center coordinates ``(u, v)``."""
    v, u = torch.meshgrid(torch.arange(intr.height, dtype=dtype),
                          torch.arange(intr.width, dtype=dtype), indexing="ij")
    return torch.stack([u, v], dim=-1)


def camera_rays(uv: torch.Tensor, intr: CameraIntrinsics,
                extr: CameraExtrinsics) -> tuple[torch.Tensor, torch.Tensor]:
    """Origins and unit directions (world frame) of rays through pixels ``uv``."""
    x = (uv[..., 0] - intr.cx) / intr.fx
    y = (uv[..., 1] - intr.cy) / intr.fy
    d_cam = torch.stack([x, y, torch.ones_like(x)], dim=-1)
    R = _as_tensor(extr.R, uv)
    d = d_cam @ R
    d = d / torch.linalg.norm(d, dim=-1, keepdim=True)
    origin = _as_tensor(extr.center, uv).expand_as(d)
    return origin, d


def camera_ray(pixel, intr: CameraIntrinsics, extr: CameraExtrinsics,
               dtype=torch.float64) -> Ray:
    o, d = camera_rays(torch.as_tensor(pixel, dtype=dtype), intr, extr)
    return Ray(o, d)


def sample_depths(shape: Sequence[int], near: float, far: float, count: int,
                  stratified: bool = False, generator: Optional[torch.Generator] = None,
                  dtype=torch.float32) -> torch.Tensor:
    """Per-ray sample depths of shape ``(*shape, count)``, one per equal bin."""
    if not near < far:
        raise ValueError(f"need near < far, got near={near}, far={far}")
    if near <= 0:
        raise ValueError("near bound must be positive")
    if count < 1:
        raise ValueError("need at least one sample per ray")
    width = (far - near) / count
    lower = near + width * torch.arange(count, dtype=dtype)
    if stratified:
        jitter = torch.rand((*shape, count), generator=generator, dtype=dtype)
    else:
        jitter = torch.full((*shape, count), 0.5, dtype=dtype)
    return lower + width * jitter


def depth_deltas(depths: torch.Tensor, far: float) -> torch.Tensor:
    """Sample spacing; the last interval extends to the far bound."""
    return torch.cat([depths[..., 1:] - depths[..., :-1], far - depths[..., -1:]], dim=-1)


def sample_along_ray(ray: Ray, near: float, far: float, count: int, stratified: bool = False,
                     seed: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    """Points and intervals along a single ray (or a batch of rays).

    Directions are unit-norm, so the depth spacing equals the point spacing.
    """
    origin, direction = ray.origin, ray.direction
    gen = torch.Generator().manual_seed(seed) if stratified else None
    depths = sample_depths(origin.shape[:-1], near, far, count, stratified, gen, origin.dtype)
    points = origin[..., None, :] + depths[..., None] * direction[..., None, :]
    return points, depth_deltas(depths, far)


def rotation_error(R: np.ndarray) -> float:
    """Largest deviation of ``R^T R`` from identity."""
    return float(np.abs(R.T @ R - np.eye(3)).max())


def angle_between(a, b) -> float:
    """Angle in degrees between two vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))
