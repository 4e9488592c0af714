"""Brute-force reference implementations used by the tests.

Each oracle is written directly from its definition in plain numpy and
shares no code with the package.
"""
import math

import numpy as np

from mirrorfield.geometry import Camera, CameraExtrinsics, CameraIntrinsics, SymmetryTransform


def random_camera(rng, size: int = 64) -> Camera:
    az = rng.uniform(0, 2 * math.pi)
    el = rng.uniform(-1.2, 1.2)
    dist = rng.uniform(2.5, 4.0)
    eye = dist * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    target = rng.uniform(-0.3, 0.3, size=3)
    f = rng.uniform(0.8, 2.0) * size
    intr = CameraIntrinsics(f, f * rng.uniform(0.9, 1.1), rng.uniform(0.3, 0.7) * size,
                            rng.uniform(0.3, 0.7) * size, size, size)
    return Camera(intr, CameraExtrinsics.look_at(eye, target))


def random_reflection(rng) -> SymmetryTransform:
    n = rng.normal(size=3)
    return SymmetryTransform.plane(n / np.linalg.norm(n), rng.uniform(-0.3, 0.3))


def _K4(intr):
    K = np.eye(4)
    K[0, 0], K[1, 1], K[0, 2], K[1, 2] = intr.fx, intr.fy, intr.cx, intr.cy
    return K


def _E4(extr):
    E = np.eye(4)
    E[:3, :3], E[:3, 3] = extr.R, extr.t
    return E


def np_project(X, cam: Camera):
    """Homogeneous 4x4 product followed by the perspective divide."""
    X = np.atleast_2d(X)
    Xh = np.concatenate([X, np.ones((len(X), 1))], axis=1)
    y = Xh @ (_K4(cam.intrinsics) @ _E4(cam.extrinsics)).T
    return y[:, :2] / y[:, 2:3], y[:, 2]


def np_backproject(uv, depth, intr, extr):
    uv = np.atleast_2d(uv)
    Xc = np.stack([(uv[:, 0] - intr.cx) / intr.fx * depth,
                   (uv[:, 1] - intr.cy) / intr.fy * depth, depth], axis=1)
    return (Xc - extr.t) @ extr.R


def np_mirror(X, sym):
    Xh = np.concatenate([X, np.ones((len(X), 1))], axis=1) @ sym.M.T
    return Xh[:, :3]


def brute_symmetric_projection(uv, depth, intr, extr, sym):
    X = np_backproject(uv, depth, intr, extr)
    return np_project(np_mirror(X, sym), Camera(intr, extr))


def bilinear(volume, u, v):
    """Scalar-loop bilinear lookup; edge-held inside the image, zero outside."""
    H, W, n = volume.shape
    if not (-0.5 <= u <= W - 0.5 and -0.5 <= v <= H - 0.5):
        return np.zeros(n)
    u, v = min(max(u, 0.0), W - 1.0), min(max(v, 0.0), H - 1.0)
    u0, v0 = int(math.floor(u)), int(math.floor(v))
    out = np.zeros(n)
    for du in (0, 1):
        for dv in (0, 1):
            wu = (u - u0) if du else (1 - (u - u0))
            wv = (v - v0) if dv else (1 - (v - v0))
            if wu * wv == 0:
                continue
            out += wu * wv * volume[min(v0 + dv, H - 1), min(u0 + du, W - 1)]
    return out


def composite_loop(colors, sigmas, deltas, background):
    """Front-to-back accumulation, one sample at a time."""
    T = 1.0
    pixel = np.zeros(3)
    weights = []
    for c, s, d in zip(colors, sigmas, deltas):
        alpha = 1.0 - math.exp(-s * d)
        weights.append(T * alpha)
        pixel += T * alpha * np.asarray(c)
        T *= 1.0 - alpha
    return pixel + T * np.asarray(background), np.array(weights), T


def ssim_naive(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Per-window SSIM with explicit loops over window positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    ax = np.arange(size) - (size - 1) / 2
    g = np.array([[math.exp(-(x * x + y * y) / (2 * sigma * sigma)) for x in ax] for y in ax])
    g /= g.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    H, W, C = a.shape
    per_channel = []
    for c in range(C):
        vals = []
        for i in range(H - size + 1):
            for j in range(W - size + 1):
                x = a[i:i + size, j:j + size, c]
                y = b[i:i + size, j:j + size, c]
                mx, my = (g * x).sum(), (g * y).sum()
                vx = (g * (x - mx) ** 2).sum()
                vy = (g * (y - my) ** 2).sum()
                cov = (g * (x - mx) * (y - my)).sum()
                vals.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
        per_channel.append(np.mean(vals))
    return float(np.mean(per_channel))


def mlp_forward(theta, layers, h, depth):
    """Field MLP evaluated from a flat parameter vector, one layer at a time."""
    silu = lambda x: x / (1 + np.exp(-x))
    params, pos = {}, 0
    for name, fi, fo in layers:
        W = theta[pos:pos + fi * fo].reshape(fi, fo)
        b = theta[pos + fi * fo:pos + (fi + 1) * fo]
        params[name] = (W, b)
        pos += (fi + 1) * fo
    for i in range(depth):
        W, b = params[f"trunk{i}"]
        h = silu(h @ W + b)
    W, b = params["density"]
    sigma = np.log1p(np.exp(h @ W + b))[..., 0]
    W, b = params["color0"]
    c = silu(h @ W + b)
    W, b = params["color1"]
    rgb = 1 / (1 + np.exp(-(c @ W + b)))
    return rgb, sigma
