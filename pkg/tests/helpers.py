"""Test-side oracles that must stay independent of the package code paths."""

import math

import numpy as np


def project_point(x, y, z, H, W, fov_up_deg, fov_down_deg):
    """Scalar evaluation of the projection formula; ``None`` for zero range."""
    r = math.sqrt(x * x + y * y + z * z)
    if r <= 1e-6:
        return None
    yaw = math.atan2(y, x)
    pitch = math.asin(max(-1.0, min(1.0, z / r)))
    up, down = math.radians(fov_up_deg), math.radians(fov_down_deg)
    u = math.floor(0.5 * (1.0 - yaw / math.pi) * W)
    v = math.floor((1.0 - (pitch - down) / (up - down)) * H)
    return min(max(u, 0), W - 1), min(max(v, 0), H - 1), r


def brute_force_winners(points, H, W, fov_up, fov_down):
    """Map pixel -> (range, index) of the nearest point, ties to the lower index."""
    best = {}
    for i, p in enumerate(points):
        hit = project_point(float(p[0]), float(p[1]), float(p[2]), H, W, fov_up, fov_down)
        if hit is None:
            continue
        u, v, r = hit
        r32 = float(np.float32(r))
        cur = best.get((v, u))
        if cur is None or (r32, i) < cur:
            best[(v, u)] = (r32, i)
    return best


def distinct_pixel_scan(rng, n, H=64, W=2048, fov_up=3.0, fov_down=-25.0):
    """Points placed at distinct pixel centres with random ranges."""
    flat = rng.choice(H * W, size=n, replace=False)
    v, u = np.divmod(flat, W)
    fov = math.radians(fov_up - fov_down)
    pitch = math.radians(fov_up) - (v + 0.5) * fov / H
    yaw = math.pi * (1.0 - 2.0 * (u + 0.5) / W)
    r = rng.uniform(2.0, 80.0, n)
    pts = np.empty((n, 4), dtype=np.float32)
    pts[:, 0] = r * np.cos(pitch) * np.cos(yaw)
    pts[:, 1] = r * np.cos(pitch) * np.sin(yaw)
    pts[:, 2] = r * np.sin(pitch)
    pts[:, 3] = rng.uniform(0, 1, n)
    return pts, v, u


def random_rigid(rng, trans_scale=5.0):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    T = np.eye(4)
    T[:3, :3] = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ]
    T[:3, 3] = rng.normal(0, trans_scale, 3)
    return T
