"""Spherical range-image projection and back-projection.

Pixel coordinates for a point with range ``r``::

    yaw   = atan2(y, x)
    pitch = asin(z / r)
    u = floor(0.5 * (1 - yaw / pi) * W)                                clamped to [0, W-1]
    v = floor((1 - (pitch - fov_down) / (fov_up - fov_down)) * H)      clamped to [0, H-1]

When several points fall into one pixel the nearest one wins; equal ranges
(at float32 precision) go to the lower point index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_points
from .dataset_io import IGNORE

R_MIN = 1e-6
CHANNELS = ("range", "x", "y", "z", "remission")


@dataclass(frozen=True)
class ProjConfig:
    height: int = 64
    width: int = 2048
    fov_up: float = 3.0
    fov_down: float = -25.0

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise ValueError(f"image size must be positive, got {self.height}x{self.width}")
        if not self.fov_up > self.fov_down:
            raise ValueError(f"fov_up ({self.fov_up}) must exceed fov_down ({self.fov_down})")
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "fov_up", float(self.fov_up))
        object.__setattr__(self, "fov_down", float(self.fov_down))

    @property
    def shape(self):
        return (self.height, self.width)


@dataclass
class RangeImage:
    """Projected scan.

    ``channels`` is ``(5, H, W)`` float32 holding range, x, y, z, remission.
    ``index`` holds the winning point per pixel (-1 where empty). ``point_u``
    and ``point_v`` give every input point's own pixel (-1 for skipped points),
    so occluded points can still be mapped back.
    """

    channels: np.ndarray
    index: np.ndarray
    valid: np.ndarray
    point_u: np.ndarray
    point_v: np.ndarray
    config: ProjConfig
    skipped: int = 0

    @property
    def range(self):
        return self.channels[0]

    @property
    def shape(self):
        return self.valid.shape

    @property
    def n_points(self):
        return len(self.point_u)


def pixel_coords(points, cfg):
    """Return ``(u, v, r, keep)`` for every point; ``keep`` is False below ``R_MIN``."""
    xyz = np.asarray(points)[:, :3].astype(np.float64)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    keep = r > R_MIN
    safe_r = np.where(keep, r, 1.0)

    yaw = np.arctan2(y, x)
    pitch = np.arcsin(np.clip(z / safe_r, -1.0, 1.0))
    fov_up = np.radians(cfg.fov_up)
    fov_down = np.radians(cfg.fov_down)

    u = np.floor(0.5 * (1.0 - yaw / np.pi) * cfg.width)
    v = np.floor((1.0 - (pitch - fov_down) / (fov_up - fov_down)) * cfg.height)
    u = np.clip(u, 0, cfg.width - 1).astype(np.int64)
    v = np.clip(v, 0, cfg.height - 1).astype(np.int64)
    return u, v, r, keep


def _select_winners(u, v, r, keep, cfg):
    """Flat pixel ids and the nearest point in each; ties go to the lower index."""
    idx = np.flatnonzero(keep)
    pix = v[idx] * cfg.width + u[idx]
    r32 = r[idx].astype(np.float32)
    # float32 bit patterns of non-negative floats sort like the values;
    # the low 32 bits carry the point index as tie-break
    key = (r32.view(np.int32).astype(np.int64) << 32) | idx
    order = np.argsort(key)
    rank = np.empty(len(idx), dtype=np.int64)
    rank[order] = np.arange(len(idx))
    best = np.full(cfg.height * cfg.width, len(idx), dtype=np.int64)
    np.minimum.at(best, pix, rank)
    flat = np.flatnonzero(best < len(idx))
    return flat, idx[order[best[flat]]]


def range_grid(points, cfg):
    """Range channel alone, 0 at empty pixels; same winners as :func:`project`."""
    u, v, r, keep = pixel_coords(points, cfg)
    flat, winners = _select_winners(u, v, r, keep, cfg)
    out = np.zeros(cfg.height * cfg.width, dtype=np.float32)
    out[flat] = r[winners]
    return out.reshape(cfg.shape)


def project(scan, cfg=None):
    """Project an ``(N, 3+)`` point array into a :class:`RangeImage`."""
    cfg = cfg or ProjConfig()
    pts = check_points(scan, name="scan")
    n = len(pts)
    H, W = cfg.shape
    u, v, r, keep = pixel_coords(pts, cfg)

    flat, winners = _select_winners(u, v, r, keep, cfg)
    index = np.full(H * W, -1, dtype=np.int64)
    index[flat] = winners
    index = index.reshape(H, W)
    valid = index >= 0

    channels = np.zeros((5, H * W), dtype=np.float32)
    channels[0, flat] = r[winners]
    channels[1:4, flat] = pts[winners, :3].T
    if pts.shape[1] > 3:
        channels[4, flat] = pts[winners, 3]
    channels = channels.reshape(5, H, W)

    point_u = np.where(keep, u, -1)
    point_v = np.where(keep, v, -1)
    return RangeImage(channels, index, valid, point_u, point_v, cfg,
                      skipped=int(n - np.count_nonzero(keep)))


def back_project(pixel_values, image, default=0):
    """Give every point of the projected scan the value of its own pixel.

    Points that were skipped, or whose pixel is empty, receive ``default``.
    ``pixel_values`` may carry trailing feature dimensions after ``(H, W)``.
    """
    grid = np.asarray(pixel_values)
    if grid.shape[:2] != image.shape:
        raise ValueError(f"grid shape {grid.shape[:2]} does not match image {image.shape}")
    n = image.n_points
    out = np.empty((n,) + grid.shape[2:], dtype=np.result_type(grid.dtype, np.min_scalar_type(default)))
    out[...] = default
    ok = image.point_u >= 0
    u, v = image.point_u[ok], image.point_v[ok]
    lands = image.valid[v, u]
    sel = np.flatnonzero(ok)[lands]
    out[sel] = grid[v[lands], u[lands]]
    return out


def label_image(labels, image):
    """Per-pixel motion and mobility labels taken from each pixel's winning point."""
    if len(labels.motion) != image.n_points:
        raise ValueError(f"{len(labels.motion)} labels for {image.n_points} projected points")
    motion = np.full(image.shape, IGNORE, dtype=np.int8)
    mobility = np.full(image.shape, IGNORE, dtype=np.int8)
    winners = image.index[image.valid]
    motion[image.valid] = labels.motion[winners]
    mobility[image.valid] = labels.mobility[winners]
    return motion, mobility


# -- dumps ------------------------------------------------------------------
# .rimg layout: uint32 H, W, C; float32 fov_up, fov_down; float32 channels
# (C, H, W); int32 index (H, W). All little-endian.

def save_range_image(image, path):
    H, W = image.shape
    cfg = image.config
    with open(path, "wb") as f:
        f.write(np.array([H, W, image.channels.shape[0]], dtype="<u4").tobytes())
        f.write(np.array([cfg.fov_up, cfg.fov_down], dtype="<f4").tobytes())
        f.write(image.channels.astype("<f4").tobytes())
        f.write(image.index.astype("<i4").tobytes())


def load_range_image(path):
    """Load a ``.rimg`` dump. Per-point pixel coordinates are not stored."""
    raw = Path(path).read_bytes()
    H, W, C = np.frombuffer(raw[:12], dtype="<u4")
    fov_up, fov_down = np.frombuffer(raw[12:20], dtype="<f4")
    off = 20
    n_ch = int(C) * int(H) * int(W) * 4
    channels = np.frombuffer(raw[off:off + n_ch], dtype="<f4").reshape(C, H, W).astype(np.float32)
    index = np.frombuffer(raw[off + n_ch:], dtype="<i4").reshape(H, W).astype(np.int64)
    cfg = ProjConfig(int(H), int(W), float(fov_up), float(fov_down))
    empty = np.empty(0, dtype=np.int64)
    return RangeImage(channels, index, index >= 0, empty, empty, cfg)


def save_png(image, path, channel=0):
    """Write one channel as 8-bit grayscale, scaled so the maximum maps to 255."""
    from PIL import Image

    data = image.channels[channel].astype(np.float64)
    lo = data[image.valid].min() if image.valid.any() else 0.0
    hi = data[image.valid].max() if image.valid.any() else 1.0
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pix = np.where(image.valid, (data - lo) * scale, 0.0)
    Image.fromarray(np.clip(np.round(pix), 0, 255).astype(np.uint8), mode="L").save(path)


class RangeProjector(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`project`.

    ``transform`` takes a list of scans and returns the stacked channel images
    with shape ``(n_scans, 5, H, W)``; ``project_one`` returns the full
    :class:`RangeImage`.
    """

    def __init__(self, height=64, width=2048, fov_up=3.0, fov_down=-25.0):
        self.height = height
        self.width = width
        self.fov_up = fov_up
        self.fov_down = fov_down

    def fit(self, X=None, y=None):
        self.config_ = ProjConfig(self.height, self.width, self.fov_up, self.fov_down)
        return self

    def _config(self):
        return getattr(self, "config_", None) or ProjConfig(
            self.height, self.width, self.fov_up, self.fov_down
        )

    def project_one(self, scan):
        return project(scan, self._config())

    def transform(self, X):
        return np.stack([self.project_one(scan).channels for scan in X])
