"""Deterministic synthetic LiDAR sequences and a residual-threshold segmenter.

Scenes are built from a ground plane, an optional spherical backdrop that
encloses the sensor, and axis-aligned box actors moving at constant velocity.
Each frame draws its range noise from its own seed-derived stream, so frames
can be generated in any order and still match a serial run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset_io import MOVING, STATIC, pack_labels
from .metrics import ConfusionMatrix, iou

V_MIN = 0.1
GROUND_CLASS = 40
BACKDROP_CLASS = 50
MOVING_COUNTERPART = {10: 252, 11: 253, 31: 253, 30: 254, 15: 255, 32: 255,
                      16: 256, 13: 257, 18: 258, 20: 259}


@dataclass
class SensorConfig:
    rings: int = 64
    azimuth_steps: int = 2048
    fov_up: float = 3.0
    fov_down: float = -25.0
    noise_sigma: float = 0.01
    max_range: float = 120.0

    def __post_init__(self):
        if self.rings < 1 or self.azimuth_steps < 1:
            raise ValueError("sensor needs at least one ring and one azimuth step")
        if not self.fov_up > self.fov_down:
            raise ValueError("sensor fov_up must exceed fov_down")
        if self.noise_sigma < 0 or self.max_range <= 0:
            raise ValueError("noise sigma must be >= 0 and max range > 0")

    def directions(self):
        """Unit ray directions in the sensor frame, ring-major ``(rings * steps, 3)``.

        Rays sit at the pixel centres of the matching range-image grid.
        """
        fov = np.radians(self.fov_up - self.fov_down)
        pitch = np.radians(self.fov_up) - (np.arange(self.rings) + 0.5) * fov / self.rings
        yaw = np.pi * (1.0 - 2.0 * (np.arange(self.azimuth_steps) + 0.5) / self.azimuth_steps)
        P, Y = np.meshgrid(pitch, yaw, indexing="ij")
        cp = np.cos(P)
        return np.stack([cp * np.cos(Y), cp * np.sin(Y), np.sin(P)], axis=-1).reshape(-1, 3)


@dataclass
class Actor:
    center: tuple
    extents: tuple
    class_id: int = 10
    velocity: tuple = (0.0, 0.0, 0.0)
    remission: float = 0.6

    def __post_init__(self):
        self.center = tuple(float(v) for v in self.center)
        self.extents = tuple(float(v) for v in self.extents)
        self.velocity = tuple(float(v) for v in self.velocity)
        if any(e <= 0 for e in self.extents):
            raise ValueError(f"actor extents must be positive, got {self.extents}")
        if self.class_id not in MOVING_COUNTERPART:
            raise ValueError(f"actor class {self.class_id} has no moving counterpart id")

    @property
    def speed(self):
        return float(np.linalg.norm(self.velocity))

    def bounds(self, frame):
        c = np.asarray(self.center) + frame * np.asarray(self.velocity)
        half = np.asarray(self.extents) / 2.0
        return c - half, c + half


@dataclass
class SceneConfig:
    ego_poses: list
    actors: list = field(default_factory=list)
    ground_extent: float | None = 60.0
    ground_z: float = 0.0
    backdrop_radius: float | None = None
    backdrop_center: tuple = (0.0, 0.0, 0.0)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    seed: int = 0
    v_min: float = V_MIN

    def __post_init__(self):
        self.ego_poses = [np.asarray(p, dtype=np.float64) for p in self.ego_poses]
        self.actors = [a if isinstance(a, Actor) else Actor(**a) for a in self.actors]
        if isinstance(self.sensor, dict):
            self.sensor = SensorConfig(**self.sensor)
        if not self.ego_poses:
            raise ValueError("scene needs at least one ego pose")

    def is_moving(self, actor):
        return actor.speed > self.v_min

    def pose(self, frame):
        return self.ego_poses[min(frame, len(self.ego_poses) - 1)]

    def to_dict(self):
        d = asdict(self)
        d["ego_poses"] = [np.asarray(p).tolist() for p in self.ego_poses]
        d["actors"] = [asdict(a) for a in self.actors]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["sensor"] = SensorConfig(**d.get("sensor", {}))
        d["actors"] = [Actor(**a) for a in d.get("actors", [])]
        for key in ("backdrop_center",):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def ego_trajectory(frames, speed=0.5, yaw_rate_deg=0.0, height=1.73, start=(0.0, 0.0)):
    """Poses of a sensor driving forward at ``speed`` m/frame while turning."""
    poses = []
    x, y = start
    heading = 0.0
    for _ in range(frames):
        c, s = np.cos(heading), np.sin(heading)
        T = np.eye(4)
        T[:2, :2] = [[c, -s], [s, c]]
        T[:3, 3] = (x, y, height)
        poses.append(T)
        x += speed * c
        y += speed * s
        heading += np.radians(yaw_rate_deg)
    return poses


def _ray_boxes(origin, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tmax >= tmin) & (tmin > 0)
    return np.where(hit, tmin, np.inf)


def cast_frame(cfg, frame):
    """Ray-cast one frame; returns ``(scan, raw_labels)`` in the sensor frame."""
    pose = cfg.pose(frame)
    R, origin = pose[:3, :3], pose[:3, 3]
    local = cfg.sensor.directions()
    dirs = local @ R.T
    n = len(dirs)
    best = np.full(n, np.inf)
    sem = np.zeros(n, dtype=np.uint32)
    inst = np.zeros(n, dtype=np.uint32)
    rem = np.zeros(n)

    if cfg.ground_extent is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (cfg.ground_z - origin[2]) / dirs[:, 2]
        t = np.where(t > 0, t, np.inf)
        hx = origin[0] + t * dirs[:, 0]
        hy = origin[1] + t * dirs[:, 1]
        t = np.where((np.abs(hx) <= cfg.ground_extent) & (np.abs(hy) <= cfg.ground_extent), t, np.inf)
        take = t < best
        best[take], sem[take], rem[take] = t[take], GROUND_CLASS, 0.3

    if cfg.backdrop_radius is not None:
        oc = origin - np.asarray(cfg.backdrop_center, dtype=np.float64)
        b = dirs @ oc
        c = oc @ oc - cfg.backdrop_radius ** 2
        disc = b * b - c
        with np.errstate(invalid="ignore"):
            t = -b + np.sqrt(disc)
        t = np.where((disc >= 0) & (t > 0), t, np.inf)
        take = t < best
        best[take], sem[take], rem[take] = t[take], BACKDROP_CLASS, 0.15

    for k, actor in enumerate(cfg.actors):
        lo, hi = actor.bounds(frame)
        t = _ray_boxes(origin, dirs, lo, hi)
        take = t < best
        cls = MOVING_COUNTERPART[actor.class_id] if cfg.is_moving(actor) else actor.class_id
        best[take], sem[take], rem[take] = t[take], cls, actor.remission
        inst[take] = k + 1

    hit = best <= cfg.sensor.max_range
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(frame,)))
    noise = rng.normal(0.0, cfg.sensor.noise_sigma, n) if cfg.sensor.noise_sigma > 0 else np.zeros(n)
    rng_range = np.maximum(best[hit] + noise[hit], 1e-3)
    scan = np.empty((int(hit.sum()), 4), dtype=np.float32)
    scan[:, :3] = local[hit] * rng_range[:, None]
    scan[:, 3] = rem[hit]
    return scan, pack_labels(sem[hit], inst[hit])


def gen_sequence(cfg, frames):
    """Generate ``frames`` frames as a list of ``(scan, pose, raw_labels)``."""
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    out = []
    for f in range(frames):
        scan, labels = cast_frame(cfg, f)
        out.append((scan, cfg.pose(f).copy(), labels))
    return out


# -- presets ----------------------------------------------------------------

def static_scene(frames=20, seed=7, noise_sigma=0.01, ground=False, parked=False):
    """Sensor moving inside a spherical backdrop with no moving actor.

    ``parked=True`` adds two parked cars; their occlusion edges shift with
    parallax and leave large residuals even though nothing moves.
    """
    poses = ego_trajectory(frames, speed=0.3, yaw_rate_deg=0.5)
    actors = [
        Actor((14.0, 9.0, 0.75), (4.2, 1.8, 1.5), 10),
        Actor((-11.0, -7.0, 0.75), (4.2, 1.8, 1.5), 10),
    ] if parked else []
    return SceneConfig(
        ego_poses=poses,
        actors=actors,
        ground_extent=60.0 if ground else None,
        backdrop_radius=45.0,
        backdrop_center=(3.0, 0.0, 0.0),
        sensor=SensorConfig(noise_sigma=noise_sigma),
        seed=seed,
    )


def moving_box_scene(frames=30, seed=11, noise_sigma=0.01, ground=True):
    """Static ground and backdrop, one parked car, and one car overtaking at 2 m/frame.

    The moving car starts 44 m behind and passes the sensor around frame 25.
    """
    poses = ego_trajectory(frames, speed=0.3, yaw_rate_deg=0.5)
    actors = [
        Actor((-44.0, 6.0, 0.85), (4.5, 2.0, 1.7), 10, velocity=(2.0, 0.0, 0.0)),
        Actor((12.0, -6.0, 0.75), (4.2, 1.8, 1.5), 10),
    ]
    return SceneConfig(
        ego_poses=poses,
        actors=actors,
        ground_extent=80.0 if ground else None,
        backdrop_radius=80.0,
        backdrop_center=(10.0, 0.0, 0.0),
        sensor=SensorConfig(noise_sigma=noise_sigma),
        seed=seed,
    )


PRESETS = {"static": static_scene, "moving_box": moving_box_scene}


# -- residual-threshold baseline --------------------------------------------

def baseline_segment(residuals, image, threshold):
    """Predict moving where a pixel is valid and its mean residual exceeds ``threshold``."""
    if threshold < 0:
        raise ValueError(f"threshold must be non-negative, got {threshold}")
    if residuals.shape != image.shape:
        raise ValueError(f"residual shape {residuals.shape} != image shape {image.shape}")
    moving = image.valid & (residuals.mean_map() > threshold)
    return np.where(moving, MOVING, STATIC).astype(np.int8)


class ResidualThresholdSegmenter(ClassifierMixin, BaseEstimator):
    """Thresholds the mean of per-pixel residual vectors.

    ``X`` is ``(n_pixels, k)``. With ``threshold="auto"``, :meth:`fit` picks
    the candidate threshold with the highest moving-class IoU on the training
    pixels.
    """

    def __init__(self, threshold=0.1, n_candidates=64):
        self.threshold = threshold
        self.n_candidates = n_candidates

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = np.array([STATIC, MOVING])
        if self.threshold != "auto":
            if float(self.threshold) < 0:
                raise ValueError("threshold must be non-negative")
            self.threshold_ = float(self.threshold)
            return self
        score = X.mean(axis=1)
        cands = np.unique(np.quantile(score, np.linspace(0.0, 1.0, self.n_candidates)))
        best, best_thr = -1.0, float(cands[0])
        for thr in cands:
            cm = ConfusionMatrix(2).update((score > thr).astype(int), y)
            v = iou(cm)[MOVING]
            if np.isfinite(v) and v > best:
                best, best_thr = float(v), float(thr)
        self.threshold_ = best_thr
        return self

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        X = check_array(X)
        return np.where(X.mean(axis=1) > self.threshold_, MOVING, STATIC)

    def score(self, X, y, sample_weight=None):
        """Moving-class IoU (0 when the class is absent)."""
        cm = ConfusionMatrix(2).update(self.predict(X), y)
        v = iou(cm)[MOVING]
        return float(v) if np.isfinite(v) else 0.0
