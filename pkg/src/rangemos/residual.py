"""Ego-motion compensated residual maps and frame-stride augmentation.

Map ``j`` (1-based) of a stack compares frame ``t - j*stride`` against the
current frame ``t``::

    res_j(u, v) = |range_j(u, v) - range_0(u, v)| / range_0(u, v)

where ``range_j`` is the past scan transformed into the current sensor frame
and re-projected. Pixels empty in either image are 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_points, check_pose
from .dataset_io import relative_pose
from .projection import ProjConfig, project, range_grid

DEFAULT_K = 8
STRIDE_PRESETS = ("1", "max")


class InsufficientHistoryError(ValueError):
    """Raised when a frame lacks the past frames a residual stack needs."""


def transform_scan(scan, pose):
    """Apply the rigid transform ``pose`` to the xyz columns; extra columns are kept."""
    T = check_pose(pose)
    scan = np.asarray(scan)
    xyz = scan[:, :3].astype(np.float64)
    out = scan.astype(np.result_type(scan.dtype, np.float32), copy=True)
    out[:, :3] = xyz @ T[:3, :3].T + T[:3, 3]
    return out


@dataclass
class ResidualStack:
    maps: np.ndarray
    stride: int

    @property
    def frame_count(self):
        return self.maps.shape[0]

    @property
    def shape(self):
        return self.maps.shape[1:]

    def mean_map(self):
        return self.maps.mean(axis=0)


def residual_map(current, past):
    """Single residual map between two :class:`RangeImage` objects on the same grid."""
    return _residual(current, past.range)


def _residual(current, past_range):
    both = current.valid & (past_range > 0)
    out = np.zeros(current.shape, dtype=np.float32)
    r0 = current.range[both].astype(np.float64)
    rj = past_range[both].astype(np.float64)
    out[both] = np.abs(rj - r0) / r0
    return out


def compute_residual(current, past_scans, past_poses, current_pose, stride=1, cfg=None):
    """Residual stack for ``current`` given past scans ordered nearest first.

    ``past_scans[j - 1]`` is the scan ``j * stride`` frames back and
    ``past_poses[j - 1]`` its sensor-to-world pose.
    """
    cfg = cfg or current.config
    if len(past_scans) != len(past_poses):
        raise ValueError(f"{len(past_scans)} past scans but {len(past_poses)} poses")
    H, W = current.shape
    maps = np.zeros((len(past_scans), H, W), dtype=np.float32)
    for j, (scan, pose) in enumerate(zip(past_scans, past_poses)):
        T = check_pose(relative_pose(current_pose, pose))
        xyz = check_points(scan, name="past scan")[:, :3] @ T[:3, :3].T + T[:3, 3]
        maps[j] = _residual(current, range_grid(xyz, cfg))
    return ResidualStack(maps, int(stride))


def history_frames(frame, k, stride, clamp=False):
    """Frame indices ``frame - j*stride`` for ``j = 1..k``, clamped at 0 if asked."""
    need = frame - k * stride
    if need < 0 and not clamp:
        raise InsufficientHistoryError(
            f"frame {frame} needs {k * stride} previous frames for k={k}, stride={stride}; "
            f"short by {-need}"
        )
    return [max(frame - j * stride, 0) for j in range(1, k + 1)]


def residual_stack(store, frame, k=DEFAULT_K, stride=1, cfg=None, clamp=False, current=None):
    """Projected current frame and its residual stack, read from a frame store."""
    cfg = cfg or ProjConfig()
    past = history_frames(frame, k, stride, clamp)
    if current is None:
        current = project(store.scan(frame), cfg)
    stack = compute_residual(
        current,
        [store.scan(i) for i in past],
        [store.pose(i) for i in past],
        store.pose(frame),
        stride,
        cfg,
    )
    return current, stack


# -- stride augmentation ----------------------------------------------------

@dataclass(frozen=True)
class StrideDistribution:
    strides: tuple
    probabilities: tuple

    def __post_init__(self):
        strides = tuple(int(s) for s in self.strides)
        probs = tuple(float(p) for p in self.probabilities)
        if not strides:
            raise ValueError("stride distribution is empty")
        if len(strides) != len(probs):
            raise ValueError(f"{len(strides)} strides but {len(probs)} probabilities")
        if any(s < 1 for s in strides) or list(strides) != sorted(set(strides)):
            raise ValueError(f"strides must be ascending positive integers, got {strides}")
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"probabilities must lie in [0, 1], got {probs}")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {sum(probs)!r}, not 1")
        object.__setattr__(self, "strides", strides)
        object.__setattr__(self, "probabilities", probs)

    @classmethod
    def uniform(cls, strides):
        strides = tuple(strides)
        return cls(strides, tuple(1.0 / len(strides) for _ in strides))

    @property
    def max_stride(self):
        return self.strides[-1]

    def preset(self, name):
        """Test-time stride for a named preset: ``"1"`` or ``"max"``."""
        if str(name) == "1":
            return 1
        if str(name) == "max":
            return self.max_stride
        raise ValueError(f"unknown stride preset {name!r}; expected one of {STRIDE_PRESETS}")


# best setting of the training-time stride ablation
DEFAULT_DISTRIBUTION = StrideDistribution((1, 2, 3), (0.5, 0.25, 0.25))


def sample_stride(dist, rng):
    """Draw one stride; consumes exactly one uniform variate from ``rng``."""
    cdf = np.cumsum(dist.probabilities)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return dist.strides[min(i, len(dist.strides) - 1)]


def build_training_input(store, frame, k=DEFAULT_K, dist=DEFAULT_DISTRIBUTION, rng=None,
                         cfg=None, clamp=False):
    """Draw a stride and return ``(RangeImage, ResidualStack)`` for ``frame``."""
    if rng is None:
        raise ValueError("build_training_input needs an explicit seeded rng")
    if not clamp:
        history_frames(frame, k, dist.max_stride)
    stride = sample_stride(dist, rng)
    return residual_stack(store, frame, k, stride, cfg, clamp)


# -- persistence ------------------------------------------------------------
# .res layout: uint32 H, W, k, stride; float32 maps (k, H, W). Little-endian.

def save_residual(stack, path):
    k, H, W = stack.maps.shape
    with open(path, "wb") as f:
        f.write(np.array([H, W, k, stack.stride], dtype="<u4").tobytes())
        f.write(stack.maps.astype("<f4").tobytes())


def load_residual(path):
    raw = Path(path).read_bytes()
    H, W, k, stride = (int(v) for v in np.frombuffer(raw[:16], dtype="<u4"))
    maps = np.frombuffer(raw[16:], dtype="<f4")
    if maps.size != k * H * W:
        raise ValueError(f"{path}: payload holds {maps.size} floats, header says {k * H * W}")
    return ResidualStack(maps.reshape(k, H, W).astype(np.float32), stride)
