"""Point-space refinement: voxelize, axis-decomposed 3D convolution, devoxelize.

Only occupied voxels are stored. Convolutions treat unoccupied voxels as
zeros and produce output at occupied voxels only, so occupancy never changes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_points, check_same_length

DEFAULT_RESOLUTION = 0.2


@dataclass
class VoxelGrid:
    """Sparse voxel features.

    ``coords`` are integer voxel indices relative to ``origin_index`` (all
    non-negative, below ``dims``), sorted by their linear key.
    """

    resolution: float
    origin_index: np.ndarray
    dims: np.ndarray
    coords: np.ndarray
    features: np.ndarray
    counts: np.ndarray | None = None

    @property
    def origin(self):
        return self.origin_index * self.resolution

    @property
    def n_occupied(self):
        return len(self.coords)

    @property
    def channels(self):
        return self.features.shape[1]

    def keys(self, coords=None):
        c = self.coords if coords is None else coords
        Dx, Dy, Dz = (int(d) for d in self.dims)
        return (c[:, 0] * Dy + c[:, 1]) * Dz + c[:, 2]

    def lookup(self, coords):
        """Row of each coordinate in ``features``, or -1 when unoccupied/outside."""
        coords = np.asarray(coords, dtype=np.int64)
        inside = ((coords >= 0) & (coords < self.dims)).all(axis=1)
        out = np.full(len(coords), -1, dtype=np.int64)
        if not inside.any() or self.n_occupied == 0:
            return out
        own = self.keys()
        q = self.keys(coords[inside])
        pos = np.searchsorted(own, q)
        pos_c = np.minimum(pos, len(own) - 1)
        found = own[pos_c] == q
        out[np.flatnonzero(inside)[found]] = pos_c[found]
        return out

    def with_features(self, features):
        return VoxelGrid(self.resolution, self.origin_index, self.dims, self.coords,
                         features, self.counts)


def _lattice(points, resolution):
    return np.floor(np.asarray(points, dtype=np.float64)[:, :3] / resolution).astype(np.int64)


def voxelize(points, features, resolution=DEFAULT_RESOLUTION):
    """Average per-point features into voxels of edge ``resolution`` metres."""
    if not resolution > 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    pts = check_points(points, name="points")
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    check_same_length(points=pts, features=feats)
    if len(pts) == 0:
        raise ValueError("cannot voxelize an empty point set")

    lattice = _lattice(pts, resolution)
    origin_index = lattice.min(axis=0)
    rel = lattice - origin_index
    dims = rel.max(axis=0) + 1
    keys = (rel[:, 0] * dims[1] + rel[:, 1]) * dims[2] + rel[:, 2]
    uniq, first, inverse, counts = np.unique(
        keys, return_index=True, return_inverse=True, return_counts=True
    )
    sums = np.zeros((len(uniq), feats.shape[1]))
    np.add.at(sums, inverse, feats)
    means = sums / counts[:, None]
    return VoxelGrid(float(resolution), origin_index, dims, rel[first], means, counts)


def devoxelize(grid, points):
    """Feature of the voxel containing each point; zeros for unoccupied voxels."""
    if grid.n_occupied == 0:
        raise ValueError("cannot devoxelize from an empty grid")
    pts = check_points(points, name="points")
    rows = grid.lookup(_lattice(pts, grid.resolution) - grid.origin_index)
    out = np.zeros((len(pts), grid.channels))
    hit = rows >= 0
    out[hit] = grid.features[rows[hit]]
    return out


@dataclass
class SgbParams:
    """Weights for the three axis branches and the fusing pointwise convolution.

    ``branch_weights[a]`` has shape ``(C_branch, C_in, L)``: an ``L``-tap
    kernel along axis ``a`` (x, y, z). ``fusion_weight`` maps the
    concatenated ``3 * C_branch`` channels back to ``C_in``.
    """

    branch_weights: list
    branch_biases: list
    fusion_weight: np.ndarray
    fusion_bias: np.ndarray

    def __post_init__(self):
        if len(self.branch_weights) != 3 or len(self.branch_biases) != 3:
            raise ValueError("SGB needs exactly three branches")
        self.branch_weights = [np.asarray(w, dtype=np.float64) for w in self.branch_weights]
        self.branch_biases = [np.asarray(b, dtype=np.float64) for b in self.branch_biases]
        self.fusion_weight = np.asarray(self.fusion_weight, dtype=np.float64)
        self.fusion_bias = np.asarray(self.fusion_bias, dtype=np.float64)
        cb, cin, taps = self.branch_weights[0].shape
        if taps % 2 == 0:
            raise ValueError(f"branch kernels need an odd tap count, got {taps}")
        for w, b in zip(self.branch_weights, self.branch_biases):
            if w.shape != (cb, cin, taps) or b.shape != (cb,):
                raise ValueError("branch kernels must share one shape")
        if self.fusion_weight.shape != (cin, 3 * cb):
            raise ValueError(
                f"fusion weight must be ({cin}, {3 * cb}), got {self.fusion_weight.shape}"
            )
        if self.fusion_bias.shape != (cin,):
            raise ValueError(f"fusion bias must be ({cin},), got {self.fusion_bias.shape}")

    @property
    def in_channels(self):
        return self.branch_weights[0].shape[1]

    @property
    def taps(self):
        return self.branch_weights[0].shape[2]

    @classmethod
    def random(cls, channels, branch_channels, rng, taps=3, zero_fusion=False):
        bw = [rng.normal(0, 0.5, (branch_channels, channels, taps)) for _ in range(3)]
        bb = [rng.normal(0, 0.5, branch_channels) for _ in range(3)]
        if zero_fusion:
            fw = np.zeros((channels, 3 * branch_channels))
            fb = np.zeros(channels)
        else:
            fw = rng.normal(0, 0.5, (channels, 3 * branch_channels))
            fb = rng.normal(0, 0.5, channels)
        return cls(bw, bb, fw, fb)


def axis_conv(grid, weight, bias, axis):
    """Sparse ``L``-tap convolution along one lattice axis with zero padding."""
    cb, _, taps = weight.shape
    out = np.tile(bias, (grid.n_occupied, 1))
    for t in range(taps):
        shift = np.zeros(3, dtype=np.int64)
        shift[axis] = t - taps // 2
        rows = grid.lookup(grid.coords + shift)
        hit = rows >= 0
        out[hit] += grid.features[rows[hit]] @ weight[:, :, t].T
    return out


def sgb_forward(grid, params):
    """Three axis branches, channel concat, pointwise fusion, residual skip."""
    if grid.channels != params.in_channels:
        raise ValueError(f"grid has {grid.channels} channels, params expect {params.in_channels}")
    branches = [
        axis_conv(grid, w, b, axis)
        for axis, (w, b) in enumerate(zip(params.branch_weights, params.branch_biases))
    ]
    cat = np.concatenate(branches, axis=1)
    fused = cat @ params.fusion_weight.T + params.fusion_bias
    return grid.with_features(grid.features + fused)


def siem_refine(mlp_features, grid_features, weight, bias):
    """Per-point class scores from the sum of MLP and devoxelized features."""
    mlp = np.asarray(mlp_features, dtype=np.float64)
    vox = np.asarray(grid_features, dtype=np.float64)
    check_same_length(mlp_features=mlp, grid_features=vox)
    if mlp.shape != vox.shape:
        raise ValueError(f"feature shapes differ: {mlp.shape} vs {vox.shape}")
    weight = np.asarray(weight, dtype=np.float64)
    return (mlp + vox) @ weight.T + np.asarray(bias, dtype=np.float64)


def siem_forward(points, point_features, mlp_features, params, weight, bias,
                 resolution=DEFAULT_RESOLUTION):
    """Full refinement chain from back-projected point features to class scores."""
    check_same_length(points=points, point_features=point_features, mlp_features=mlp_features)
    grid = sgb_forward(voxelize(points, point_features, resolution), params)
    return siem_refine(mlp_features, devoxelize(grid, points), weight, bias)


# -- persistence ------------------------------------------------------------
# .vox layout: uint32 C, M, Dx, Dy, Dz; float32 resolution; int32 origin
# index (3); int32 coords (M, 3); float32 features (M, C). Little-endian.

def save_voxel_grid(grid, path):
    with open(path, "wb") as f:
        f.write(np.array([grid.channels, grid.n_occupied, *grid.dims], dtype="<u4").tobytes())
        f.write(np.array([grid.resolution], dtype="<f4").tobytes())
        f.write(np.asarray(grid.origin_index, dtype="<i4").tobytes())
        f.write(np.asarray(grid.coords, dtype="<i4").tobytes())
        f.write(np.asarray(grid.features, dtype="<f4").tobytes())


def load_voxel_grid(path):
    raw = Path(path).read_bytes()
    C, M, Dx, Dy, Dz = (int(v) for v in np.frombuffer(raw[:20], dtype="<u4"))
    (res,) = np.frombuffer(raw[20:24], dtype="<f4")
    origin = np.frombuffer(raw[24:36], dtype="<i4").astype(np.int64)
    off = 36
    coords = np.frombuffer(raw[off:off + 12 * M], dtype="<i4").reshape(M, 3).astype(np.int64)
    feats = np.frombuffer(raw[off + 12 * M:], dtype="<f4").reshape(M, C).astype(np.float64)
    return VoxelGrid(float(res), origin, np.array([Dx, Dy, Dz]), coords, feats)
