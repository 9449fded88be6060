"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

RIGID_TOL = 1e-6


def check_points(points, *, name="points", min_cols=3):
    """Return ``points`` as a 2-D float array with at least ``min_cols`` columns.

    Non-finite values raise ``ValueError`` naming the first offending row.
    """
    arr = np.asarray(points)
    if arr.ndim != 2 or arr.shape[1] < min_cols:
        raise ValueError(f"{name} must have shape (N, >={min_cols}), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if not np.isfinite(arr).all():
        bad = ~np.isfinite(arr).all(axis=1)
        raise ValueError(f"{name} has non-finite values at point {int(np.argmax(bad))}")
    return arr


def check_pose(pose, *, tol=RIGID_TOL):
    """Validate a 4x4 rigid transform and return it as float64."""
    T = np.asarray(pose, dtype=np.float64)
    if T.shape != (4, 4):
        raise ValueError(f"pose must be 4x4, got {T.shape}")
    if not np.isfinite(T).all():
        raise ValueError("pose has non-finite entries")
    if not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=tol, rtol=0):
        raise ValueError("pose bottom row must be (0, 0, 0, 1)")
    R = T[:3, :3]
    if np.abs(R @ R.T - np.eye(3)).max() > tol:
        raise ValueError("pose rotation block is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("pose rotation block has determinant != +1")
    return T


def check_tensor(x, *, ndim, name="tensor"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} has non-finite values")
    return arr


def check_same_length(**arrays):
    lengths = {k: len(v) for k, v in arrays.items()}
    if len(set(lengths.values())) > 1:
        detail = ", ".join(f"{k}={n}" for k, n in lengths.items())
        raise ValueError(f"length mismatch: {detail}")
    return next(iter(lengths.values()))
