"""Reading and writing KITTI-layout sequences.

On-disk formats (all little-endian):

* ``velodyne/NNNNNN.bin``: records of four float32 ``(x, y, z, remission)``.
* ``labels/NNNNNN.label``: one uint32 per point, lower 16 bits semantic id,
  upper 16 bits instance id.
* ``poses.txt``: one row-major 3x4 matrix per line (12 reals).
* ``calib.txt``: ``key: values`` lines; the ``Tr`` entry is the
  camera-to-LiDAR transform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ._validation import check_pose

logger = logging.getLogger(__name__)

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")
RECORD_SIZE = 16

# per-point task label codes
IGNORE = -1
STATIC = 0
MOVING = 1
UNMOVABLE = 0
MOVABLE = 1


def read_scan(path):
    """Read a velodyne ``.bin`` file into an ``(N, 4)`` float32 array."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scan file not found: {path}")
    raw = path.read_bytes()
    if len(raw) % RECORD_SIZE:
        raise ValueError(
            f"{path}: length {len(raw)} not multiple of record size {RECORD_SIZE}"
        )
    scan = np.frombuffer(raw, dtype=SCAN_DTYPE).reshape(-1, 4).astype(np.float32)
    bad = ~np.isfinite(scan).all(axis=1)
    if bad.any():
        raise ValueError(f"{path}: non-finite value at point {int(np.argmax(bad))}")
    return scan


def write_scan(scan, path):
    scan = np.asarray(scan)
    if scan.ndim != 2 or scan.shape[1] != 4:
        raise ValueError(f"scan must have shape (N, 4), got {scan.shape}")
    Path(path).write_bytes(scan.astype(SCAN_DTYPE, copy=False).tobytes())


def read_labels(path, n_points=None):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"label file not found: {path}")
    raw = path.read_bytes()
    if len(raw) % LABEL_DTYPE.itemsize:
        raise ValueError(f"{path}: length {len(raw)} not multiple of 4")
    labels = np.frombuffer(raw, dtype=LABEL_DTYPE).astype(np.uint32)
    if n_points is not None and len(labels) != n_points:
        raise ValueError(f"{path}: {len(labels)} labels for {n_points} points")
    return labels


def write_labels(labels, path):
    Path(path).write_bytes(np.asarray(labels).astype(LABEL_DTYPE).tobytes())


def semantic_ids(labels):
    return np.asarray(labels, dtype=np.uint32) & 0xFFFF


def instance_ids(labels):
    return np.asarray(labels, dtype=np.uint32) >> 16


def pack_labels(semantic, instance=0):
    semantic = np.asarray(semantic, dtype=np.uint32)
    instance = np.broadcast_to(np.asarray(instance, dtype=np.uint32), semantic.shape)
    return (instance << 16) | (semantic & 0xFFFF)


# -- poses ------------------------------------------------------------------

def invert_pose(T):
    """Inverse of a rigid transform, using the transpose of the rotation."""
    T = np.asarray(T, dtype=np.float64)
    R, t = T[:3, :3], T[:3, 3]
    inv = np.eye(4)
    inv[:3, :3] = R.T
    inv[:3, 3] = -R.T @ t
    return inv


def relative_pose(pose_to, pose_from):
    """Transform taking points in the frame of ``pose_from`` into ``pose_to``.

    Both are sensor-to-world poses, so the result is ``inv(pose_to) @ pose_from``.
    """
    return invert_pose(pose_to) @ np.asarray(pose_from, dtype=np.float64)


def _parse_matrix_line(line, lineno, path):
    parts = line.split()
    if len(parts) != 12:
        raise ValueError(f"{path}:{lineno}: expected 12 values, got {len(parts)}")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ValueError(f"{path}:{lineno}: {exc}") from None
    T = np.eye(4)
    T[:3, :4] = np.reshape(vals, (3, 4))
    return T


def read_calib(path):
    """Return the ``Tr`` transform from a KITTI ``calib.txt`` (identity if absent)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"calibration file not found: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if ":" not in line:
            continue
        key, content = line.split(":", 1)
        if key.strip() == "Tr":
            return check_pose(_parse_matrix_line(content, lineno, path))
    return np.eye(4)


def read_poses(path, calib=None):
    """Read ``poses.txt`` and express every pose in the LiDAR frame.

    Each returned pose is ``inv(Tr) @ P_i @ Tr``. ``calib`` defaults to the
    identity, which leaves the stored poses unchanged.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"pose file not found: {path}")
    Tr = np.eye(4) if calib is None else check_pose(calib)
    Tr_inv = invert_pose(Tr)
    poses = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        P = _parse_matrix_line(line, lineno, path)
        pose = Tr_inv @ P @ Tr
        try:
            poses.append(check_pose(pose))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return poses


def write_poses(poses, path):
    lines = []
    for T in poses:
        T = np.asarray(T, dtype=np.float64)
        lines.append(" ".join(repr(float(v)) for v in T[:3, :4].ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


# -- class map --------------------------------------------------------------

def _parse_id_list(text):
    ids = set()
    for tok in text.replace(",", " ").split():
        if "-" in tok:
            lo, hi = tok.split("-", 1)
            ids.update(range(int(lo), int(hi) + 1))
        else:
            ids.add(int(tok))
    return frozenset(ids)


@dataclass(frozen=True)
class ClassMap:
    """Raw semantic id sets for the moving/static and movable/unmovable tasks."""

    moving: frozenset
    movable: frozenset
    ignore: frozenset = frozenset()
    static: frozenset = frozenset()

    def __post_init__(self):
        for name in ("moving", "movable", "ignore", "static"):
            object.__setattr__(self, name, frozenset(int(i) for i in getattr(self, name)))
        if not self.moving <= self.movable:
            extra = sorted(self.moving - self.movable)
            raise ValueError(f"moving classes must be a subset of movable classes: {extra}")
        overlap = self.ignore & (self.movable | self.static)
        if overlap:
            raise ValueError(f"ignore classes overlap labelled classes: {sorted(overlap)}")

    @classmethod
    def from_file(cls, path):
        """Parse a ``key = ids`` configuration file (see ``data/semantic_kitti_mos.cfg``)."""
        entries = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = values'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in ("moving", "movable", "ignore", "static"):
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            entries[key] = _parse_id_list(value)
        missing = {"moving", "movable"} - entries.keys()
        if missing:
            raise ValueError(f"{path}: missing keys {sorted(missing)}")
        return cls(**entries)

    @classmethod
    def default(cls):
        ref = resources.files("rangemos") / "data" / "semantic_kitti_mos.cfg"
        with resources.as_file(ref) as p:
            return cls.from_file(p)


@dataclass
class TaskLabels:
    """Per-point labels for both tasks plus the count of unrecognised ids."""

    motion: np.ndarray
    mobility: np.ndarray
    unknown_count: int = 0
    unknown_ids: frozenset = field(default_factory=frozenset)

    def __len__(self):
        return len(self.motion)


def remap_labels(labels, class_map):
    """Map raw ``.label`` entries onto motion and mobility labels.

    Ids outside every set of ``class_map`` become static/unmovable and are
    counted in ``unknown_count``.
    """
    sem = semantic_ids(labels)
    moving = np.isin(sem, list(class_map.moving))
    movable = np.isin(sem, list(class_map.movable))
    ignore = np.isin(sem, list(class_map.ignore))
    known = moving | movable | ignore | np.isin(sem, list(class_map.static))

    motion = np.where(moving, MOVING, STATIC).astype(np.int8)
    mobility = np.where(movable, MOVABLE, UNMOVABLE).astype(np.int8)
    motion[ignore] = IGNORE
    mobility[ignore] = IGNORE

    unknown = sem[~known]
    unknown_ids = frozenset(int(i) for i in np.unique(unknown))
    if len(unknown):
        logger.warning("%d points with unknown semantic ids %s", len(unknown), sorted(unknown_ids))
    return TaskLabels(motion, mobility, int(len(unknown)), unknown_ids)


# -- sequences --------------------------------------------------------------

class KittiSequence:
    """Lazy access to one sequence under ``root/sequences/<id>/``."""

    def __init__(self, root, sequence):
        self.root = Path(root)
        self.sequence = str(sequence)
        self.path = self.root / "sequences" / self.sequence
        if not self.path.is_dir():
            raise FileNotFoundError(f"sequence directory not found: {self.path}")
        scan_dir = self.path / "velodyne"
        if not scan_dir.is_dir():
            raise FileNotFoundError(f"velodyne directory not found: {scan_dir}")
        self.scan_files = sorted(scan_dir.glob("*.bin"))
        label_dir = self.path / "labels"
        self.label_files = sorted(label_dir.glob("*.label")) if label_dir.is_dir() else []
        calib_file = self.path / "calib.txt"
        self.calib = read_calib(calib_file) if calib_file.is_file() else np.eye(4)
        pose_file = self.path / "poses.txt"
        self.poses = read_poses(pose_file, self.calib) if pose_file.is_file() else None
        if self.poses is not None and len(self.poses) != len(self.scan_files):
            raise ValueError(
                f"{pose_file}: {len(self.poses)} poses for {len(self.scan_files)} scans"
            )

    def __len__(self):
        return len(self.scan_files)

    @property
    def has_labels(self):
        return len(self.label_files) == len(self.scan_files) > 0

    def scan(self, i):
        return read_scan(self.scan_files[i])

    def pose(self, i):
        if self.poses is None:
            raise FileNotFoundError(f"no poses.txt in {self.path}")
        return self.poses[i]

    def labels(self, i):
        if not self.has_labels:
            raise FileNotFoundError(f"no labels for every scan in {self.path}")
        return read_labels(self.label_files[i])


class InMemorySequence:
    """Frame store backed by in-memory arrays; same interface as ``KittiSequence``."""

    def __init__(self, scans, poses, labels=None):
        if len(scans) != len(poses):
            raise ValueError(f"{len(scans)} scans but {len(poses)} poses")
        self.scans = list(scans)
        self.poses = [check_pose(p) for p in poses]
        self.label_list = None if labels is None else list(labels)

    def __len__(self):
        return len(self.scans)

    @property
    def has_labels(self):
        return self.label_list is not None

    def scan(self, i):
        return self.scans[i]

    def pose(self, i):
        return self.poses[i]

    def labels(self, i):
        if self.label_list is None:
            raise ValueError("sequence has no labels")
        return self.label_list[i]


def write_sequence(root, sequence, scans, poses, labels=None):
    """Write frames in the KITTI layout; returns the sequence directory."""
    seq_dir = Path(root) / "sequences" / str(sequence)
    (seq_dir / "velodyne").mkdir(parents=True, exist_ok=True)
    for i, scan in enumerate(scans):
        write_scan(scan, seq_dir / "velodyne" / f"{i:06d}.bin")
    if labels is not None:
        (seq_dir / "labels").mkdir(exist_ok=True)
        for i, lab in enumerate(labels):
            write_labels(lab, seq_dir / "labels" / f"{i:06d}.label")
    write_poses(poses, seq_dir / "poses.txt")
    return seq_dir


def frame_name(i):
    return f"{i:06d}"
