import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rangemos.dataset_io import (IGNORE, MOVABLE, MOVING, STATIC, UNMOVABLE, ClassMap,
                                 InMemorySequence, KittiSequence, invert_pose, pack_labels,
                                 read_calib, read_labels, read_poses, read_scan,
                                 relative_pose, remap_labels, write_labels, write_poses,
                                 write_scan, write_sequence)


def random_pose(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = rng.normal(0, 10, 3)
    return T


def test_read_single_record(tmp_path):
    path = tmp_path / "a.bin"
    path.write_bytes(struct.pack("<4f", 1.0, 2.0, 3.0, 0.5))
    scan = read_scan(path)
    assert scan.shape == (1, 4)
    assert scan.tolist() == [[1.0, 2.0, 3.0, 0.5]]


def test_read_empty_file(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    assert read_scan(path).shape == (0, 4)


def test_read_rejects_partial_record(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\0" * 20)
    with pytest.raises(ValueError, match="not multiple of record size"):
        read_scan(path)


def test_read_rejects_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_scan(tmp_path / "nope.bin")


def test_read_rejects_non_finite_with_index(tmp_path):
    path = tmp_path / "nan.bin"
    path.write_bytes(struct.pack("<8f", 1, 2, 3, 0, 1, float("nan"), 3, 0))
    with pytest.raises(ValueError, match="point 1"):
        read_scan(path)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(0, 50), st.just(4)),
              elements=st.floats(-1e4, 1e4, width=32)))
def test_scan_round_trip_is_bit_exact(tmp_path_factory, scan):
    path = tmp_path_factory.mktemp("rt") / "scan.bin"
    write_scan(scan, path)
    raw = path.read_bytes()
    back = read_scan(path)
    write_scan(back, path)
    assert path.read_bytes() == raw
    assert len(raw) == 16 * len(back)


def test_labels_round_trip(tmp_path):
    labels = pack_labels(np.array([10, 252, 40]), np.array([1, 2, 0]))
    write_labels(labels, tmp_path / "x.label")
    back = read_labels(tmp_path / "x.label", n_points=3)
    assert back.tolist() == labels.tolist()
    with pytest.raises(ValueError):
        read_labels(tmp_path / "x.label", n_points=4)


def test_identity_pose_line(tmp_path):
    path = tmp_path / "poses.txt"
    path.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    (pose,) = read_poses(path)
    assert np.array_equal(pose, np.eye(4))


def test_identity_calib_leaves_poses_unchanged(tmp_path):
    rng = np.random.default_rng(0)
    poses = [random_pose(rng) for _ in range(3)]
    write_poses(poses, tmp_path / "poses.txt")
    back = read_poses(tmp_path / "poses.txt", calib=np.eye(4))
    for a, b in zip(poses, back):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_calib_conjugation(tmp_path):
    rng = np.random.default_rng(1)
    P = random_pose(rng)
    Tr = random_pose(rng)
    write_poses([P], tmp_path / "poses.txt")
    (pose,) = read_poses(tmp_path / "poses.txt", calib=Tr)
    np.testing.assert_allclose(pose, np.linalg.inv(Tr) @ P @ Tr, atol=1e-9)


def test_read_calib_tr_entry(tmp_path):
    path = tmp_path / "calib.txt"
    path.write_text("P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr: 0 -1 0 0.5 0 0 -1 0 1 0 0 -0.2\n")
    Tr = read_calib(path)
    assert Tr[0, 3] == 0.5 and Tr[2, 0] == 1.0


def test_malformed_pose_line(tmp_path):
    path = tmp_path / "poses.txt"
    path.write_text("1 0 0 0 0 1 0 0 0 0 1\n")
    with pytest.raises(ValueError, match="expected 12 values"):
        read_poses(path)


def test_non_rigid_pose_rejected(tmp_path):
    path = tmp_path / "poses.txt"
    path.write_text("2 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(ValueError, match="orthonormal"):
        read_poses(path)


def test_identical_poses_have_identity_relative_pose():
    T = random_pose(np.random.default_rng(2))
    np.testing.assert_allclose(relative_pose(T, T), np.eye(4), atol=1e-12)


def test_relative_pose_composition_is_associative():
    rng = np.random.default_rng(3)
    for _ in range(50):
        A, B, C = (random_pose(rng) for _ in range(3))
        np.testing.assert_allclose(
            relative_pose(A, B) @ relative_pose(B, C), relative_pose(A, C), atol=1e-9
        )


def test_invert_pose():
    T = random_pose(np.random.default_rng(4))
    np.testing.assert_allclose(invert_pose(T) @ T, np.eye(4), atol=1e-12)


CLASS_MAP = ClassMap(moving={252}, movable={10, 252}, ignore={0}, static={40})


def test_remap_moving_class():
    t = remap_labels(pack_labels([252]), CLASS_MAP)
    assert (t.motion[0], t.mobility[0]) == (MOVING, MOVABLE)


def test_remap_movable_but_static_class():
    t = remap_labels(pack_labels([10]), CLASS_MAP)
    assert (t.motion[0], t.mobility[0]) == (STATIC, MOVABLE)


def test_remap_ignore_class():
    t = remap_labels(pack_labels([0]), CLASS_MAP)
    assert (t.motion[0], t.mobility[0]) == (IGNORE, IGNORE)


def test_remap_uses_lower_16_bits_only():
    t = remap_labels(pack_labels([252], [7]), CLASS_MAP)
    assert t.motion[0] == MOVING


def test_unknown_ids_are_static_and_counted():
    t = remap_labels(pack_labels([999, 999, 40]), CLASS_MAP)
    assert t.motion.tolist() == [STATIC] * 3
    assert t.mobility.tolist() == [UNMOVABLE] * 3
    assert t.unknown_count == 2
    assert t.unknown_ids == {999}


def test_class_map_requires_subset():
    with pytest.raises(ValueError, match="subset"):
        ClassMap(moving={252}, movable={10})


@given(st.lists(st.sampled_from([0, 1, 10, 11, 40, 50, 252, 253, 258, 999]), max_size=200))
def test_moving_never_exceeds_movable(ids):
    t = remap_labels(pack_labels(np.array(ids, dtype=np.uint32)), ClassMap.default())
    assert (t.motion == MOVING).sum() <= (t.mobility == MOVABLE).sum()
    assert np.all(t.mobility[t.motion == MOVING] == MOVABLE)


def test_default_class_map_file():
    cm = ClassMap.default()
    assert cm.moving == frozenset(range(252, 260))
    assert cm.moving <= cm.movable
    assert {10, 30, 31} <= cm.movable
    assert 0 in cm.ignore


def test_class_map_file_parsing(tmp_path):
    path = tmp_path / "map.cfg"
    path.write_text("# c\nmoving = 252-253\nmovable = 10, 252-253\nignore = 0\n")
    cm = ClassMap.from_file(path)
    assert cm.moving == {252, 253}
    assert cm.static == frozenset()
    path.write_text("moving = 1\nmovable = 1\nbogus = 3\n")
    with pytest.raises(ValueError, match="unknown key"):
        ClassMap.from_file(path)


def test_kitti_sequence_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    scans = [rng.normal(size=(n, 4)).astype(np.float32) for n in (5, 7)]
    poses = [random_pose(rng) for _ in range(2)]
    labels = [pack_labels(np.full(len(s), 40)) for s in scans]
    write_sequence(tmp_path, "03", scans, poses, labels)
    seq = KittiSequence(tmp_path, "03")
    assert len(seq) == 2 and seq.has_labels
    assert np.array_equal(seq.scan(1), scans[1])
    np.testing.assert_allclose(seq.pose(1), poses[1], atol=1e-12)
    assert seq.labels(0).tolist() == labels[0].tolist()


def test_kitti_sequence_missing(tmp_path):
    with pytest.raises(FileNotFoundError, match="sequence directory"):
        KittiSequence(tmp_path, "00")


def test_in_memory_sequence_validates_poses():
    with pytest.raises(ValueError):
        InMemorySequence([np.zeros((1, 4))], [np.diag([2.0, 1, 1, 1])])
