import numpy as np
import pytest

from rangemos.oracles import sgb_oracle
from rangemos.siem import (SgbParams, devoxelize, load_voxel_grid, save_voxel_grid,
                           sgb_forward, siem_forward, siem_refine, voxelize)


def test_single_point():
    grid = voxelize([[1.03, -2.5, 0.4]], [[7.0, -1.0]], resolution=0.2)
    assert grid.n_occupied == 1
    assert grid.features.tolist() == [[7.0, -1.0]]
    assert grid.dims.tolist() == [1, 1, 1]


def test_two_points_one_voxel_average():
    grid = voxelize([[0.01, 0.01, 0.01], [0.02, 0.03, 0.04]], [1.0, 3.0], resolution=0.2)
    assert grid.n_occupied == 1
    assert grid.features[0, 0] == 2.0


def test_points_ten_voxels_apart():
    grid = voxelize([[0.05, 0.05, 0.05], [2.05, 0.05, 0.05]], [1.0, 2.0], resolution=0.2)
    assert grid.n_occupied == 2
    assert np.diff(grid.coords[:, 0]).tolist() == [10]
    assert grid.dims.tolist() == [11, 1, 1]


def test_origin_is_floored_to_lattice():
    grid = voxelize([[-0.33, 0.41, 1.0]], [0.0], resolution=0.2)
    np.testing.assert_allclose(grid.origin, [-0.4, 0.4, 1.0])


def test_voxelize_errors():
    with pytest.raises(ValueError, match="empty"):
        voxelize(np.zeros((0, 3)), np.zeros((0, 1)))
    with pytest.raises(ValueError, match="resolution"):
        voxelize([[0, 0, 0]], [1.0], resolution=0.0)
    with pytest.raises(ValueError, match="length"):
        voxelize([[0, 0, 0]], [1.0, 2.0])


def test_feature_mass_is_conserved():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, (2000, 3))
    feats = rng.normal(size=(2000, 4))
    grid = voxelize(pts, feats, resolution=0.5)
    total = (grid.features * grid.counts[:, None]).sum(axis=0)
    np.testing.assert_allclose(total, feats.sum(axis=0), rtol=1e-5, atol=1e-9)


def test_devoxelize_round_trip_one_point_per_voxel():
    rng = np.random.default_rng(1)
    cells = rng.choice(1000, size=50, replace=False)
    pts = np.stack(np.unravel_index(cells, (10, 10, 10)), axis=1) * 0.2 + 0.1
    feats = rng.normal(size=(50, 3))
    np.testing.assert_array_equal(devoxelize(voxelize(pts, feats, 0.2), pts), feats)


def test_devoxelize_unoccupied_and_shared():
    grid = voxelize([[0.05, 0.05, 0.05], [0.1, 0.1, 0.1]], [[1.0], [3.0]], resolution=0.2)
    out = devoxelize(grid, [[0.12, 0.06, 0.01], [0.15, 0.15, 0.15], [5.0, 5.0, 5.0]])
    assert out.tolist() == [[2.0], [2.0], [0.0]]


def random_grid(rng, n=60, channels=3):
    pts = rng.uniform(0, 0.6, (n, 3))
    return voxelize(pts, rng.normal(size=(n, channels)), resolution=0.2)


def test_sgb_zero_fusion_is_identity():
    rng = np.random.default_rng(2)
    grid = random_grid(rng)
    params = SgbParams.random(3, 2, rng, zero_fusion=True)
    out = sgb_forward(grid, params)
    assert np.array_equal(out.features, grid.features)


def test_sgb_preserves_dims_and_occupancy():
    rng = np.random.default_rng(3)
    grid = random_grid(rng)
    out = sgb_forward(grid, SgbParams.random(3, 4, rng))
    assert np.array_equal(out.coords, grid.coords)
    assert np.array_equal(out.dims, grid.dims)
    assert out.features.shape == grid.features.shape


def test_sgb_matches_dense_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        grid = random_grid(rng, n=int(rng.integers(5, 80)), channels=2)
        params = SgbParams.random(2, 3, rng)
        np.testing.assert_allclose(sgb_forward(grid, params).features, sgb_oracle(grid, params),
                                   atol=1e-6)


def test_sgb_wider_kernels_match_oracle():
    rng = np.random.default_rng(5)
    grid = random_grid(rng, channels=2)
    params = SgbParams.random(2, 2, rng, taps=5)
    np.testing.assert_allclose(sgb_forward(grid, params).features, sgb_oracle(grid, params),
                               atol=1e-9)


def test_sgb_channel_mismatch():
    rng = np.random.default_rng(6)
    with pytest.raises(ValueError, match="channels"):
        sgb_forward(random_grid(rng, channels=2), SgbParams.random(3, 2, rng))
    with pytest.raises(ValueError):
        SgbParams([np.zeros((2, 3, 3))] * 3, [np.zeros(2)] * 3, np.zeros((3, 5)), np.zeros(3))


def test_sgb_axis_branches_see_only_their_axis():
    # one neighbour along x: only the x branch couples the two voxels
    grid = voxelize([[0.1, 0.1, 0.1], [0.3, 0.1, 0.1]], [[1.0], [0.0]], resolution=0.2)
    w_on = np.zeros((1, 1, 3))
    w_on[0, 0, 0] = 1.0  # tap reading the -1 neighbour
    zero = np.zeros((1, 1, 3))
    fuse = np.array([[1.0, 1.0, 1.0]])
    for axis in range(3):
        weights = [zero, zero, zero]
        weights[axis] = w_on
        out = sgb_forward(grid, SgbParams(weights, [np.zeros(1)] * 3, fuse, np.zeros(1)))
        expected = [1.0, 1.0] if axis == 0 else [1.0, 0.0]
        assert out.features[:, 0].tolist() == expected


def test_siem_refine_examples():
    rng = np.random.default_rng(7)
    mlp = rng.normal(size=(10, 3))
    W, b = rng.normal(size=(2, 3)), rng.normal(size=2)
    np.testing.assert_allclose(siem_refine(mlp, np.zeros_like(mlp), W, b), mlp @ W.T + b)
    out = siem_refine(mlp, rng.normal(size=(10, 3)), np.zeros((2, 3)), [0.5, -1.0])
    assert np.all(out == [0.5, -1.0])
    with pytest.raises(ValueError, match="length"):
        siem_refine(mlp, np.zeros((9, 3)), W, b)


def test_siem_forward_matches_hand_composition():
    rng = np.random.default_rng(8)
    pts = rng.uniform(0, 1, (40, 3))
    feats = rng.normal(size=(40, 2))
    mlp = rng.normal(size=(40, 2))
    params = SgbParams.random(2, 2, rng)
    W, b = rng.normal(size=(3, 2)), rng.normal(size=3)
    grid = voxelize(pts, feats, 0.25)
    refined = sgb_oracle(grid, params)
    # hand devoxelization: look each point's voxel up by coordinates
    lattice = np.floor(pts / 0.25).astype(int) - grid.origin_index
    rows = [next(i for i, c in enumerate(grid.coords.tolist()) if c == list(p)) for p in lattice]
    expected = (mlp + refined[rows]) @ W.T + b
    np.testing.assert_allclose(siem_forward(pts, feats, mlp, params, W, b, 0.25), expected,
                               atol=1e-6)


def test_voxel_grid_round_trip(tmp_path):
    grid = random_grid(np.random.default_rng(9))
    save_voxel_grid(grid, tmp_path / "g.vox")
    back = load_voxel_grid(tmp_path / "g.vox")
    assert back.resolution == pytest.approx(0.2)
    assert np.array_equal(back.coords, grid.coords)
    assert np.array_equal(back.origin_index, grid.origin_index)
    np.testing.assert_allclose(back.features, grid.features, rtol=1e-6)
