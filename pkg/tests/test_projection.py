import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers_oracles import brute_nearest_donor
from lidarqc.core import PointCloud, SensorSpec
from lidarqc.gridops import nearest_donor_fill
from lidarqc.projection import (fill, image_coords, project, reproject,
                                spherical_angles)

SPEC = SensorSpec(channels=16, angular_resolution=1.0, fov_up=5.0, fov_down=15.0)


def _cloud(xyz):
    pts = np.column_stack([np.asarray(xyz, dtype=np.float32),
                           np.zeros(len(xyz), dtype=np.float32)])
    return PointCloud(pts)


def test_spherical_angles_quadrants():
    r, theta, phi = spherical_angles([-1.0, 0.0, 1.0], [0.0, 1.0, 0.0],
                                     [0.0, 0.0, 1.0])
    assert phi[0] == pytest.approx(math.pi)       # behind, not arctan(0/-1)=0
    assert phi[1] == pytest.approx(math.pi / 2)
    assert theta[2] == pytest.approx(math.pi / 4)
    assert r[2] == pytest.approx(math.sqrt(2.0))


def test_spherical_angles_zero_range():
    with pytest.raises(ValueError, match="zero-range point at index 1"):
        spherical_angles([1.0, 0.0], [0.0, 0.0], [0.0, 0.0])


def test_image_coords_fov_edges():
    # top of the field of view maps to row 0, bottom to the last row
    top = math.radians(SPEC.fov_up) - 1e-9
    bottom = -math.radians(SPEC.fov_down) + 1e-9
    _, v, overshoot = image_coords(np.array([top, bottom]),
                                   np.array([0.0, 0.0]), SPEC)
    assert v.tolist() == [0, SPEC.height - 1]
    assert overshoot == 0


def test_image_coords_azimuth_columns():
    # azimuth pi is the left edge, 0 the middle, decreasing to the right
    phi = np.array([math.pi, 0.0, -math.pi + 1e-9])
    u, _, _ = image_coords(np.zeros(3), phi, SPEC)
    assert u.tolist() == [0, SPEC.width // 2, SPEC.width - 1]


def test_image_coords_overshoot_clamped():
    theta = np.array([math.radians(SPEC.fov_up) + 0.1,
                      -math.radians(SPEC.fov_down) - 0.1])
    u, v, overshoot = image_coords(theta, np.zeros(2), SPEC)
    assert overshoot == 2
    assert v.tolist() == [0, SPEC.height - 1]


def test_project_collision_near_wins():
    # two points on the same ray at ranges 5 and 9
    cloud = _cloud([[5.0, 0.0, 0.0], [9.0, 0.0, 0.0]])
    probs = np.array([[0.9, 0.1], [0.2, 0.8]], dtype=np.float32)
    pred = np.array([1, 2], dtype=np.int32)
    grids = project(cloud, probs, pred, SPEC, gt=np.array([1, 2]))
    assert grids.collision_count == 1
    row, col = grids.point_rows[0], grids.point_cols[0]
    assert (grids.point_rows[1], grids.point_cols[1]) == (row, col)
    assert grids.pred[row, col] == 1
    assert grids.features[row, col, 4] == pytest.approx(5.0)
    assert grids.mask.sum() == 1


def test_project_collision_tie_lower_index():
    cloud = _cloud([[5.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
    probs = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    grids = project(cloud, probs, np.array([1, 2]), SPEC)
    row, col = grids.point_rows[0], grids.point_cols[0]
    assert grids.pred[row, col] == 1


def test_project_shape_errors():
    cloud = _cloud([[5.0, 0.0, 0.0]])
    with pytest.raises(ValueError, match="probability rows"):
        project(cloud, np.zeros((2, 3), dtype=np.float32),
                np.array([1]), SPEC)
    with pytest.raises(ValueError, match="prediction vector"):
        project(cloud, np.zeros((1, 3), dtype=np.float32),
                np.array([1, 1]), SPEC)
    with pytest.raises(ValueError, match="label vector"):
        project(cloud, np.zeros((1, 3), dtype=np.float32),
                np.array([1]), SPEC, gt=np.array([1, 2]))


def test_fill_wraparound_row():
    # single projected pixel at u=0 of a 1x4 strip: u=3 is distance 1 away
    spec = SensorSpec(channels=1, angular_resolution=90.0, fov_up=1.0,
                      fov_down=1.0)
    assert (spec.height, spec.width) == (1, 4)
    cloud = _cloud([[10.0, 1e-5, 0.0]])  # just below azimuth pi... lands u=2
    r, theta, phi = spherical_angles(cloud.x, cloud.y, cloud.z)
    u, v, _ = image_coords(theta, phi, spec)
    probs = np.array([[1.0]], dtype=np.float32)
    grids = project(cloud, probs, np.array([1]), spec)
    donor = nearest_donor_fill(grids.mask.astype(bool), wrap=True)
    src = int(v[0]) * 4 + int(u[0])
    assert (donor == src).all()
    brute = brute_nearest_donor(grids.mask.astype(bool), wrap=True)
    assert np.array_equal(donor, brute)


def test_fill_copies_whole_channel_set():
    cloud = _cloud([[5.0, 0.0, 0.0], [0.0, 5.0, 1.0]])
    probs = np.array([[0.7, 0.3], [0.1, 0.9]], dtype=np.float32)
    grids = project(cloud, probs, np.array([1, 2]), SPEC,
                    gt=np.array([1, 2]))
    filled = fill(grids)
    assert filled.filled and not grids.filled
    assert np.array_equal(filled.mask, grids.mask)  # mask untouched
    # every pixel's channels must jointly equal one of the two donors
    flat_feat = filled.features.reshape(-1, 5)
    flat_prob = filled.probs.reshape(-1, 2)
    flat_pred = filled.pred.ravel()
    donors = np.flatnonzero(grids.mask.ravel())
    donor_feat = grids.features.reshape(-1, 5)[donors]
    donor_prob = grids.probs.reshape(-1, 2)[donors]
    donor_pred = grids.pred.ravel()[donors]
    for i in range(flat_feat.shape[0]):
        hit = [j for j in range(len(donors))
               if np.array_equal(flat_feat[i], donor_feat[j])
               and np.array_equal(flat_prob[i], donor_prob[j])
               and flat_pred[i] == donor_pred[j]]
        assert hit, f"pixel {i} mixes donors"


def test_fill_empty_grid_error():
    with pytest.raises(ValueError, match="no projected pixels"):
        nearest_donor_fill(np.zeros((4, 4), dtype=bool))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10 ** 6), wrap=st.booleans())
def test_fill_matches_brute_force(seed, wrap):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(1, 7)), int(rng.integers(1, 9))
    mask = rng.random((h, w)) < 0.3
    if not mask.any():
        mask[int(rng.integers(h)), int(rng.integers(w))] = True
    ours = nearest_donor_fill(mask, wrap=wrap)
    brute = brute_nearest_donor(mask, wrap=wrap)
    assert np.array_equal(ours, brute)


def test_reproject_reads_back_winners():
    cloud = _cloud([[5.0, 0.0, 0.0], [0.0, 5.0, 1.0], [5.0, 0.0, 0.0]])
    probs = np.full((3, 2), 0.5, dtype=np.float32)
    grids = project(cloud, probs, np.array([1, 2, 2]), SPEC)
    back = reproject(grids.pred, grids.point_rows, grids.point_cols)
    # point 2 lost its pixel to point 0, so it reads the winner's class
    assert back.tolist() == [1, 2, 1]


def test_round_trip_exact_for_separated_points():
    rng = np.random.default_rng(7)
    m = 300
    # random angles snapped to distinct pixel centers, so no collisions
    w, h = SPEC.width, SPEC.height
    flat = rng.choice(w * h, size=m, replace=False)
    v, u = np.divmod(flat, w)
    fov_down = math.radians(SPEC.fov_down)
    fov_ver = math.radians(SPEC.fov_ver)
    theta = fov_ver * (1.0 - (v + 0.5) / h) - fov_down
    phi = math.pi * (1.0 - 2.0 * (u + 0.5) / w)
    r = rng.uniform(2.0, 50.0, size=m)
    x = r * np.cos(theta) * np.cos(phi)
    y = r * np.cos(theta) * np.sin(phi)
    z = r * np.sin(theta)
    cloud = PointCloud(np.column_stack([x, y, z, np.zeros(m)]).astype(np.float32))
    gt = rng.integers(1, 4, size=m).astype(np.int32)
    probs = np.full((m, 3), 1.0 / 3.0, dtype=np.float32)
    grids = project(cloud, probs, gt, SPEC, gt=gt)
    assert grids.collision_count == 0
    assert int(grids.mask.sum()) == m
    assert np.array_equal(
        reproject(grids.gt, grids.point_rows, grids.point_cols), gt)
