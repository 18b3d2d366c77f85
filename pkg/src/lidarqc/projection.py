"""Spherical projection of point clouds onto a panoramic grid and back.

Angles follow the rotating-sensor convention: the polar angle is measured
from the horizontal plane (positive up), the azimuth is the two-argument
arctangent of (y, x) covering (-pi, pi]. Pixel (0, 0) is the top of the
field of view at azimuth pi; columns advance with decreasing azimuth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from lidarqc.core import PointCloud, SensorSpec
from lidarqc.gridops import nearest_donor_fill

FEATURE_CHANNELS = ("x", "y", "z", "intensity", "range")


@dataclass
class FrameGrids:
    """Panoramic per-pixel state for one frame.

    `mask` is 1 where a pixel received a real point and 0 where `fill`
    copied the value from a neighbor. `point_rows`/`point_cols` keep the
    pixel of every point, including points that lost a pixel collision,
    so grid values can be read back per point.
    """

    width: int
    height: int
    features: np.ndarray       # (h, w, 5) float32: x, y, z, intensity, range
    probs: np.ndarray          # (h, w, n) float32
    pred: np.ndarray           # (h, w) int32, classes 1..n (0 while empty)
    gt: np.ndarray | None      # (h, w) int32 or None when running blind
    mask: np.ndarray           # (h, w) uint8
    point_rows: np.ndarray     # (m,) int32
    point_cols: np.ndarray     # (m,) int32
    collision_count: int
    overshoot_count: int
    filled: bool = False

    @property
    def n_classes(self) -> int:
        return int(self.probs.shape[2])

    @property
    def n_points(self) -> int:
        return int(self.point_rows.shape[0])


def spherical_angles(x, y, z):
    """Range, polar angle and azimuth for Cartesian coordinates.

    Uses the quadrant-aware arctangent, so points behind the sensor get
    azimuths near +-pi rather than folding onto the forward axis.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    r = np.sqrt(x * x + y * y + z * z)
    if (r <= 0).any():
        idx = int(np.argwhere(r <= 0)[0, 0])
        raise ValueError(f"zero-range point at index {idx}")
    theta = np.arcsin(np.clip(z / r, -1.0, 1.0))
    phi = np.arctan2(y, x)
    return r, theta, phi


def image_coords(theta, phi, spec: SensorSpec):
    """Integer pixel coordinates for spherical angles.

    Real-valued coordinates are floored, then clamped into the grid; the
    number of clamped positions is returned so field-of-view overshoot
    stays visible instead of silently disappearing.
    """
    w = spec.width
    h = spec.height
    fov_down = math.radians(spec.fov_down)
    fov_ver = math.radians(spec.fov_ver)
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    u_real = 0.5 * (1.0 - phi / math.pi) * w
    v_real = (1.0 - (theta + fov_down) / fov_ver) * h
    u = np.floor(u_real).astype(np.int64)
    v = np.floor(v_real).astype(np.int64)
    overshoot = int(((u < 0) | (u >= w) | (v < 0) | (v >= h)).sum())
    u = np.clip(u, 0, w - 1).astype(np.int32)
    v = np.clip(v, 0, h - 1).astype(np.int32)
    return u, v, overshoot


def project(cloud: PointCloud, probs: np.ndarray, pred: np.ndarray,
            spec: SensorSpec, gt: np.ndarray | None = None) -> FrameGrids:
    """Scatter a point cloud into the panoramic grid.

    When several points land on one pixel the closest one owns it; equal
    ranges fall back to the lower point index. Losing points stay
    addressable through the per-point pixel map.
    """
    m = len(cloud)
    probs = np.asarray(probs)
    pred = np.asarray(pred)
    if probs.shape[0] != m:
        raise ValueError(f"{probs.shape[0]} probability rows for {m} points")
    if probs.ndim != 2:
        raise ValueError("probability matrix must be (m, n)")
    if pred.shape != (m,):
        raise ValueError("prediction vector does not match the point count")
    if gt is not None and np.asarray(gt).shape != (m,):
        raise ValueError("label vector does not match the point count")
    n = probs.shape[1]
    h, w = spec.height, spec.width

    r, theta, phi = spherical_angles(cloud.x, cloud.y, cloud.z)
    u, v, overshoot = image_coords(theta, phi, spec)
    flat = v.astype(np.int64) * w + u

    # sort by (range, index) so the first hit per pixel is the winner
    order = np.lexsort((np.arange(m), r))
    occupied, first = np.unique(flat[order], return_index=True)
    owners = order[first]
    collision_count = m - len(occupied)

    features = np.zeros((h * w, len(FEATURE_CHANNELS)), dtype=np.float32)
    stacked = np.column_stack([
        cloud.x, cloud.y, cloud.z, cloud.intensity, r.astype(np.float32),
    ]).astype(np.float32)
    features[occupied] = stacked[owners]

    prob_grid = np.zeros((h * w, n), dtype=np.float32)
    prob_grid[occupied] = probs[owners]

    pred_grid = np.zeros(h * w, dtype=np.int32)
    pred_grid[occupied] = pred[owners]

    gt_grid = None
    if gt is not None:
        gt_grid = np.zeros(h * w, dtype=np.int32)
        gt_grid[occupied] = np.asarray(gt)[owners]
        gt_grid = gt_grid.reshape(h, w)

    mask = np.zeros(h * w, dtype=np.uint8)
    mask[occupied] = 1

    return FrameGrids(
        width=w,
        height=h,
        features=features.reshape(h, w, len(FEATURE_CHANNELS)),
        probs=prob_grid.reshape(h, w, n),
        pred=pred_grid.reshape(h, w),
        gt=gt_grid,
        mask=mask.reshape(h, w),
        point_rows=v,
        point_cols=u,
        collision_count=int(collision_count),
        overshoot_count=overshoot,
    )


def fill(grids: FrameGrids, wrap: bool = True) -> FrameGrids:
    """Copy every channel of the nearest projected pixel into the gaps.

    Each empty pixel takes all channels from one donor pixel, so the
    filled grid stays self-consistent (probabilities still sum to one,
    the prediction still matches the probability argmax). Projected
    pixels and the mask itself are left untouched.
    """
    donors = nearest_donor_fill(grids.mask.astype(bool), wrap=wrap)
    src = donors.ravel()
    h, w = grids.height, grids.width

    features = grids.features.reshape(h * w, -1)[src].reshape(grids.features.shape)
    probs = grids.probs.reshape(h * w, -1)[src].reshape(grids.probs.shape)
    pred = grids.pred.reshape(h * w)[src].reshape(h, w)
    gt = None
    if grids.gt is not None:
        gt = grids.gt.reshape(h * w)[src].reshape(h, w)
    return replace(grids, features=features, probs=probs, pred=pred, gt=gt,
                   mask=grids.mask.copy(), filled=True)


def reproject(grid: np.ndarray, point_rows: np.ndarray,
              point_cols: np.ndarray) -> np.ndarray:
    """Read grid values back at each point's pixel."""
    grid = np.asarray(grid)
    return grid[np.asarray(point_rows), np.asarray(point_cols)]


def write_pgm(path, grid: np.ndarray, levels: int = 255) -> None:
    """Min-max scaled ASCII PGM dump of a scalar grid, for eyeballing."""
    g = np.asarray(grid, dtype=np.float64)
    lo = float(g.min())
    hi = float(g.max())
    if hi > lo:
        scaled = np.round((g - lo) / (hi - lo) * levels).astype(np.int64)
    else:
        scaled = np.zeros_like(g, dtype=np.int64)
    lines = [f"P2", f"{g.shape[1]} {g.shape[0]}", str(levels)]
    lines += [" ".join(str(int(x)) for x in row) for row in scaled]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_grid_csv(path, grid: np.ndarray) -> None:
    """Comma-separated dump of a scalar grid with round-trip-exact floats."""
    g = np.asarray(grid, dtype=np.float64)
    with open(path, "w") as fh:
        for row in g:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
