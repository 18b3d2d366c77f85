"""Domain types and binary dataset I/O.

File layout follows the de-facto LiDAR benchmark conventions: point clouds
as packed float32 (x, y, z, intensity) records, labels as uint32 with the
semantic class in the low 16 bits, class probabilities as row-major float32.
All multi-byte values are little-endian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

POINT_RECORD_BYTES = 16

# Probability rows whose sum is already within ROW_SUM_EXACT of one are kept
# bit-identical on load, sums off by up to ROW_SUM_TOL are renormalized,
# anything worse is rejected.
ROW_SUM_EXACT = 1e-6
ROW_SUM_TOL = 1e-4
PROB_ENTRY_SLACK = 1e-6


@dataclass(frozen=True)
class SensorSpec:
    """Rotating LiDAR geometry; fixes the panoramic image dimensions.

    Angles are degrees. The image height equals the channel count; the
    width is the horizontal field of view divided by the angular
    resolution, rounded down.
    """

    channels: int
    angular_resolution: float
    fov_up: float
    fov_down: float
    fov_hor: float = 360.0

    def __post_init__(self) -> None:
        if self.channels < 1:
            raise ValueError("sensor needs at least one channel")
        if self.angular_resolution <= 0:
            raise ValueError("angular resolution must be positive")
        if self.fov_up + self.fov_down <= 0:
            raise ValueError("vertical field of view must be positive")
        if self.width < 1:
            raise ValueError("horizontal field of view is below one angular step")

    @property
    def height(self) -> int:
        return self.channels

    @property
    def width(self) -> int:
        return int(math.floor(self.fov_hor / self.angular_resolution))

    @property
    def fov_ver(self) -> float:
        return self.fov_up + self.fov_down


@dataclass(frozen=True)
class PointCloud:
    """Ordered point cloud; the row index is the point identity."""

    points: np.ndarray  # (m, 4) float32 rows of x, y, z, intensity

    def __post_init__(self) -> None:
        pts = self.points
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError("point array must have shape (m, 4)")
        if len(pts) == 0:
            raise ValueError("empty point cloud")
        if not np.isfinite(pts).all():
            bad = int(np.argwhere(~np.isfinite(pts).all(axis=1))[0, 0])
            raise ValueError(f"non-finite value at point {bad}")

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.points[:, 2]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def ranges(self) -> np.ndarray:
        """Euclidean range per point, computed in float64."""
        xyz = self.points[:, :3].astype(np.float64)
        return np.sqrt((xyz * xyz).sum(axis=1))


def load_pointcloud(path: str | Path) -> PointCloud:
    """Read a packed float32 point cloud file."""
    raw = Path(path).read_bytes()
    if len(raw) == 0:
        raise ValueError(f"{path}: empty point cloud")
    if len(raw) % POINT_RECORD_BYTES != 0:
        raise ValueError(f"{path}: truncated record, {len(raw)} bytes is not a multiple of {POINT_RECORD_BYTES}")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).copy()
    if not np.isfinite(pts).all():
        bad = int(np.argwhere(~np.isfinite(pts).all(axis=1))[0, 0])
        raise ValueError(f"{path}: non-finite value at point {bad}")
    return PointCloud(pts)


def save_pointcloud(path: str | Path, cloud: PointCloud) -> None:
    Path(path).write_bytes(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())


def load_labels(path: str | Path, count: int, class_map: dict[int, int],
                n_classes: int | None = None) -> np.ndarray:
    """Read a uint32 label file and map raw ids to contiguous class ids.

    Only the low 16 bits of each record carry the semantic id; the high
    bits (instance ids in some datasets) are ignored.
    """
    raw = Path(path).read_bytes()
    if len(raw) % 4 != 0:
        raise ValueError(f"{path}: truncated record, {len(raw)} bytes is not a multiple of 4")
    values = np.frombuffer(raw, dtype="<u4")
    if len(values) != count:
        raise ValueError(f"{path}: {len(values)} labels for {count} points")
    sem = (values & 0xFFFF).astype(np.int64)
    lut = np.full(1 << 16, -1, dtype=np.int64)
    for raw_id, cls in class_map.items():
        if not 0 <= raw_id < (1 << 16):
            raise ValueError(f"class map raw id {raw_id} outside uint16 range")
        lut[raw_id] = cls
    mapped = lut[sem]
    if (mapped < 0).any():
        missing = int(sem[mapped < 0][0])
        raise ValueError(f"{path}: unmapped raw class id {missing}")
    if n_classes is not None and ((mapped < 1) | (mapped > n_classes)).any():
        bad = int(mapped[(mapped < 1) | (mapped > n_classes)][0])
        raise ValueError(f"{path}: mapped class {bad} outside 1..{n_classes}")
    return mapped.astype(np.int32)


def save_labels(path: str | Path, labels: np.ndarray,
                inverse_map: dict[int, int] | None = None) -> None:
    """Write labels as uint32 records; identity raw ids unless a map is given."""
    lab = np.asarray(labels)
    if inverse_map is not None:
        out = np.array([inverse_map[int(v)] for v in lab], dtype="<u4")
    else:
        out = lab.astype("<u4")
    Path(path).write_bytes(out.tobytes())


def load_probabilities(path: str | Path, count: int, n_classes: int) -> np.ndarray:
    """Read an (m, n) float32 probability matrix and validate the rows.

    Rows already summing to one (within ROW_SUM_EXACT) pass through
    untouched so that a save/load cycle is bit-identical; rows off by up
    to ROW_SUM_TOL are renormalized; anything worse is an error.
    """
    raw = Path(path).read_bytes()
    values = np.frombuffer(raw, dtype="<f4")
    if len(values) != count * n_classes:
        raise ValueError(
            f"{path}: {len(values)} values, expected {count} x {n_classes}")
    probs = values.reshape(count, n_classes).copy()
    low = probs < -PROB_ENTRY_SLACK
    high = probs > 1.0 + PROB_ENTRY_SLACK
    if low.any() or high.any():
        row = int(np.argwhere(low | high)[0, 0])
        raise ValueError(f"{path}: probability outside [0, 1] at row {row}")
    sums = probs.astype(np.float64).sum(axis=1)
    off = np.abs(sums - 1.0)
    if (off > ROW_SUM_TOL).any():
        row = int(np.argmax(off))
        raise ValueError(f"{path}: row {row} sums to {sums[row]:.6f}")
    fix = off > ROW_SUM_EXACT
    if fix.any():
        fixed = np.clip(probs[fix].astype(np.float64), 0.0, None)
        probs[fix] = (fixed / fixed.sum(axis=1, keepdims=True)).astype(np.float32)
    return probs


def save_probabilities(path: str | Path, probs: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(probs, dtype="<f4").tobytes())


def argmax_prediction(probs: np.ndarray) -> np.ndarray:
    """Predicted class per row; ties go to the smallest class id.

    Class ids are 1-based, matching the label convention.
    """
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[1] < 1:
        raise ValueError("probability matrix must be (m, n)")
    return (np.argmax(probs, axis=1) + 1).astype(np.int32)


def overlay_onehot(probs: np.ndarray, relabels) -> np.ndarray:
    """Return a copy of `probs` with selected rows replaced by exact one-hots.

    `relabels` is an iterable of (row, class) pairs, classes 1-based. Used
    to splice externally corrected points into a probability matrix.
    """
    probs = np.asarray(probs)
    out = probs.copy()
    m, n = out.shape
    for row, cls in relabels:
        if not 0 <= row < m:
            raise ValueError(f"relabel row {row} outside 0..{m - 1}")
        if not 1 <= cls <= n:
            raise ValueError(f"relabel class {cls} outside 1..{n}")
        out[row] = 0.0
        out[row, cls - 1] = 1.0
    return out
