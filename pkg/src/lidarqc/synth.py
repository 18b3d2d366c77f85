"""Synthetic scenes and a controllable mock inference.

Scenes are ray-cast on the exact pixel-center grid of the sensor, so every
generated point projects into its own pixel: no collisions, no gaps along
hit rays, and grid values re-project to the originating points exactly.
Mock inference corrupts the ground truth in controlled ways (boundary
erosion, wholesale relabeling of small segments, random point noise) and
softens the one-hot labels with a temperature that rises near the
corrupted regions, so dispersion correlates with the planted errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lidarqc.core import PointCloud, SensorSpec
from lidarqc.gridops import OFFSETS_8, neighbor_values, nearest_donor_fill
from lidarqc.projection import image_coords, spherical_angles
from lidarqc.segments import connected_components


@dataclass(frozen=True)
class SceneConfig:
    seed: int
    sensor: SensorSpec
    n_classes: int
    n_boxes: int = 8
    n_poles: int = 6
    extent: float = 45.0
    ground_z: float = -1.8
    intensity_noise: float = 0.02

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if self.ground_z >= 0:
            raise ValueError("ground must sit below the sensor")
        if self.n_boxes < 0 or self.n_poles < 0:
            raise ValueError("object counts must be non-negative")
        if self.intensity_noise < 0:
            raise ValueError("intensity noise must be non-negative")


@dataclass(frozen=True)
class CorruptionConfig:
    seed: int
    erosion_prob: float = 0.0
    flip_prob: float = 0.0
    temperature: float = 0.1
    label_noise: float = 0.0
    flip_max_size: int = 800
    heat_factor: float = 4.0
    class_temp_spread: float = 0.0

    def __post_init__(self) -> None:
        for name in ("erosion_prob", "flip_prob", "label_noise"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.heat_factor < 0 or self.class_temp_spread < 0:
            raise ValueError("temperature modifiers must be non-negative")


def _ray_directions(spec: SensorSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit direction per pixel center, scan order (row-major)."""
    h, w = spec.height, spec.width
    fov_down = math.radians(spec.fov_down)
    fov_ver = math.radians(spec.fov_ver)
    v = np.arange(h, dtype=np.float64)
    u = np.arange(w, dtype=np.float64)
    theta = fov_ver * (1.0 - (v + 0.5) / h) - fov_down
    phi = math.pi * (1.0 - 2.0 * (u + 0.5) / w)
    theta_g, phi_g = np.meshgrid(theta, phi, indexing="ij")
    ct = np.cos(theta_g).ravel()
    dx = ct * np.cos(phi_g).ravel()
    dy = ct * np.sin(phi_g).ravel()
    dz = np.sin(theta_g).ravel()
    return dx, dy, dz


def _intersect_ground(dx, dy, dz, ground_z, extent):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dz < 0, ground_z / dz, np.inf)
    return np.where(t <= extent, t, np.inf)


def _intersect_box(dx, dy, dz, lo, hi):
    t = np.full(dx.shape, np.inf)
    t_near = np.full(dx.shape, -np.inf)
    t_far = np.full(dx.shape, np.inf)
    ok = np.ones(dx.shape, dtype=bool)
    for d, a, b in ((dx, lo[0], hi[0]), (dy, lo[1], hi[1]), (dz, lo[2], hi[2])):
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (a - 0.0) / d
            t1 = (b - 0.0) / d
        near = np.minimum(t0, t1)
        far = np.maximum(t0, t1)
        # rays parallel to a slab must start inside it
        parallel = d == 0
        inside = (a <= 0.0) & (0.0 <= b)
        ok &= ~parallel | inside
        near = np.where(parallel, -np.inf, near)
        far = np.where(parallel, np.inf, far)
        t_near = np.maximum(t_near, near)
        t_far = np.minimum(t_far, far)
    hit = ok & (t_near <= t_far) & (t_near > 1e-9)
    t[hit] = t_near[hit]
    return t


def _intersect_pole(dx, dy, dz, cx, cy, radius, z_lo, z_hi):
    a = dx * dx + dy * dy
    b = -2.0 * (cx * dx + cy * dy)
    c = cx * cx + cy * cy - radius * radius
    disc = b * b - 4.0 * a * c
    t = np.full(dx.shape, np.inf)
    valid = (disc >= 0) & (a > 0)
    sq = np.sqrt(np.where(valid, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = [(-b - sq) / (2 * a), (-b + sq) / (2 * a)]
    for root in roots:
        z = root * dz
        hit = valid & (root > 1e-9) & (z >= z_lo) & (z <= z_hi) & (root < t)
        t[hit] = root[hit]
    return t


def generate_scene(cfg: SceneConfig) -> tuple[PointCloud, np.ndarray]:
    """Ray-cast a random scene; returns the cloud and per-point labels.

    Points come out in scan order of their pixels. Rays that hit nothing
    inside the extent produce no point, so the sky stays empty.
    """
    rng = np.random.default_rng(cfg.seed)
    spec = cfg.sensor
    dx, dy, dz = _ray_directions(spec)
    n = cfg.n_classes

    hits = [_intersect_ground(dx, dy, dz, cfg.ground_z, cfg.extent)]
    classes = [1]
    for _ in range(cfg.n_boxes):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(6.0, 0.75 * cfg.extent)
        cx, cy = dist * math.cos(angle), dist * math.sin(angle)
        half_x = rng.uniform(0.6, 2.2)
        half_y = rng.uniform(0.6, 2.2)
        height = rng.uniform(0.8, 3.0)
        lo = (cx - half_x, cy - half_y, cfg.ground_z)
        hi = (cx + half_x, cy + half_y, cfg.ground_z + height)
        hits.append(_intersect_box(dx, dy, dz, lo, hi))
        classes.append(2 + int(rng.integers(n - 1)))
    for _ in range(cfg.n_poles):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(5.0, 0.7 * cfg.extent)
        cx, cy = dist * math.cos(angle), dist * math.sin(angle)
        radius = rng.uniform(0.12, 0.35)
        height = rng.uniform(2.0, 6.0)
        hits.append(_intersect_pole(dx, dy, dz, cx, cy, radius,
                                    cfg.ground_z, cfg.ground_z + height))
        classes.append(2 + int(rng.integers(n - 1)))

    t_all = np.stack(hits)
    winner = np.argmin(t_all, axis=0)
    t_best = t_all[winner, np.arange(len(dx))]
    hit = np.isfinite(t_best)
    if not hit.any():
        raise ValueError("scene produced no points")

    class_by_object = np.array(classes, dtype=np.int32)
    labels = class_by_object[winner[hit]]
    # object classes above the class count fold back into range
    labels = np.where(labels > n, 2 + (labels - 2) % (n - 1), labels).astype(np.int32)

    x = (t_best[hit] * dx[hit]).astype(np.float32)
    y = (t_best[hit] * dy[hit]).astype(np.float32)
    z = (t_best[hit] * dz[hit]).astype(np.float32)
    base = 0.2 + 0.6 * (labels - 1) / max(n - 1, 1)
    intensity = base + cfg.intensity_noise * rng.standard_normal(len(labels))
    intensity = np.clip(intensity, 0.0, 1.0).astype(np.float32)
    cloud = PointCloud(np.column_stack([x, y, z, intensity]))
    return cloud, labels


def mock_inference(gt: np.ndarray, cloud: PointCloud, sensor: SensorSpec,
                   n_classes: int, cfg: CorruptionConfig) -> np.ndarray:
    """Probabilities that imitate a segmentation network on known ground truth.

    Corruption happens in image space so its structure matches the
    segment analysis downstream: boundary pixels erode into a neighboring
    class, whole small segments flip to a wrong class (manufacturing
    false positives), and isolated points flip at the noise rate. The
    one-hot labels are then softened with a per-point temperature that is
    higher for corrupted pixels and their neighborhood.
    """
    gt = np.asarray(gt)
    m = len(cloud)
    if gt.shape != (m,):
        raise ValueError("label vector does not match the point count")
    n = n_classes
    if n < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(cfg.seed)
    h, w = sensor.height, sensor.width

    r, theta, phi = spherical_angles(cloud.x, cloud.y, cloud.z)
    u, v, _ = image_coords(theta, phi, sensor)
    flat = v.astype(np.int64) * w + u

    # nearest point wins a contested pixel, ties to the lower index
    order = np.lexsort((np.arange(m), r))
    occupied, first = np.unique(flat[order], return_index=True)
    owners = order[first]
    label_grid = np.zeros(h * w, dtype=np.int32)
    label_grid[occupied] = gt[owners]
    mask = np.zeros(h * w, dtype=bool)
    mask[occupied] = True

    donors = nearest_donor_fill(mask.reshape(h, w), wrap=True)
    filled = label_grid[donors.ravel()].reshape(h, w)

    segments_list = connected_components(filled, wrap=True)
    corrupted = filled.copy()
    heat = np.zeros((h, w), dtype=np.float64)

    # class of the first differing neighbor per pixel, 0 where uniform
    diff_class = np.zeros((h, w), dtype=np.int32)
    for dv, du in OFFSETS_8:
        nb = neighbor_values(filled, dv, du, wrap=True, fill=-1)
        candidate = (diff_class == 0) & (nb >= 0) & (nb != filled)
        diff_class[candidate] = nb[candidate]

    if cfg.erosion_prob > 0:
        for seg in segments_list:
            severity = rng.uniform(0.3, 1.0)
            edge = seg.pixels[diff_class.ravel()[seg.pixels] > 0]
            if len(edge) == 0:
                continue
            flip = rng.random(len(edge)) < cfg.erosion_prob * severity
            chosen = edge[flip]
            corrupted.ravel()[chosen] = diff_class.ravel()[chosen]
            heat.ravel()[chosen] = 1.0

    if cfg.flip_prob > 0:
        for seg in segments_list:
            if seg.size > cfg.flip_max_size:
                continue
            if rng.random() >= cfg.flip_prob:
                continue
            fringe_classes = set()
            for dv, du in OFFSETS_8:
                nb = neighbor_values(filled, dv, du, wrap=True, fill=-1)
                fringe_classes.update(np.unique(nb.ravel()[seg.pixels]).tolist())
            wrong = [c for c in range(1, n + 1)
                     if c != seg.class_id and c not in fringe_classes]
            if not wrong:
                wrong = [c for c in range(1, n + 1) if c != seg.class_id]
            target = wrong[int(rng.integers(len(wrong)))]
            corrupted.ravel()[seg.pixels] = target
            heat.ravel()[seg.pixels] = 1.0

    point_labels = corrupted.ravel()[flat]

    if cfg.label_noise > 0:
        noisy = rng.random(m) < cfg.label_noise
        shift = rng.integers(1, n, size=m)
        point_labels = np.where(
            noisy, (point_labels - 1 + shift) % n + 1, point_labels).astype(np.int32)

    # heat spreads one pixel outward at half strength
    spread = heat.copy()
    for dv, du in OFFSETS_8:
        np.maximum(spread, 0.5 * neighbor_values(heat, dv, du, wrap=True, fill=0.0),
                   out=spread)
    point_heat = spread.ravel()[flat]
    if cfg.label_noise > 0:
        point_heat = np.maximum(point_heat, np.where(noisy, 1.0, 0.0))

    class_mult = 1.0 + cfg.class_temp_spread * rng.random(n)
    jitter = 1.0 + 0.3 * (rng.random(m) - 0.5)
    temp = (cfg.temperature * class_mult[point_labels - 1]
            * (1.0 + cfg.heat_factor * point_heat) * jitter)

    # stable softened one-hot: off-class mass exp(-1/T) per class
    off = np.exp(-1.0 / temp)
    denom = 1.0 + (n - 1) * off
    probs = np.empty((m, n), dtype=np.float64)
    probs[:] = (off / denom)[:, None]
    probs[np.arange(m), point_labels - 1] = 1.0 / denom
    return probs.astype(np.float32)
