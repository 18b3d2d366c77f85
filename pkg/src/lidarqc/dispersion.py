"""Pixelwise dispersion heatmaps derived from the class probabilities.

Three probability-dispersion measures (normalized entropy, probability
difference, variation ratio) plus the raw feature channels form the
standard measure stack that segment aggregation consumes. All maps are
computed in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lidarqc.projection import FEATURE_CHANNELS, FrameGrids

LOG_EPS = 1e-12

# canonical measure order: dispersion maps first, then feature channels
MEASURES = ("entropy", "probdiff", "varratio") + FEATURE_CHANNELS


@dataclass(frozen=True)
class Heatmap:
    """A named scalar grid aligned with the frame's panoramic image."""

    name: str
    values: np.ndarray  # (h, w) float64


def _prob_cube(grids: FrameGrids) -> np.ndarray:
    return grids.probs.astype(np.float64)


def entropy_map(grids: FrameGrids) -> Heatmap:
    """Shannon entropy per pixel, normalized by log(n) into [0, 1].

    Uses the 0 * log 0 = 0 convention; probabilities are clamped before
    the logarithm so exact zeros stay harmless.
    """
    n = grids.n_classes
    if n < 2:
        raise ValueError("entropy needs at least two classes")
    p = _prob_cube(grids)
    logp = np.log(np.clip(p, LOG_EPS, 1.0))
    values = -(p * logp).sum(axis=2) / math.log(n)
    return Heatmap("entropy", values)


def probdiff_map(grids: FrameGrids) -> Heatmap:
    """One minus the gap between the two largest class probabilities."""
    n = grids.n_classes
    if n < 2:
        raise ValueError("probability difference needs at least two classes")
    p = _prob_cube(grids)
    part = np.partition(p, n - 2, axis=2)
    top1 = part[:, :, n - 1]
    top2 = part[:, :, n - 2]
    return Heatmap("probdiff", 1.0 - (top1 - top2))


def varratio_map(grids: FrameGrids) -> Heatmap:
    """One minus the largest class probability."""
    p = _prob_cube(grids)
    return Heatmap("varratio", 1.0 - p.max(axis=2))


def measure_stack(grids: FrameGrids, auxiliaries: dict[str, np.ndarray] | None = None,
                  ) -> list[Heatmap]:
    """The full list of heatmaps for a filled frame.

    Order is fixed: entropy, probability difference, variation ratio, the
    five feature channels, then any auxiliary maps in their given order.
    Auxiliary maps (externally supplied uncertainty grids, for example)
    must match the grid shape.
    """
    if not grids.filled:
        raise ValueError("measure stack needs a filled frame")
    maps = [entropy_map(grids), probdiff_map(grids), varratio_map(grids)]
    for k, name in enumerate(FEATURE_CHANNELS):
        maps.append(Heatmap(name, grids.features[:, :, k].astype(np.float64)))
    if auxiliaries:
        shape = (grids.height, grids.width)
        for name, values in auxiliaries.items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"auxiliary map {name} has shape {arr.shape}, expected {shape}")
            if name in MEASURES or any(name == m.name for m in maps):
                raise ValueError(f"duplicate heatmap name {name}")
            maps.append(Heatmap(name, arr))
    return maps
