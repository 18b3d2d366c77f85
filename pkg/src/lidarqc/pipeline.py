"""One frame end to end: project, fill, measure, segment, aggregate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lidarqc.core import PointCloud, SensorSpec
from lidarqc.dispersion import Heatmap, measure_stack
from lidarqc.features import FrameFeatures, frame_features
from lidarqc.projection import FrameGrids, fill, project
from lidarqc.segments import (GroundTruthMatch, Segment, connected_components,
                              decompose, match_all)


@dataclass(frozen=True)
class FrameResult:
    grids: FrameGrids
    heatmaps: tuple[Heatmap, ...]
    segments: tuple[Segment, ...]
    matches: tuple[GroundTruthMatch, ...] | None
    features: FrameFeatures


def process_frame(frame_id: str, cloud: PointCloud, probs: np.ndarray,
                  pred: np.ndarray, spec: SensorSpec,
                  gt: np.ndarray | None = None,
                  auxiliaries: dict[str, np.ndarray] | None = None,
                  wrap: bool = True) -> FrameResult:
    """Run the full per-frame analysis.

    With ground truth the features carry adjusted IoU targets; without it
    they carry only the metrics, which is what inference-time scoring uses.
    """
    grids = project(cloud, probs, pred, spec, gt=gt)
    grids = fill(grids, wrap=wrap)
    heatmaps = tuple(measure_stack(grids, auxiliaries=auxiliaries))

    pred_segments = decompose(
        connected_components(grids.pred, wrap=wrap), grids.mask, wrap=wrap)
    matches = None
    if gt is not None:
        gt_segments = connected_components(grids.gt, wrap=wrap)
        matches = match_all(pred_segments, gt_segments, grids.mask)

    features = frame_features(frame_id, pred_segments, heatmaps, grids,
                              matches=matches)
    return FrameResult(grids=grids, heatmaps=heatmaps, segments=pred_segments,
                       matches=matches, features=features)
