"""Segment-level quality estimation for LiDAR semantic segmentation."""

from lidarqc.core import PointCloud, SensorSpec
from lidarqc.dispersion import Heatmap, measure_stack
from lidarqc.features import MetaDataset, build_dataset
from lidarqc.pipeline import FrameResult, process_frame
from lidarqc.projection import FrameGrids, fill, project
from lidarqc.segments import Segment, connected_components, decompose, match_all

__version__ = "0.1.0"

__all__ = [
    "FrameGrids", "FrameResult", "Heatmap", "MetaDataset", "PointCloud",
    "Segment", "SensorSpec", "build_dataset", "connected_components",
    "decompose", "fill", "match_all", "measure_stack", "process_frame",
    "project", "__version__",
]
