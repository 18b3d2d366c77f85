"""Segment-level aggregation of heatmaps into tabular metric rows.

Every decomposed segment turns into one fixed-order row: mean and variance
of each heatmap over the whole segment, its interior and its boundary, the
size-weighted relative variants, the size block, and per-class fringe and
probability summaries. With the standard eight-measure stack and n classes
that is 86 + 2n columns; each auxiliary heatmap adds ten more.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from lidarqc.dispersion import Heatmap
from lidarqc.projection import FrameGrids
from lidarqc.segments import GroundTruthMatch, Segment

REGION_SUFFIXES = ("", "_in", "_bd", "_rel", "_rel_in")
SIZE_COLUMNS = ("size", "size_in", "size_bd", "size_rel", "size_rel_in", "size_points")

_TABLE_MAGIC = b"LQDS"
_TABLE_VERSION = 1


def metric_names(n_classes: int, measures) -> tuple[str, ...]:
    """Column names in canonical order for a given measure stack."""
    cols: list[str] = []
    for m in measures:
        for stat in ("mean", "var"):
            cols.extend(f"{stat}_{m}{suffix}" for suffix in REGION_SUFFIXES)
    cols.extend(SIZE_COLUMNS)
    cols.extend(f"neighbor_frac_{c}" for c in range(1, n_classes + 1))
    cols.extend(f"class_prob_{c}" for c in range(1, n_classes + 1))
    return tuple(cols)


@dataclass(frozen=True)
class MetricVector:
    """One segment's aggregated metrics, names aligned with values."""

    names: tuple[str, ...]
    values: np.ndarray  # float64


def _stat_block(stack: np.ndarray, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and moment-form variance of each stacked heatmap over a pixel set."""
    if len(pixels) == 0:
        zeros = np.zeros(stack.shape[0])
        return zeros, zeros.copy()
    sub = stack[:, pixels]
    mean = sub.mean(axis=1)
    var = np.maximum((sub * sub).mean(axis=1) - mean * mean, 0.0)
    return mean, var


def _aggregate_row(seg: Segment, stack: np.ndarray, pred_flat: np.ndarray,
                   probs_flat: np.ndarray, n_classes: int) -> np.ndarray:
    if seg.interior is None or seg.size_points is None:
        raise ValueError("segment must be decomposed before aggregation")
    s = seg.size
    s_in = seg.size_interior
    s_bd = seg.size_boundary
    rel = s / s_bd
    rel_in = s_in / s_bd

    mean_w, var_w = _stat_block(stack, seg.pixels)
    mean_in, var_in = _stat_block(stack, seg.interior)
    mean_bd, var_bd = _stat_block(stack, seg.boundary)

    # per measure: mean x (whole, in, bd, rel, rel_in) then var likewise;
    # the relative variants scale the whole-segment statistic
    block = np.column_stack([
        mean_w, mean_in, mean_bd, mean_w * rel, mean_w * rel_in,
        var_w, var_in, var_bd, var_w * rel, var_w * rel_in,
    ])

    sizes = np.array([s, s_in, s_bd, rel, rel_in, seg.size_points], dtype=np.float64)

    fringe_n = len(seg.neighbors)
    counts = np.bincount(pred_flat[seg.boundary], minlength=n_classes + 1)[1:]
    neighbor_frac = counts / fringe_n if fringe_n > 0 else np.zeros(n_classes)

    class_prob = probs_flat[seg.pixels].mean(axis=0)

    return np.concatenate([block.ravel(), sizes, neighbor_frac, class_prob])


def aggregate_frame(segments: list[Segment], heatmaps: list[Heatmap],
                    grids: FrameGrids) -> tuple[tuple[str, ...], np.ndarray]:
    """Metric rows for all segments of one frame, plus the column names."""
    n = grids.n_classes
    names = metric_names(n, [hm.name for hm in heatmaps])
    stack = np.stack([hm.values.ravel() for hm in heatmaps])
    pred_flat = grids.pred.ravel()
    probs_flat = grids.probs.reshape(-1, n).astype(np.float64)
    rows = np.empty((len(segments), len(names)), dtype=np.float64)
    for i, seg in enumerate(segments):
        rows[i] = _aggregate_row(seg, stack, pred_flat, probs_flat, n)
    return names, rows


def aggregate(seg: Segment, heatmaps: list[Heatmap], grids: FrameGrids) -> MetricVector:
    """Aggregated metric vector for a single decomposed segment."""
    names, rows = aggregate_frame([seg], heatmaps, grids)
    return MetricVector(names=names, values=rows[0])


@dataclass(frozen=True)
class FrameFeatures:
    """Aggregated rows of one frame, ready for dataset assembly."""

    frame_id: str
    columns: tuple[str, ...]
    seg_ids: np.ndarray
    class_ids: np.ndarray
    size_points: np.ndarray
    metrics: np.ndarray                 # (rows, len(columns)) float64
    iou: np.ndarray | None = None
    iou_adj: np.ndarray | None = None


def frame_features(frame_id: str, segments: list[Segment], heatmaps: list[Heatmap],
                   grids: FrameGrids, matches: list[GroundTruthMatch] | None = None,
                   ) -> FrameFeatures:
    """Aggregate a processed frame into a FrameFeatures block."""
    names, rows = aggregate_frame(segments, heatmaps, grids)
    iou = iou_adj = None
    if matches is not None:
        if len(matches) != len(segments):
            raise ValueError("one match per segment required")
        iou = np.array([m.iou for m in matches], dtype=np.float64)
        iou_adj = np.array([m.iou_adj for m in matches], dtype=np.float64)
    return FrameFeatures(
        frame_id=frame_id,
        columns=names,
        seg_ids=np.array([s.seg_id for s in segments], dtype=np.int32),
        class_ids=np.array([s.class_id for s in segments], dtype=np.int32),
        size_points=np.array([s.size_points for s in segments], dtype=np.int64),
        metrics=rows,
        iou=iou,
        iou_adj=iou_adj,
    )


@dataclass(frozen=True, eq=False)
class MetaDataset:
    """Tabular per-segment dataset with group keys and optional targets."""

    columns: tuple[str, ...]
    matrix: np.ndarray            # (rows, len(columns)) float64
    frame_ids: np.ndarray         # unicode
    group_keys: np.ndarray        # unicode
    seg_ids: np.ndarray           # int32
    class_ids: np.ndarray         # int32
    size_points: np.ndarray       # int64
    iou: np.ndarray | None
    iou_adj: np.ndarray | None
    retained_point_fraction: float

    @property
    def row_count(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def has_targets(self) -> bool:
        return self.iou_adj is not None

    def fp_labels(self) -> np.ndarray:
        """Binary false-positive target: 1 where the adjusted IoU is zero."""
        if self.iou_adj is None:
            raise ValueError("dataset has no targets")
        return (self.iou_adj == 0.0).astype(np.float64)

    def schema_hash(self) -> bytes:
        return schema_hash(self.columns)

    def select_columns(self, names) -> "MetaDataset":
        """Restrict the metric columns, keeping keys and targets."""
        index = {c: i for i, c in enumerate(self.columns)}
        missing = [c for c in names if c not in index]
        if missing:
            raise ValueError(f"unknown metric columns: {', '.join(missing)}")
        cols = [index[c] for c in names]
        return replace(self, columns=tuple(names),
                       matrix=np.ascontiguousarray(self.matrix[:, cols]))


def schema_hash(columns) -> bytes:
    return hashlib.sha256("\n".join(columns).encode()).digest()[:16]


def build_dataset(frames: list[FrameFeatures], groups: Mapping[str, str],
                  sp_min: int = 10) -> MetaDataset:
    """Assemble per-frame rows into one dataset.

    Segments with fewer than `sp_min` real points are dropped; the
    retained fraction of points is recorded so the cost of the cut stays
    visible. Every frame must appear in `groups` exactly once; group keys
    partition frames for grouped cross-validation.
    """
    if not frames:
        raise ValueError("no frames to assemble")
    seen = set()
    for f in frames:
        if f.frame_id in seen:
            raise ValueError(f"duplicate frame id {f.frame_id}")
        seen.add(f.frame_id)
        if f.frame_id not in groups:
            raise ValueError(f"frame {f.frame_id} has no group key")
        if f.columns != frames[0].columns:
            raise ValueError("frames disagree on metric columns")
    with_targets = [f.iou_adj is not None for f in frames]
    if any(with_targets) != all(with_targets):
        raise ValueError("frames mix labeled and unlabeled data")
    has_targets = all(with_targets)

    matrix = np.concatenate([f.metrics for f in frames])
    frame_ids = np.concatenate([[f.frame_id] * len(f.seg_ids) for f in frames])
    group_keys = np.array([str(groups[fid]) for fid in frame_ids])
    seg_ids = np.concatenate([f.seg_ids for f in frames])
    class_ids = np.concatenate([f.class_ids for f in frames])
    size_points = np.concatenate([f.size_points for f in frames])
    iou = np.concatenate([f.iou for f in frames]) if has_targets else None
    iou_adj = np.concatenate([f.iou_adj for f in frames]) if has_targets else None

    keep = size_points >= sp_min
    total = size_points.sum()
    retained = float(size_points[keep].sum() / total) if total > 0 else 0.0
    if not keep.any():
        raise ValueError(f"no segments have at least {sp_min} points")

    return MetaDataset(
        columns=frames[0].columns,
        matrix=np.ascontiguousarray(matrix[keep]),
        frame_ids=frame_ids[keep],
        group_keys=group_keys[keep],
        seg_ids=seg_ids[keep],
        class_ids=class_ids[keep],
        size_points=size_points[keep],
        iou=iou[keep] if iou is not None else None,
        iou_adj=iou_adj[keep] if iou_adj is not None else None,
        retained_point_fraction=retained,
    )


def write_dataset_csv(path: str | Path, dataset: MetaDataset) -> None:
    """Human-readable CSV; floats are written round-trip exact."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["frame", "group", "segment", "class"] + list(dataset.columns)
        if dataset.has_targets:
            header += ["iou", "iou_adj"]
        writer.writerow(header)
        for i in range(dataset.row_count):
            row = [str(dataset.frame_ids[i]), str(dataset.group_keys[i]),
                   int(dataset.seg_ids[i]), int(dataset.class_ids[i])]
            row += [repr(float(v)) for v in dataset.matrix[i]]
            if dataset.has_targets:
                row += [repr(float(dataset.iou[i])), repr(float(dataset.iou_adj[i]))]
            writer.writerow(row)


def read_dataset_csv(path: str | Path) -> MetaDataset:
    """Parse a dataset CSV written by `write_dataset_csv`.

    The retained-point fraction is not representable in the CSV and comes
    back as NaN; the binary table keeps it.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[:4] != ["frame", "group", "segment", "class"]:
        raise ValueError(f"{path}: unexpected dataset header")
    has_targets = header[-2:] == ["iou", "iou_adj"]
    columns = tuple(header[4:-2] if has_targets else header[4:])
    if not rows:
        raise ValueError(f"{path}: dataset has no rows")
    n_cols = len(columns)
    matrix = np.array([[float(v) for v in r[4:4 + n_cols]] for r in rows])
    sp_col = columns.index("size_points")
    return MetaDataset(
        columns=columns,
        matrix=matrix,
        frame_ids=np.array([r[0] for r in rows]),
        group_keys=np.array([r[1] for r in rows]),
        seg_ids=np.array([int(r[2]) for r in rows], dtype=np.int32),
        class_ids=np.array([int(r[3]) for r in rows], dtype=np.int32),
        size_points=matrix[:, sp_col].astype(np.int64),
        iou=np.array([float(r[-2]) for r in rows]) if has_targets else None,
        iou_adj=np.array([float(r[-1]) for r in rows]) if has_targets else None,
        retained_point_fraction=float("nan"),
    )


def _pack_strings(values) -> bytes:
    blob = "\n".join(values).encode()
    return struct.pack("<I", len(blob)) + blob


def _unpack_strings(buf: memoryview, offset: int) -> tuple[list[str], int]:
    (length,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    blob = bytes(buf[offset:offset + length]).decode()
    return (blob.split("\n") if blob else []), offset + length


def write_dataset_binary(path: str | Path, dataset: MetaDataset) -> None:
    """Compact binary table: header, name tables, row keys, float64 matrix."""
    frames, frame_idx = np.unique(dataset.frame_ids, return_inverse=True)
    groups, group_idx = np.unique(dataset.group_keys, return_inverse=True)
    parts = [
        _TABLE_MAGIC,
        struct.pack("<HBB", _TABLE_VERSION, 1 if dataset.has_targets else 0, 0),
        struct.pack("<QI", dataset.row_count, len(dataset.columns)),
        struct.pack("<d", dataset.retained_point_fraction),
        _pack_strings(dataset.columns),
        schema_hash(dataset.columns),
        _pack_strings(frames),
        _pack_strings(groups),
        frame_idx.astype("<u4").tobytes(),
        group_idx.astype("<u4").tobytes(),
        dataset.seg_ids.astype("<u4").tobytes(),
        dataset.class_ids.astype("<u2").tobytes(),
        dataset.size_points.astype("<u4").tobytes(),
        np.ascontiguousarray(dataset.matrix, dtype="<f8").tobytes(),
    ]
    if dataset.has_targets:
        parts.append(dataset.iou.astype("<f8").tobytes())
        parts.append(dataset.iou_adj.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_dataset_binary(path: str | Path) -> MetaDataset:
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:4]) != _TABLE_MAGIC:
        raise ValueError(f"{path}: not a dataset table")
    version, has_targets, _ = struct.unpack_from("<HBB", buf, 4)
    if version != _TABLE_VERSION:
        raise ValueError(f"{path}: unsupported table version {version}")
    rows, n_cols = struct.unpack_from("<QI", buf, 8)
    (retained,) = struct.unpack_from("<d", buf, 20)
    offset = 28
    columns, offset = _unpack_strings(buf, offset)
    stored_hash = bytes(buf[offset:offset + 16])
    offset += 16
    if stored_hash != schema_hash(columns):
        raise ValueError(f"{path}: schema hash mismatch")
    frames, offset = _unpack_strings(buf, offset)
    groups, offset = _unpack_strings(buf, offset)

    def take(dtype, count):
        nonlocal offset
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr

    frame_idx = take("<u4", rows)
    group_idx = take("<u4", rows)
    seg_ids = take("<u4", rows).astype(np.int32)
    class_ids = take("<u2", rows).astype(np.int32)
    size_points = take("<u4", rows).astype(np.int64)
    matrix = take("<f8", rows * n_cols).reshape(rows, n_cols).copy()
    iou = iou_adj = None
    if has_targets:
        iou = take("<f8", rows).copy()
        iou_adj = take("<f8", rows).copy()
    return MetaDataset(
        columns=tuple(columns),
        matrix=matrix,
        frame_ids=np.array(frames)[frame_idx],
        group_keys=np.array(groups)[group_idx],
        seg_ids=seg_ids,
        class_ids=class_ids,
        size_points=size_points,
        iou=iou,
        iou_adj=iou_adj,
        retained_point_fraction=float(retained),
    )
