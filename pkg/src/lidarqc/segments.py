"""Connected components of label grids and overlap scores against ground truth.

Components are maximal 8-connected same-class pixel sets; the horizontal
axis wraps around by default so segments crossing the panorama seam stay in
one piece. Pixel sets are flat row-major indices, always kept sorted, so
scan order and set arithmetic stay cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import connected_components as _graph_components

from lidarqc.gridops import OFFSETS_8, neighbor_values

# forward half of the 8-neighborhood; the graph is symmetrized anyway
_FORWARD = ((0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True, eq=False)
class Segment:
    """One connected component of a label grid.

    `pixels` always holds the full component; `interior`, `boundary` and
    `neighbors` are populated by `decompose`. `size_points` counts only
    pixels that carry a real projected point.
    """

    seg_id: int
    class_id: int
    pixels: np.ndarray                  # sorted flat indices, int64
    interior: np.ndarray | None = None
    boundary: np.ndarray | None = None
    neighbors: np.ndarray | None = None
    size_points: int | None = None

    @property
    def size(self) -> int:
        return int(len(self.pixels))

    @property
    def size_interior(self) -> int:
        if self.interior is None:
            raise ValueError("segment is not decomposed")
        return int(len(self.interior))

    @property
    def size_boundary(self) -> int:
        if self.boundary is None:
            raise ValueError("segment is not decomposed")
        return int(len(self.boundary))


@dataclass(frozen=True)
class GroundTruthMatch:
    """Overlap of one predicted segment with the ground truth.

    `iou` is the plain intersection over union against the merged
    same-class ground-truth components the segment touches. `iou_adj`
    removes from the union those ground-truth pixels that are already
    covered by other same-class predicted segments, so a prediction that
    splits one object into several pieces is not punished twice. Both
    ratios count only pixels carrying real points.
    """

    iou: float
    iou_adj: float
    gt_ids: tuple[int, ...]        # merged ground-truth component ids
    covering_ids: tuple[int, ...]  # same-class predicted components on them


def connected_components(labels: np.ndarray, wrap: bool = True) -> list[Segment]:
    """Segments of a label grid, ids assigned by first pixel in scan order."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label grid must be two-dimensional")
    h, w = labels.shape
    n_px = h * w
    ids = np.arange(n_px, dtype=np.int64).reshape(h, w)

    pairs_a = []
    pairs_b = []
    for dv, du in _FORWARD:
        nb_lab = neighbor_values(labels, dv, du, wrap=wrap, fill=-1)
        nb_ids = neighbor_values(ids, dv, du, wrap=wrap, fill=-1)
        connected = (nb_ids >= 0) & (nb_lab == labels)
        pairs_a.append(ids[connected])
        pairs_b.append(nb_ids[connected])
    a = np.concatenate(pairs_a) if pairs_a else np.empty(0, np.int64)
    b = np.concatenate(pairs_b) if pairs_b else np.empty(0, np.int64)
    graph = scipy.sparse.coo_matrix(
        (np.ones(len(a), dtype=np.int8), (a, b)), shape=(n_px, n_px))
    n_comp, comp = _graph_components(graph, directed=False)

    # relabel so ids follow the first pixel of each component in scan order
    first = np.full(n_comp, n_px, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(n_px, dtype=np.int64))
    remap = np.empty(n_comp, dtype=np.int64)
    remap[np.argsort(first, kind="stable")] = np.arange(n_comp)
    comp = remap[comp]

    grouped = np.argsort(comp, kind="stable")
    counts = np.bincount(comp, minlength=n_comp)
    splits = np.split(grouped, np.cumsum(counts)[:-1])
    return [
        Segment(seg_id=i, class_id=int(labels.flat[px[0]]), pixels=px.astype(np.int64))
        for i, px in enumerate(splits)
    ]


def _component_grid(segments: list[Segment], shape) -> np.ndarray:
    comp = np.full(shape[0] * shape[1], -1, dtype=np.int64)
    for seg in segments:
        comp[seg.pixels] = seg.seg_id
    return comp.reshape(shape)


def decompose(segments: list[Segment], delta: np.ndarray,
              wrap: bool = True) -> list[Segment]:
    """Split each segment into interior and boundary, and find its fringe.

    A pixel is interior when its complete 8-neighborhood lies in the same
    segment; pixels on the top or bottom image row never are, since part
    of their neighborhood is outside the grid. The fringe (`neighbors`)
    holds the pixels just outside the segment. `size_points` counts the
    segment's pixels with a real projected point according to `delta`.
    """
    delta = np.asarray(delta)
    h, w = delta.shape
    comp = _component_grid(segments, (h, w))

    interior_ok = np.ones((h, w), dtype=bool)
    for dv, du in OFFSETS_8:
        nb = neighbor_values(comp, dv, du, wrap=wrap, fill=-2)
        interior_ok &= nb == comp
    interior_ok[0, :] = False
    interior_ok[h - 1, :] = False
    interior_flat = interior_ok.ravel()

    # fringe pixels: for every adjacent pair in different components, the
    # pixel on this side is a fringe pixel of the neighbor's component
    owner = []
    fringe = []
    ids = np.arange(h * w, dtype=np.int64).reshape(h, w)
    for dv, du in OFFSETS_8:
        nb_comp = neighbor_values(comp, dv, du, wrap=wrap, fill=-2)
        nb_ids = neighbor_values(ids, dv, du, wrap=wrap, fill=-1)
        differs = (nb_ids >= 0) & (nb_comp != comp)
        owner.append(nb_comp[differs])
        fringe.append(ids[differs])
    owner = np.concatenate(owner) if owner else np.empty(0, np.int64)
    fringe = np.concatenate(fringe) if fringe else np.empty(0, np.int64)
    keys = np.unique(owner * (h * w) + fringe)
    key_owner = keys // (h * w)
    key_pixel = keys % (h * w)

    delta_flat = delta.ravel().astype(bool)
    out = []
    for seg in segments:
        inside = interior_flat[seg.pixels]
        lo, hi = np.searchsorted(key_owner, [seg.seg_id, seg.seg_id + 1])
        out.append(Segment(
            seg_id=seg.seg_id,
            class_id=seg.class_id,
            pixels=seg.pixels,
            interior=seg.pixels[inside],
            boundary=seg.pixels[~inside],
            neighbors=key_pixel[lo:hi],
            size_points=int(delta_flat[seg.pixels].sum()),
        ))
    return out


def match_all(pred_segments: list[Segment], gt_segments: list[Segment],
              delta: np.ndarray) -> list[GroundTruthMatch]:
    """Overlap scores of every predicted segment against the ground truth."""
    delta = np.asarray(delta)
    h, w = delta.shape
    n_px = h * w
    delta_flat = delta.ravel().astype(bool)
    gt_grid = _component_grid(gt_segments, (h, w)).ravel()
    pred_grid = _component_grid(pred_segments, (h, w)).ravel()
    gt_class = {seg.seg_id: seg.class_id for seg in gt_segments}
    gt_pixels = {seg.seg_id: seg.pixels for seg in gt_segments}
    max_id = max(seg.seg_id for seg in pred_segments) if pred_segments else 0
    pred_class = np.full(max_id + 1, -1, dtype=np.int64)
    for seg in pred_segments:
        pred_class[seg.seg_id] = seg.class_id

    in_seg = np.zeros(n_px, dtype=bool)
    results = []
    for seg in pred_segments:
        sp = int(delta_flat[seg.pixels].sum())
        touched = np.unique(gt_grid[seg.pixels])
        merged_ids = [int(g) for g in touched if g >= 0 and gt_class[int(g)] == seg.class_id]
        if not merged_ids:
            results.append(GroundTruthMatch(0.0, 0.0, (), ()))
            continue
        merged = np.concatenate([gt_pixels[g] for g in merged_ids])

        in_seg[seg.pixels] = True
        inter = int((delta_flat[merged] & in_seg[merged]).sum())
        union = sp + int(delta_flat[merged].sum()) - inter

        covering = np.unique(pred_grid[merged])
        covering = covering[covering >= 0]
        covering = covering[pred_class[covering] == seg.class_id]
        uncovered = merged[~np.isin(pred_grid[merged], covering)]
        denom_adj = sp + int(delta_flat[uncovered].sum())
        in_seg[seg.pixels] = False

        iou = inter / union if union > 0 else 0.0
        iou_adj = inter / denom_adj if denom_adj > 0 else 0.0
        results.append(GroundTruthMatch(
            iou=float(iou),
            iou_adj=float(iou_adj),
            gt_ids=tuple(merged_ids),
            covering_ids=tuple(int(q) for q in covering),
        ))
    return results


def match(seg: Segment, pred_segments: list[Segment], gt_segments: list[Segment],
          delta: np.ndarray) -> GroundTruthMatch:
    """Overlap scores for a single predicted segment.

    The sibling predicted segments are needed because the adjusted union
    discounts ground-truth pixels covered by other same-class predictions.
    """
    for i, other in enumerate(pred_segments):
        if other is seg or other.seg_id == seg.seg_id:
            return match_all(pred_segments, gt_segments, delta)[i]
    raise ValueError("segment is not part of the predicted segmentation")
