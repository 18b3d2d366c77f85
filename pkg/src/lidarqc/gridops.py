"""Neighborhood primitives shared by the panoramic-grid modules.

The horizontal axis of the image wraps around for a rotating sensor, the
vertical axis does not. Every helper takes a wrap flag so seam handling
stays consistent between gap filling, component labeling and boundary
analysis.
"""

from __future__ import annotations

import numpy as np

OFFSETS_8 = tuple(
    (dv, du) for dv in (-1, 0, 1) for du in (-1, 0, 1) if (dv, du) != (0, 0)
)


def neighbor_values(grid: np.ndarray, dv: int, du: int, wrap: bool = True,
                    fill=-1) -> np.ndarray:
    """Value of the (dv, du) neighbor at every pixel.

    out[v, u] = grid[v + dv, u + du], with the column index taken modulo
    the width when wrap is set; positions without a neighbor get `fill`.
    """
    h, w = grid.shape
    if wrap:
        shifted = np.roll(grid, -du, axis=1)
    else:
        shifted = np.full_like(grid, fill)
        if du == 0:
            shifted[:] = grid
        elif du > 0:
            shifted[:, :w - du] = grid[:, du:]
        else:
            shifted[:, -du:] = grid[:, :w + du]
    if dv == 0:
        return shifted
    out = np.full_like(grid, fill)
    if dv > 0:
        out[:h - dv] = shifted[dv:]
    else:
        out[-dv:] = shifted[:h + dv]
    return out


def nearest_donor_fill(mask: np.ndarray, wrap: bool = True) -> np.ndarray:
    """Flat index of the closest seeded pixel for every grid position.

    Distance is Chebyshev with an optionally cyclic horizontal axis. Ties
    resolve to the donor that comes first in row-major scan order, which a
    ring-by-ring expansion reproduces exactly: when a pixel is first
    reached at ring d, the minimal donor id among its already-settled
    neighbors is the scan-order-first donor at that distance.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if not mask.any():
        raise ValueError("cannot fill a grid with no projected pixels")
    sentinel = np.int64(h) * np.int64(w)
    ids = np.arange(h * w, dtype=np.int64).reshape(h, w)
    donor = np.where(mask, ids, sentinel)
    while True:
        empty = donor == sentinel
        if not empty.any():
            return donor
        best = np.full((h, w), sentinel, dtype=np.int64)
        for dv, du in OFFSETS_8:
            np.minimum(best, neighbor_values(donor, dv, du, wrap=wrap, fill=sentinel),
                       out=best)
        newly = empty & (best < sentinel)
        if not newly.any():
            # only possible on a degenerate disconnected layout
            raise ValueError("grid has pixels unreachable from any projected pixel")
        donor[newly] = best[newly]
