"""Exact nearest-measured-neighbor queries on the physical grid.

Neighbor lists are exact k-NN sets ordered by ascending distance, ties broken
by row-major cell order, which keeps every downstream weighted accumulation
deterministic.

Distances are computed in scale-free units first (cell offsets weighted by
the pixel aspect ratio, which is invariant under uniform grid scaling and
yields exact integers on square-pixel grids) and converted to squared
physical micrometers afterwards. This makes neighbor sets and tie-breaks
identical across uniformly rescaled grids, not just approximately equal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MeasurementMask

# keep each brute-force distance block around this many entries
_CHUNK_BUDGET = 4_000_000
# extra candidates kept past k to absorb distance ties at the cutoff
_TIE_SLACK = 24


@dataclass(frozen=True)
class NeighborInfo:
    """k nearest measured cells per query cell.

    indices[i, j] indexes into the row-major measured-cell list; d2 holds the
    matching squared physical distances (um^2), ascending per row.
    radius_counts is the number of measured cells within the requested count
    radius, or None if no radius was given.
    """

    indices: np.ndarray
    d2: np.ndarray
    k_eff: int
    radius_counts: np.ndarray | None = None


def nearest_measured(mask: MeasurementMask, neighbors: int = 10,
                     query_cells: np.ndarray | None = None,
                     count_radius_um: float | None = None) -> NeighborInfo:
    """Exact min(neighbors, k)-NN from query cells to the measured set.

    query_cells defaults to the unmeasured cells in row-major order.
    """
    k = mask.n_measured
    if k == 0:
        raise ValueError("no measured cells to search")
    grid = mask.grid
    aspect = grid.pixel_height_um / grid.pixel_width_um
    unit2 = grid.pixel_width_um * grid.pixel_width_um

    src = mask.measured_cells
    src_y = src[:, 0] * aspect
    src_x = src[:, 1].astype(np.float64)
    if query_cells is None:
        query_cells = mask.unmeasured_cells
    qry_y = query_cells[:, 0] * aspect
    qry_x = query_cells[:, 1].astype(np.float64)
    q = len(query_cells)
    k_eff = min(neighbors, k)

    out_idx = np.empty((q, k_eff), dtype=np.intp)
    out_d2 = np.empty((q, k_eff), dtype=np.float64)
    counts = np.empty(q, dtype=np.intp) if count_radius_um is not None else None
    r2 = (count_radius_um / grid.pixel_width_um) ** 2 if count_radius_um is not None else None

    chunk = max(1, _CHUNK_BUDGET // k)
    for lo in range(0, q, chunk):
        hi = min(q, lo + chunk)
        d2 = (qry_y[lo:hi, None] - src_y) ** 2 + (qry_x[lo:hi, None] - src_x) ** 2
        if counts is not None:
            counts[lo:hi] = (d2 <= r2).sum(axis=1)
        idx, dist = _smallest_k(d2, k_eff)
        out_idx[lo:hi] = idx
        out_d2[lo:hi] = dist
    return NeighborInfo(out_idx, out_d2 * unit2, k_eff, counts)


def _smallest_k(d2: np.ndarray, k_eff: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row k smallest entries of d2, ascending, row-major tie order.

    Column j of d2 corresponds to the j-th measured cell in row-major order,
    so a stable sort on distance yields the required tie-breaking for free.
    """
    n, k = d2.shape
    if k <= k_eff + _TIE_SLACK:
        order = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
        return order, np.take_along_axis(d2, order, axis=1)

    kk = k_eff + _TIE_SLACK
    cand = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
    # restore row-major candidate order so the stable sort breaks ties right
    cand = np.take_along_axis(cand, np.argsort(cand, axis=1), axis=1)
    cd2 = np.take_along_axis(d2, cand, axis=1)
    order = np.argsort(cd2, axis=1, kind="stable")
    cand = np.take_along_axis(cand, order, axis=1)
    cd2 = np.take_along_axis(cd2, order, axis=1)

    # a tie group crossing the slack boundary may extend past the candidates;
    # redo those rows with a full stable sort (rare on real masks)
    bad = cd2[:, k_eff - 1] >= cd2[:, kk - 1]
    if bad.any():
        full = np.argsort(d2[bad], axis=1, kind="stable")[:, :k_eff]
        cand[bad, :k_eff] = full
        cd2[bad, :k_eff] = np.take_along_axis(d2[bad], full, axis=1)
    return cand[:, :k_eff], cd2[:, :k_eff]


def min_distance_um(mask: MeasurementMask,
                    query_cells: np.ndarray | None = None) -> np.ndarray:
    """Physical distance from each query cell to its closest measured cell."""
    info = nearest_measured(mask, neighbors=1, query_cells=query_cells)
    return np.sqrt(info.d2[:, 0])
