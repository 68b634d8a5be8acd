"""Inverse-distance-weighted reconstruction of partially measured samples.

Unmeasured values are interpolated from the 10 nearest measured cells
(physical distance, power-2 weights); measured cells are copied verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ChannelStack, MeasuredValues, MeasurementMask
from .neighbors import NeighborInfo, nearest_measured

DEFAULT_NEIGHBORS = 10


@dataclass(frozen=True)
class Reconstruction:
    """Full estimate of the sample: measured values plus interpolated rest."""

    stack: ChannelStack
    source_mask: MeasurementMask


def idw_weights(d2: np.ndarray, power: float = 2.0) -> np.ndarray:
    """Inverse-distance weights from squared distances; power 2 by default."""
    if power == 2.0:
        return 1.0 / d2
    return d2 ** (-0.5 * power)


def reconstruct(measured: MeasuredValues, neighbors: int = DEFAULT_NEIGHBORS,
                nn: NeighborInfo | None = None,
                power: float = 2.0) -> Reconstruction:
    """IDW-interpolate every unmeasured cell of every channel.

    nn may carry a precomputed neighbor query for the same mask (the
    acquisition loop reuses one query across reconstruction and feature
    extraction); it must have at least min(neighbors, k) columns. power is
    the inverse-distance exponent (2 is the convention used throughout).
    """
    mask = measured.mask
    if mask.n_measured == 0:
        raise ValueError("cannot reconstruct with no measured cells")
    grid = mask.grid
    d = measured.n_channels
    out = np.zeros((d, grid.rows, grid.cols), dtype=np.float64)
    s_cells = mask.measured_cells
    out[:, s_cells[:, 0], s_cells[:, 1]] = measured.values

    t_cells = mask.unmeasured_cells
    if len(t_cells) > 0:
        k_eff = min(neighbors, mask.n_measured)
        if nn is None:
            nn = nearest_measured(mask, neighbors=neighbors)
        if nn.k_eff < k_eff:
            raise ValueError("precomputed neighbor query has too few neighbors")
        w = idw_weights(nn.d2[:, :k_eff], power)
        den = w.sum(axis=1)
        # (d, q, k_eff): neighbor values per channel, ascending-distance order
        vals = measured.values[:, nn.indices[:, :k_eff]]
        est = (vals * w).sum(axis=2) / den
        out[:, t_cells[:, 0], t_cells[:, 1]] = est

    stack = ChannelStack(grid, out, measured.channel_labels)
    return Reconstruction(stack, mask)
