"""Grid geometry, measurement masks, and multichannel image stacks.

Every other module builds on these types. All of them are immutable after
construction (arrays are marked read-only); derived values are produced by
constructing new objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

Cell = tuple[int, int]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridSpec:
    """Rectangular scan grid with physical pixel geometry in micrometers.

    Pixel (r, c) sits at physical position (r * pixel_height_um,
    c * pixel_width_um); all distance computations use these physical
    coordinates so that rectangular pixels are handled correctly.
    Single-row/column grids are allowed (degenerate but useful for
    closed-form interpolation checks); a grid must contain at least 2 cells.
    """

    rows: int
    cols: int
    pixel_width_um: float = 1.0
    pixel_height_um: float = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 2:
            raise ValueError(f"grid needs at least 2 cells, got {self.rows}x{self.cols}")
        if not (self.pixel_width_um > 0 and self.pixel_height_um > 0):
            raise ValueError("pixel dimensions must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def pixel_pitch_um(self) -> float:
        """Mean pixel pitch, used as the length scale for density features."""
        return 0.5 * (self.pixel_width_um + self.pixel_height_um)

    def contains(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.rows and 0 <= c < self.cols

    def physical_coords(self, cells: np.ndarray) -> np.ndarray:
        """Map an (n, 2) array of (row, col) cells to physical (y, x) in um."""
        cells = np.asarray(cells, dtype=np.float64)
        scale = np.array([self.pixel_height_um, self.pixel_width_um])
        return cells * scale

    def scaled(self, factor: float) -> "GridSpec":
        return GridSpec(self.rows, self.cols,
                        self.pixel_width_um * factor, self.pixel_height_um * factor)


def physical_distance(a: Cell, b: Cell, grid: GridSpec) -> float:
    """Euclidean distance between two cells in physical micrometers."""
    for cell in (a, b):
        if not grid.contains(cell):
            raise ValueError(f"cell {cell} outside {grid.rows}x{grid.cols} grid")
    dy = (a[0] - b[0]) * grid.pixel_height_um
    dx = (a[1] - b[1]) * grid.pixel_width_um
    return math.hypot(dy, dx)


@dataclass(frozen=True)
class ChannelStack:
    """A multichannel intensity image: d planes of rows x cols, labelled by m/z.

    Planes are stored as one (d, rows, cols) float64 array. Intensities must
    be finite and non-negative; channel labels must be strictly increasing.
    """

    grid: GridSpec
    planes: np.ndarray
    channel_labels: tuple[float, ...]

    def __post_init__(self):
        planes = np.ascontiguousarray(np.asarray(self.planes, dtype=np.float64))
        if planes.ndim == 2:
            planes = planes[None, :, :]
        if planes.ndim != 3 or planes.shape[1:] != self.grid.shape:
            raise ValueError(f"planes shape {planes.shape} does not match grid {self.grid.shape}")
        if planes.shape[0] < 1:
            raise ValueError("need at least one channel")
        if not np.all(np.isfinite(planes)) or np.any(planes < 0):
            raise ValueError("intensities must be finite and non-negative")
        labels = tuple(float(v) for v in self.channel_labels)
        if len(labels) != planes.shape[0]:
            raise ValueError("one label per channel required")
        if any(b <= a for a, b in zip(labels, labels[1:])):
            raise ValueError("channel labels must be strictly increasing")
        object.__setattr__(self, "planes", _readonly(planes))
        object.__setattr__(self, "channel_labels", labels)

    @property
    def n_channels(self) -> int:
        return self.planes.shape[0]


@dataclass(frozen=True)
class MeasurementMask:
    """Partition of the grid into measured (S) and unmeasured (T) cells."""

    grid: GridSpec
    measured: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.measured, dtype=bool))
        if m.shape != self.grid.shape:
            raise ValueError(f"mask shape {m.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "measured", _readonly(m))

    @property
    def n_measured(self) -> int:
        return int(self.measured.sum())

    @property
    def n_unmeasured(self) -> int:
        return self.grid.n_cells - self.n_measured

    @property
    def fraction_measured(self) -> float:
        return self.n_measured / self.grid.n_cells

    @cached_property
    def measured_cells(self) -> np.ndarray:
        """(k, 2) measured cells in row-major order."""
        return _readonly(np.argwhere(self.measured))

    @cached_property
    def unmeasured_cells(self) -> np.ndarray:
        """(q, 2) unmeasured cells in row-major order."""
        return _readonly(np.argwhere(~self.measured))

    def with_measured(self, cells: np.ndarray) -> "MeasurementMask":
        """New mask with the given (n, 2) cells additionally measured."""
        cells = np.atleast_2d(np.asarray(cells, dtype=int))
        m = self.measured.copy()
        m[cells[:, 0], cells[:, 1]] = True
        return MeasurementMask(self.grid, m)

    @staticmethod
    def empty(grid: GridSpec) -> "MeasurementMask":
        return MeasurementMask(grid, np.zeros(grid.shape, dtype=bool))

    @staticmethod
    def full(grid: GridSpec) -> "MeasurementMask":
        return MeasurementMask(grid, np.ones(grid.shape, dtype=bool))


@dataclass(frozen=True)
class MeasuredValues:
    """Intensities revealed at the measured cells, for every channel.

    values[z, i] is the intensity of channel z at mask.measured_cells[i];
    no values exist for unmeasured cells.
    """

    mask: MeasurementMask
    values: np.ndarray
    channel_labels: tuple[float, ...]

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        k = self.mask.n_measured
        if v.ndim != 2 or v.shape[1] != k:
            raise ValueError(f"values shape {v.shape} does not match {k} measured cells")
        if not np.all(np.isfinite(v)):
            raise ValueError("measured values must be finite")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "channel_labels", tuple(float(x) for x in self.channel_labels))

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    def as_maps(self) -> list[dict[Cell, float]]:
        """Per-channel {cell: value} mappings (sparse view, mostly for tests)."""
        cells = [tuple(c) for c in self.mask.measured_cells]
        return [dict(zip(cells, chan)) for chan in self.values]


def apply_mask(sample: ChannelStack, mask: MeasurementMask) -> MeasuredValues:
    """Reveal the sample's ground-truth intensities at the measured cells."""
    if mask.grid != sample.grid:
        raise ValueError("mask grid does not match sample grid")
    cells = mask.measured_cells
    values = sample.planes[:, cells[:, 0], cells[:, 1]]
    return MeasuredValues(mask, values, sample.channel_labels)
