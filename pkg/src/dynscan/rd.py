"""Reduction-in-distortion maps.

The exact map scores each unmeasured cell by how much the total absolute
reconstruction error would drop if that one cell were measured; it is only
tractable on small grids and serves as the reference. The approximate map
replaces the re-reconstruction with an unnormalized Gaussian-weighted sum of
the current error around each candidate, with kernel strength sigma equal to
the candidate's distance to the nearest measured cell divided by c.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ChannelStack, MeasuredValues, MeasurementMask, Cell
from .neighbors import min_distance_um
from .recon import DEFAULT_NEIGHBORS, Reconstruction, reconstruct


@dataclass(frozen=True)
class StaticWindow:
    """Fixed odd side length, in cells."""

    side: int

    def __post_init__(self):
        if self.side < 3 or self.side % 2 == 0:
            raise ValueError("static window side must be odd and >= 3")

    def describe(self) -> str:
        return f"static:{self.side}"


@dataclass(frozen=True)
class DynamicWindow:
    """Per-cell window with radius multiple * sigma (rounded up per axis)."""

    multiple: float = 3.0

    def __post_init__(self):
        if self.multiple < 1:
            raise ValueError("dynamic window multiple must be >= 1")

    def describe(self) -> str:
        return f"dyn:{self.multiple:g}"


Window = StaticWindow | DynamicWindow


def parse_window(text: str) -> Window:
    """Parse 'static:N' or 'dyn:N' window descriptors."""
    kind, _, arg = text.partition(":")
    if kind == "static":
        return StaticWindow(int(arg))
    if kind in ("dyn", "dynamic"):
        return DynamicWindow(float(arg))
    raise ValueError(f"unknown window spec {text!r}")


@dataclass(frozen=True)
class RdParams:
    """Regularization constant, window mode, and channel selection."""

    c: float
    window: Window = DynamicWindow(3.0)
    channels: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.channels is not None:
            object.__setattr__(self, "channels", tuple(int(z) for z in self.channels))

    def to_json(self) -> dict:
        return {"c": self.c, "window": self.window.describe(),
                "channels": list(self.channels) if self.channels is not None else None}

    @staticmethod
    def from_json(doc: dict) -> "RdParams":
        channels = doc.get("channels")
        return RdParams(float(doc["c"]), parse_window(doc["window"]),
                        tuple(channels) if channels is not None else None)


@dataclass(frozen=True)
class RdMap:
    """Per-channel reduction-in-distortion planes and their average.

    Planes are zero at measured cells. channels records which sample
    channels the planes correspond to.
    """

    planes: np.ndarray
    averaged: np.ndarray
    channels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(z) for z in self.channels))


def average_rd(planes: np.ndarray) -> np.ndarray:
    """Elementwise mean over channel planes."""
    planes = np.asarray(planes, dtype=np.float64)
    if planes.ndim != 3 or planes.shape[0] < 1:
        raise ValueError("expected a (d, rows, cols) stack of RD planes")
    return planes.mean(axis=0)


def _select_channels(sample: ChannelStack, channels: tuple[int, ...] | None) -> tuple[int, ...]:
    if channels is None:
        return tuple(range(sample.n_channels))
    bad = [z for z in channels if not 0 <= z < sample.n_channels]
    if bad:
        raise ValueError(f"channel indices {bad} out of range for {sample.n_channels} channels")
    return channels


def sigma(t: Cell, mask: MeasurementMask, c: float) -> float:
    """Kernel strength at cell t: distance to the nearest measured cell / c."""
    if mask.n_measured == 0:
        raise ValueError("sigma needs at least one measured cell")
    if not c > 0:
        raise ValueError("c must be positive")
    if not mask.grid.contains(t):
        raise ValueError(f"cell {t} outside grid")
    if mask.measured[t]:
        return 0.0
    return float(min_distance_um(mask, np.asarray([t]))[0]) / c


def gaussian_window_sum(error: np.ndarray, cells: np.ndarray, sigmas: np.ndarray,
                        window: Window, grid) -> np.ndarray:
    """Windowed unnormalized-Gaussian sum of an error plane around each cell.

    For cell t with strength s: sum over window cells u of
    error[u] * exp(-dist(u, t)^2 / (2 s^2)), distances physical, the window
    clipped at the grid boundary. s == 0 degenerates to error[t] itself.
    """
    cells = np.asarray(cells, dtype=np.intp)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    out = np.empty(len(cells), dtype=np.float64)
    ph, pw = grid.pixel_height_um, grid.pixel_width_um

    if isinstance(window, StaticWindow):
        half = window.side // 2
        radii = np.full((len(cells), 2), half, dtype=np.intp)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            radii = np.ceil(np.stack([window.multiple * sigmas / ph,
                                      window.multiple * sigmas / pw], axis=1)).astype(np.intp)

    zero = sigmas == 0.0
    if zero.any():
        out[zero] = error[cells[zero, 0], cells[zero, 1]]
    live = ~zero
    if not live.any():
        return out

    rmax = int(radii[live].max())
    padded = np.zeros((grid.rows + 2 * rmax, grid.cols + 2 * rmax))
    padded[rmax:rmax + grid.rows, rmax:rmax + grid.cols] = error
    flat = padded.ravel()
    stride = padded.shape[1]
    base = (cells[:, 0] + rmax) * stride + (cells[:, 1] + rmax)

    live_idx = np.flatnonzero(live)
    keys = radii[live_idx, 0] * (rmax + 1) + radii[live_idx, 1]
    for key in np.unique(keys):
        sel = live_idx[keys == key]
        ry, rx = int(key) // (rmax + 1), int(key) % (rmax + 1)
        dy, dx = np.mgrid[-ry:ry + 1, -rx:rx + 1]
        off_d2 = ((dy * ph) ** 2 + (dx * pw) ** 2).ravel()
        off_flat = (dy * stride + dx).ravel()
        s2 = 2.0 * sigmas[sel, None] ** 2
        kern = np.exp(-off_d2[None, :] / s2)
        vals = flat[base[sel, None] + off_flat[None, :]]
        out[sel] = (kern * vals).sum(axis=1)
    return out


def approx_rd(sample: ChannelStack, measured: MeasuredValues, params: RdParams,
              recon: Reconstruction | None = None,
              neighbors: int = DEFAULT_NEIGHBORS,
              min_dist_um: np.ndarray | None = None) -> RdMap:
    """Gaussian-filter approximation of the reduction-in-distortion map.

    min_dist_um optionally carries precomputed nearest-measured distances
    for the unmeasured cells (row-major order).
    """
    mask = measured.mask
    if mask.n_measured == 0:
        raise ValueError("approximate RD needs at least one measured cell")
    channels = _select_channels(sample, params.channels)
    if recon is None:
        recon = reconstruct(measured, neighbors=neighbors)
    t_cells = mask.unmeasured_cells
    planes = np.zeros((len(channels), *sample.grid.shape))
    if len(t_cells) > 0:
        if min_dist_um is None:
            min_dist_um = min_distance_um(mask)
        sigmas = min_dist_um / params.c
        for i, z in enumerate(channels):
            err = np.abs(sample.planes[z] - recon.stack.planes[z])
            planes[i, t_cells[:, 0], t_cells[:, 1]] = gaussian_window_sum(
                err, t_cells, sigmas, params.window, sample.grid)
    return RdMap(planes, average_rd(planes), channels)


def exact_rd(sample: ChannelStack, measured: MeasuredValues,
             channels: tuple[int, ...] | None = None,
             neighbors: int = DEFAULT_NEIGHBORS) -> RdMap:
    """Brute-force reduction in distortion: for each unmeasured cell, the drop
    in total absolute reconstruction error from revealing that one cell.

    Performs a fresh reconstruction per candidate; intended for small grids
    and for validating the approximation.
    """
    mask = measured.mask
    if mask.n_measured == 0:
        raise ValueError("exact RD needs at least one measured cell")
    channels = _select_channels(sample, channels)
    t_cells = mask.unmeasured_cells
    planes = np.zeros((len(channels), *sample.grid.shape))
    if len(t_cells) == 0:
        return RdMap(planes, average_rd(planes), channels)

    truth = sample.planes[list(channels)]
    base = reconstruct(measured, neighbors=neighbors)
    base_err = np.abs(truth - base.stack.planes[list(channels)]).sum(axis=(1, 2))

    for t in t_cells:
        mask2 = mask.with_measured(t)
        cells2 = mask2.measured_cells
        values2 = sample.planes[:, cells2[:, 0], cells2[:, 1]]
        rec2 = reconstruct(MeasuredValues(mask2, values2, sample.channel_labels),
                           neighbors=neighbors)
        err2 = np.abs(truth - rec2.stack.planes[list(channels)]).sum(axis=(1, 2))
        planes[:, t[0], t[1]] = base_err - err2
    return RdMap(planes, average_rd(planes), channels)


def write_rd_dir(rd: RdMap, path: str | Path, params: RdParams | None,
                 labels: tuple[float, ...] | None = None) -> Path:
    """Serialize an RD map: one .f32 plane per channel plus a params sidecar."""
    from .ingest import write_plane_f32

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    rows, cols = rd.averaged.shape
    doc = {
        "rows": rows, "cols": cols,
        "channels": list(rd.channels),
        "labels": list(labels) if labels is not None else None,
        "params": params.to_json() if params is not None else None,
    }
    (path / "rd.json").write_text(json.dumps(doc, indent=2))
    for z, plane in zip(rd.channels, rd.planes):
        write_plane_f32(plane, path / f"rd_{z:04d}.f32")
    write_plane_f32(rd.averaged, path / "rd_avg.f32")
    return path


def read_rd_dir(path: str | Path) -> tuple[RdMap, RdParams | None]:
    from .ingest import read_plane_f32

    path = Path(path)
    doc = json.loads((path / "rd.json").read_text())
    rows, cols = int(doc["rows"]), int(doc["cols"])
    channels = tuple(doc["channels"])
    planes = np.stack([read_plane_f32(path / f"rd_{z:04d}.f32", rows, cols)
                       for z in channels])
    params = RdParams.from_json(doc["params"]) if doc.get("params") else None
    # rd_avg.f32 is written for external consumers; recompute here so the
    # averaged plane stays the exact mean of the (quantized) channel planes
    return RdMap(planes, average_rd(planes), channels), params
