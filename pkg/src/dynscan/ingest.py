"""Channel-image ingest: m/z window integration, row realignment to the
scan-rate grid, synthetic phantom generation, and sample directory I/O.

A sample directory holds `meta.json` plus one `channel_<label>.f32` file per
channel (raw little-endian float32, row-major, rows*cols values). Raw vendor
mass-spec files are out of scope; inputs are already channel-resolved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ChannelStack, GridSpec

DEFAULT_PPM = 20.0


@dataclass(frozen=True)
class MzWindow:
    """Mass window around a center m/z with half-width in parts-per-million."""

    center: float
    ppm: float = DEFAULT_PPM

    def __post_init__(self):
        lo, hi = self.bounds
        if not (lo < hi):
            raise ValueError(f"window around {self.center} at {self.ppm} ppm is empty")

    @property
    def bounds(self) -> tuple[float, float]:
        delta = self.ppm * 1e-6
        return self.center * (1.0 - delta), self.center * (1.0 + delta)


@dataclass(frozen=True)
class SampleMeta:
    """Physical acquisition metadata for one sample."""

    name: str
    width_mm: float
    height_mm: float
    scan_rate_um_per_s: float
    acq_rate_spectra_per_s: float = 1.0

    def __post_init__(self):
        for field in ("width_mm", "height_mm", "scan_rate_um_per_s", "acq_rate_spectra_per_s"):
            if not getattr(self, field) > 0:
                raise ValueError(f"{field} must be positive")


@dataclass(frozen=True)
class RawRow:
    """One scanned row: acquisition times and the per-spectrum intensities.

    intensities has shape (n_spectra, n_channels); timestamps must be
    strictly increasing (scan and acquisition rates fluctuate, so spacing
    is not assumed uniform).
    """

    timestamps: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        v = np.atleast_2d(np.asarray(self.intensities, dtype=np.float64))
        if t.ndim != 1 or len(t) == 0:
            raise ValueError("timestamps must be a non-empty 1-D sequence")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if v.shape[0] != len(t):
            raise ValueError("one intensity vector per timestamp required")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "intensities", v)


def integrate_window(spectrum: Sequence[tuple[float, float]], window: MzWindow) -> float:
    """Sum the intensities whose m/z falls inside the closed window range."""
    if len(spectrum) == 0:
        return 0.0
    arr = np.asarray(spectrum, dtype=np.float64)
    mz, inten = arr[:, 0], arr[:, 1]
    if not np.all(np.isfinite(mz)):
        raise ValueError("spectrum m/z values must be finite")
    lo, hi = window.bounds
    return float(inten[(mz >= lo) & (mz <= hi)].sum())


def target_columns(meta: SampleMeta) -> int:
    """Number of horizontal grid positions implied by the scan geometry:
    FOV width / scan rate * acquisition rate, rounded, at least 2."""
    cols = round(meta.width_mm * 1000.0 / meta.scan_rate_um_per_s
                 * meta.acq_rate_spectra_per_s)
    return max(2, int(cols))


def realign_row(row: RawRow, n_cols: int) -> np.ndarray:
    """Resample one row onto n_cols evenly spaced times.

    Linear interpolation per channel over [first, last] timestamp; endpoints
    map exactly. A single-spectrum row degenerates to a constant vector.
    Returns shape (n_channels, n_cols).
    """
    if n_cols < 2:
        raise ValueError("n_cols must be at least 2")
    t = row.timestamps
    if len(t) == 1:
        return np.repeat(row.intensities.T, n_cols, axis=1)
    new_t = np.linspace(t[0], t[-1], n_cols)
    return np.stack([np.interp(new_t, t, chan) for chan in row.intensities.T])


def generate_phantom(seed: int, grid: GridSpec, channels: int,
                     blobs_per_channel: tuple[int, int] = (3, 8)) -> ChannelStack:
    """Deterministic synthetic sample: per channel, a sum of anisotropic
    Gaussian blobs confined to a common elliptical "tissue" support, plus
    channel-specific blobs and 1% additive noise, clipped to [0, 1].

    The first shared blob is a broad base mound so the tissue interior varies
    smoothly (like stained sections, surrounding structure rides on a bright
    baseline); the remaining blobs add channel structure on top.
    blobs_per_channel bounds the total blob count per channel (inclusive);
    tests use (1, 1) for single-mound fields.
    """
    if channels < 1:
        raise ValueError("need at least one channel")
    lo_b, hi_b = blobs_per_channel
    if not (1 <= lo_b <= hi_b):
        raise ValueError("invalid blob count range")
    rng = np.random.default_rng(seed)
    n, m = grid.rows, grid.cols
    rr, cc = np.mgrid[0:n, 0:m].astype(np.float64)

    # soft elliptical support shared by all channels, covering most of the FOV
    cy = n * rng.uniform(0.4, 0.6)
    cx = m * rng.uniform(0.4, 0.6)
    ay = n * rng.uniform(0.7, 1.0)
    ax = m * rng.uniform(0.7, 1.0)
    theta = rng.uniform(0.0, np.pi)
    u = (rr - cy) * np.cos(theta) + (cc - cx) * np.sin(theta)
    v = -(rr - cy) * np.sin(theta) + (cc - cx) * np.cos(theta)
    rho = (u / ay) ** 2 + (v / ax) ** 2
    support = 1.0 / (1.0 + np.exp(3.0 * (rho - 1.0)))

    def blob(center_spread: float, sig_lo: float, sig_hi: float) -> np.ndarray:
        by = cy + rng.uniform(-center_spread, center_spread) * ay
        bx = cx + rng.uniform(-center_spread, center_spread) * ax
        sy = max(1.5, n * rng.uniform(sig_lo, sig_hi))
        sx = max(1.5, m * rng.uniform(sig_lo, sig_hi))
        rot = rng.uniform(0.0, np.pi)
        gu = (rr - by) * np.cos(rot) + (cc - bx) * np.sin(rot)
        gv = -(rr - by) * np.sin(rot) + (cc - bx) * np.cos(rot)
        return np.exp(-0.5 * ((gu / sy) ** 2 + (gv / sx) ** 2))

    # shared blobs reuse position/shape across channels (amplitudes vary);
    # when the range allows, each channel also gets blobs of its own
    n_common = int(rng.integers(lo_b, hi_b)) if hi_b > lo_b else lo_b
    common = [blob(0.15, 0.5, 0.8)]  # base mound
    common += [blob(0.5, 0.35, 0.6) for _ in range(n_common - 1)]

    planes = np.empty((channels, n, m))
    for z in range(channels):
        max_specific = hi_b - n_common
        n_specific = int(rng.integers(1, max_specific + 1)) if max_specific > 0 else 0
        parts = [rng.uniform(0.6, 1.0) * common[0]]
        parts += [rng.uniform(0.2, 0.6) * b for b in common[1:]]
        parts += [rng.uniform(0.2, 0.6) * blob(0.5, 0.35, 0.6)
                  for _ in range(n_specific)]
        img = sum(parts) * support
        peak = img.max()
        if peak > 0:
            img = img * (0.95 / peak)
        img = img + rng.normal(0.0, 0.01, size=img.shape)
        planes[z] = np.clip(img, 0.0, 1.0)

    labels = np.sort(rng.uniform(200.0, 900.0, size=channels))
    while np.any(np.diff(labels) <= 0):  # measure-zero, but keep it airtight
        labels = np.sort(rng.uniform(200.0, 900.0, size=channels))
    stack = ChannelStack(grid, planes, tuple(np.round(labels, 4)))
    object.__setattr__(stack, "_support", support > 0.5)
    return stack


def phantom_support(stack: ChannelStack) -> np.ndarray | None:
    """Boolean tissue-support region of a generated phantom, if present."""
    return getattr(stack, "_support", None)


# ---------------------------------------------------------------------------
# sample directory format

def _label_token(label: float) -> str:
    return f"{label:.4f}"


def write_sample_dir(stack: ChannelStack, path: str | Path, name: str,
                     meta: SampleMeta | None = None,
                     ppm: float = DEFAULT_PPM) -> Path:
    """Write a sample directory (`meta.json` + one .f32 plane per channel)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    grid = stack.grid
    if meta is None:
        meta = SampleMeta(
            name=name,
            width_mm=grid.cols * grid.pixel_width_um / 1000.0,
            height_mm=grid.rows * grid.pixel_height_um / 1000.0,
            scan_rate_um_per_s=grid.pixel_width_um,
        )
    doc = {
        "name": meta.name,
        "width_mm": meta.width_mm,
        "height_mm": meta.height_mm,
        "scan_rate_um_per_s": meta.scan_rate_um_per_s,
        "acq_rate_spectra_per_s": meta.acq_rate_spectra_per_s,
        "rows": grid.rows,
        "cols": grid.cols,
        "channels": [{"label": lab, "ppm": ppm} for lab in stack.channel_labels],
    }
    (path / "meta.json").write_text(json.dumps(doc, indent=2))
    for lab, plane in zip(stack.channel_labels, stack.planes):
        write_plane_f32(plane, path / f"channel_{_label_token(lab)}.f32")
    return path


def load_sample_dir(path: str | Path) -> tuple[ChannelStack, SampleMeta]:
    """Load a sample directory written by write_sample_dir.

    An optional `defective_rows` list in meta.json names row indices dropped
    before the grid is built (the stored planes still contain them).
    """
    path = Path(path)
    doc = json.loads((path / "meta.json").read_text())
    rows, cols = int(doc["rows"]), int(doc["cols"])
    meta = SampleMeta(doc["name"], float(doc["width_mm"]), float(doc["height_mm"]),
                      float(doc["scan_rate_um_per_s"]),
                      float(doc.get("acq_rate_spectra_per_s", 1.0)))
    defective = sorted(set(int(r) for r in doc.get("defective_rows", [])))
    keep = [r for r in range(rows) if r not in defective]
    eff_rows = len(keep)
    grid = GridSpec(
        rows=eff_rows, cols=cols,
        pixel_width_um=meta.width_mm * 1000.0 / cols,
        pixel_height_um=meta.height_mm * 1000.0 / rows,
    )
    labels, planes = [], []
    for chan in doc["channels"]:
        lab = float(chan["label"])
        plane = read_plane_f32(path / f"channel_{_label_token(lab)}.f32", rows, cols)
        labels.append(lab)
        planes.append(plane[keep])
    return ChannelStack(grid, np.stack(planes), tuple(labels)), meta


def write_plane_f32(plane: np.ndarray, path: str | Path) -> None:
    """Raw little-endian float32, row-major."""
    np.asarray(plane, dtype="<f4").tofile(path)


def read_plane_f32(path: str | Path, rows: int, cols: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} float32 values, found {data.size}")
    return data.reshape(rows, cols).astype(np.float64)
