"""Simulated acquisition: initial masks, pointwise/linewise selection, the
reconstruct -> ERD -> select loop, and run-directory output.

All tie-breaks are row-major-first so that runs are exactly reproducible.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ChannelStack, GridSpec, MeasuredValues, MeasurementMask, apply_mask
from .models import ErdMap, OracleModel, RandomModel, density_radius_um, erd_for
from .neighbors import nearest_measured
from .rd import approx_rd, exact_rd
from .recon import DEFAULT_NEIGHBORS, Reconstruction, reconstruct


@dataclass(frozen=True)
class PointwiseMode:
    """Select the top cells by averaged ERD; one cell per step by default,
    or a percentage of the FOV for group acquisition."""

    group_fraction: float | None = None

    def __post_init__(self):
        gf = self.group_fraction
        if gf is not None and not (0 < gf <= 100):
            raise ValueError("group_fraction must be in (0, 100]")


@dataclass(frozen=True)
class LinewiseMode:
    """Select one unmeasured row, then the top line_fraction percent of its
    positions by averaged ERD."""

    line_fraction: float = 30.0

    def __post_init__(self):
        if not (0 < self.line_fraction <= 100):
            raise ValueError("line_fraction must be in (0, 100]")


Mode = PointwiseMode | LinewiseMode


class AcquisitionError(RuntimeError):
    """Raised when a run aborts mid-scan; carries the partial trace."""

    def __init__(self, message: str, run: "AcquisitionRun"):
        super().__init__(message)
        self.run = run


@dataclass(frozen=True)
class AcquisitionConfig:
    """Scan mode, initial-mask rule, and stopping rules.

    Pointwise runs start from a random initial_fraction percent of the FOV
    and stop once stop_fov_percent is crossed. Linewise runs start from three
    partially measured rows (at 25/50/75% of the height) and stop when every
    row has been visited. Both stop early if the averaged ERD sums to zero.
    """

    mode: Mode = PointwiseMode()
    stop_fov_percent: float = 30.0
    initial_fraction: float = 1.0
    neighbors: int = DEFAULT_NEIGHBORS
    per_step_metrics: bool | None = None  # None: only when recon is free

    def __post_init__(self):
        if not (0 < self.stop_fov_percent <= 100):
            raise ValueError("stop_fov_percent must be in (0, 100]")
        if not (0 < self.initial_fraction <= 100):
            raise ValueError("initial_fraction must be in (0, 100]")

    def to_json(self) -> dict:
        mode = self.mode
        if isinstance(mode, PointwiseMode):
            mode_doc = {"kind": "pointwise", "group_fraction": mode.group_fraction}
        else:
            mode_doc = {"kind": "linewise", "line_fraction": mode.line_fraction}
        return {"mode": mode_doc, "stop_fov_percent": self.stop_fov_percent,
                "initial_fraction": self.initial_fraction, "neighbors": self.neighbors}


@dataclass(frozen=True)
class RowSets:
    """Rows with at least one measured cell (visited) vs. fully unmeasured."""

    visited: np.ndarray
    empty: np.ndarray

    @staticmethod
    def from_mask(mask: MeasurementMask) -> "RowSets":
        has = mask.measured.any(axis=1)
        return RowSets(np.flatnonzero(has), np.flatnonzero(~has))


@dataclass(frozen=True)
class StepTrace:
    """State after one reveal: step 0 is the initial mask."""

    step: int
    selected: np.ndarray
    fov_percent: float
    psnr_per_channel: np.ndarray | None
    erd_time_s: float
    erd_sum: float


@dataclass(frozen=True)
class Milestone:
    """Snapshot at the first step crossing a whole-percent FOV milestone."""

    percent: int
    step: int
    psnr_per_channel: np.ndarray
    mask: np.ndarray
    erd_averaged: np.ndarray
    recon_planes: np.ndarray


@dataclass
class AcquisitionRun:
    sample_name: str
    config: AcquisitionConfig
    model_desc: str
    seed: int
    channel_labels: tuple[float, ...]
    steps: list[StepTrace] = field(default_factory=list)
    milestones: list[Milestone] = field(default_factory=list)
    final_mask: MeasurementMask | None = None
    stop_reason: str = ""

    @property
    def final_fraction(self) -> float:
        return self.steps[-1].fov_percent / 100.0 if self.steps else 0.0


def _evenly_spaced(count: int, m: int) -> np.ndarray:
    """count integer positions evenly spread over [0, m-1] (integer rounding)."""
    if count >= m:
        return np.arange(m)
    if count == 1:
        return np.array([(m - 1) // 2])
    i = np.arange(count, dtype=np.int64)
    return (2 * i * (m - 1) + (count - 1)) // (2 * (count - 1))


def initial_mask(cfg: AcquisitionConfig, grid: GridSpec, seed: int) -> MeasurementMask:
    """Predetermined starting measurements for a run (seeded)."""
    if isinstance(cfg.mode, PointwiseMode):
        count = min(grid.n_cells, math.ceil(cfg.initial_fraction / 100.0 * grid.n_cells))
        rng = np.random.default_rng(seed)
        flat = rng.choice(grid.n_cells, size=count, replace=False)
        m = np.zeros(grid.n_cells, dtype=bool)
        m[flat] = True
        return MeasurementMask(grid, m.reshape(grid.shape))

    rows = [int(grid.rows * f) for f in (0.25, 0.50, 0.75)]
    unique_rows = sorted(set(rows))
    if len(unique_rows) < len(rows):
        warnings.warn(f"initial linewise rows collide on a {grid.rows}-row grid; "
                      f"using {unique_rows}")
    count = min(grid.cols, math.ceil(cfg.mode.line_fraction / 100.0 * grid.cols))
    cols = _evenly_spaced(count, grid.cols)
    m = np.zeros(grid.shape, dtype=bool)
    for r in unique_rows:
        m[r, cols] = True
    return MeasurementMask(grid, m)


def select_pointwise(erd: ErdMap, mask: MeasurementMask,
                     group_fraction: float | None = None) -> np.ndarray:
    """Top unmeasured cells by averaged ERD; row-major tie-break.

    Returns max(1, ceil(group_fraction% of the FOV)) cells, or a single cell
    when group_fraction is None.
    """
    t_cells = mask.unmeasured_cells
    if len(t_cells) == 0:
        raise ValueError("no unmeasured cells to select from")
    if group_fraction is None:
        count = 1
    else:
        count = max(1, math.ceil(group_fraction / 100.0 * mask.grid.n_cells))
    count = min(count, len(t_cells))
    vals = erd.averaged[t_cells[:, 0], t_cells[:, 1]]
    # stable sort on negated values keeps row-major order among ties
    order = np.argsort(-vals, kind="stable")[:count]
    return t_cells[order]


def select_linewise(erd: ErdMap, rows: RowSets, mask: MeasurementMask,
                    line_fraction: float = 30.0) -> np.ndarray | None:
    """Cells on the unmeasured row with the largest ERD row-sum.

    Within the chosen row, the top ceil(line_fraction% of cols) cells by
    averaged ERD are returned (row-major/leftmost tie-break). Returns None
    when every row has been visited (stop signal, not an error).
    """
    if len(rows.empty) == 0:
        return None
    sums = erd.averaged[rows.empty].sum(axis=1)
    row = int(rows.empty[np.argmax(sums)])  # argmax takes the smallest index on ties
    m = mask.grid.cols
    count = min(m, math.ceil(line_fraction / 100.0 * m))
    vals = erd.averaged[row]
    order = np.argsort(-vals, kind="stable")[:count]
    return np.stack([np.full(count, row, dtype=np.intp), order], axis=1)


def _model_needs_recon(model) -> bool:
    return not isinstance(model, RandomModel)


def _model_desc(model) -> str:
    if isinstance(model, OracleModel):
        kind = "exact" if model.exact else "approx"
        return f"oracle:{kind}:{model.rd_params.window.describe()}:c={model.rd_params.c:g}"
    if isinstance(model, RandomModel):
        return f"random:seed={model.seed}"
    return type(model).__name__.replace("Model", "").lower()


def _step_erd(model, sample: ChannelStack, recon_: Reconstruction | None,
              measured: MeasuredValues, channels, neighbors: int,
              rng: np.random.Generator | None, nn=None) -> ErdMap:
    if isinstance(model, OracleModel):
        if model.exact:
            rd = exact_rd(sample, measured, channels=model.rd_params.channels,
                          neighbors=neighbors)
        else:
            min_dist = np.sqrt(nn.d2[:, 0]) if nn is not None else None
            rd = approx_rd(sample, measured, model.rd_params, recon=recon_,
                           neighbors=neighbors, min_dist_um=min_dist)
        return ErdMap(rd.planes, rd.averaged, rd.channels)
    if isinstance(model, RandomModel):
        grid = measured.mask.grid
        plane = np.zeros(grid.shape)
        t = measured.mask.unmeasured_cells
        plane[t[:, 0], t[:, 1]] = rng.uniform(0.5, 1.0, size=len(t))
        return ErdMap(plane[None], plane, (0,))
    return erd_for(model, recon_, measured, channels=channels, neighbors=neighbors,
                   nn=nn)


def run_acquisition(sample: ChannelStack, model, cfg: AcquisitionConfig, seed: int = 0,
                    channels: tuple[int, ...] | None = None,
                    out_dir: str | Path | None = None,
                    sample_name: str = "sample") -> AcquisitionRun:
    """Simulate a scan of the sample, guided by the model's ERD.

    Each iteration reveals the selected cells from the ground truth,
    reconstructs, and recomputes the ERD. The trace records one row per
    state (step 0 = initial mask); milestone snapshots are kept at each
    whole-percent FOV crossing for metric integration. Deterministic for
    fixed (sample, model, cfg, seed).
    """
    mask = initial_mask(cfg, sample.grid, seed)
    run = AcquisitionRun(sample_name=sample_name, config=cfg, model_desc=_model_desc(model),
                         seed=seed, channel_labels=sample.channel_labels)
    run.final_mask = mask
    try:
        _acquisition_loop(sample, model, cfg, channels, run, mask)
    except Exception as exc:
        # an inference failure mid-scan keeps the partial trace reachable
        run.stop_reason = f"aborted:{type(exc).__name__}"
        raise AcquisitionError(f"acquisition aborted at step {len(run.steps)}: {exc}",
                               run) from exc
    if out_dir is not None:
        write_run_dir(run, out_dir)
    return run


def _acquisition_loop(sample: ChannelStack, model, cfg: AcquisitionConfig,
                      channels, run: AcquisitionRun, mask: MeasurementMask) -> None:
    grid = sample.grid
    rng = (np.random.default_rng([model.seed, run.seed])
           if isinstance(model, RandomModel) else None)
    needs_recon = _model_needs_recon(model)
    per_step = cfg.per_step_metrics if cfg.per_step_metrics is not None else needs_recon
    peaks = sample.planes.max(axis=(1, 2))
    next_milestone = 1
    step = 0
    selected = mask.measured_cells

    while True:
        measured = apply_mask(sample, mask)
        fraction = mask.fraction_measured
        milestone_due = fraction * 100.0 >= next_milestone
        rec = None
        nn = None
        if needs_recon or per_step or milestone_due:
            if mask.n_unmeasured > 0:
                nn = nearest_measured(mask, neighbors=cfg.neighbors,
                                      count_radius_um=density_radius_um(grid))
            rec = reconstruct(measured, neighbors=cfg.neighbors, nn=nn)

        psnr_vals = None
        if per_step or milestone_due:
            psnr_vals = _channel_psnr(sample.planes, rec.stack.planes, peaks)

        t0 = time.perf_counter()
        erd = _step_erd(model, sample, rec, measured, channels, cfg.neighbors, rng,
                        nn=nn)
        erd_time = time.perf_counter() - t0
        erd_sum = float(erd.averaged.sum())

        run.steps.append(StepTrace(step, selected, fraction * 100.0, psnr_vals,
                                   erd_time, erd_sum))
        while fraction * 100.0 >= next_milestone:
            run.milestones.append(Milestone(next_milestone, step, psnr_vals,
                                            mask.measured.copy(), erd.averaged.copy(),
                                            rec.stack.planes.copy()))
            next_milestone += 1

        # stopping rules, checked after each reveal
        if mask.n_unmeasured == 0:
            run.stop_reason = "fov-exhausted"
            break
        if isinstance(cfg.mode, PointwiseMode) and fraction * 100.0 >= cfg.stop_fov_percent:
            run.stop_reason = "fov-threshold"
            break
        row_sets = RowSets.from_mask(mask)
        if isinstance(cfg.mode, LinewiseMode) and len(row_sets.empty) == 0:
            run.stop_reason = "rows-exhausted"
            break
        if erd_sum == 0.0:
            run.stop_reason = "erd-zero"
            break

        if isinstance(cfg.mode, PointwiseMode):
            cells = select_pointwise(erd, mask, cfg.mode.group_fraction)
        else:
            cells = select_linewise(erd, row_sets, mask, cfg.mode.line_fraction)
        if np.any(mask.measured[cells[:, 0], cells[:, 1]]):
            raise RuntimeError("selection returned an already-measured cell")

        mask = mask.with_measured(cells)
        run.final_mask = mask
        selected = cells
        step += 1


def _channel_psnr(truth: np.ndarray, estimate: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    from .experiment import PSNR_CAP_DB

    mse = ((truth - estimate) ** 2).mean(axis=(1, 2))
    out = np.full(len(mse), PSNR_CAP_DB)
    nz = mse > 0
    out[nz] = np.minimum(10.0 * np.log10(peaks[nz] ** 2 / mse[nz]), PSNR_CAP_DB)
    return out


# ---------------------------------------------------------------------------
# run directory output

def write_pgm(mask: np.ndarray, path: str | Path) -> None:
    """Binary P5 image: measured cells 255, unmeasured 0."""
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((mask.astype(np.uint8) * 255).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:  # magic, width, height, maxval
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return (data.reshape(h, w) > 0)


def write_run_dir(run: AcquisitionRun, out_dir: str | Path) -> Path:
    """Persist a run: trace.csv, config.json, and per-milestone snapshots
    (mask_stepNNNN.pgm, recon_<label>_stepNNNN.f32, ebar_stepNNNN.f32)."""
    from .ingest import write_plane_f32

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = run.channel_labels
    with open(out / "trace.csv", "w") as fh:
        cols = ["step", "fov_percent"] + [f"psnr_{lab:.4f}" for lab in labels] + \
            ["psnr_avg", "erd_time_s"]
        fh.write(",".join(cols) + "\n")
        for s in run.steps:
            if s.psnr_per_channel is None:
                psnr_cols = [""] * (len(labels) + 1)
            else:
                psnr_cols = [f"{v:.6f}" for v in s.psnr_per_channel]
                psnr_cols.append(f"{s.psnr_per_channel.mean():.6f}")
            fh.write(",".join([str(s.step), f"{s.fov_percent:.6f}"] + psnr_cols +
                              [f"{s.erd_time_s:.6f}"]) + "\n")

    for ms in run.milestones:
        write_pgm(ms.mask, out / f"mask_step{ms.step:04d}.pgm")
        write_plane_f32(ms.erd_averaged, out / f"ebar_step{ms.step:04d}.f32")
        for lab, plane in zip(labels, ms.recon_planes):
            write_plane_f32(plane, out / f"recon_{lab:.4f}_step{ms.step:04d}.f32")
    if run.final_mask is not None:
        write_pgm(run.final_mask.measured, out / "mask_final.pgm")

    doc = {
        "sample": run.sample_name,
        "model": run.model_desc,
        "seed": run.seed,
        "config": run.config.to_json(),
        "channel_labels": list(labels),
        "stop_reason": run.stop_reason,
        "steps": len(run.steps),
        "final_fov": run.steps[-1].fov_percent if run.steps else 0.0,
        "milestones": [{"percent": m.percent, "step": m.step} for m in run.milestones],
        "rows": run.final_mask.grid.rows if run.final_mask else None,
        "cols": run.final_mask.grid.cols if run.final_mask else None,
    }
    (out / "config.json").write_text(json.dumps(doc, indent=2))
    return out
