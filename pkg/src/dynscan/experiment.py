"""Training-set generation, c/window optimization by simulated scans, model
training orchestration, and the PSNR/AUC evaluation metrics.

The figure of merit is the area under the mean-over-channels PSNR curve,
sampled at whole-percent FOV milestones and integrated with the trapezoid
rule over [1%, stop%].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acquire import AcquisitionConfig, AcquisitionRun, PointwiseMode, run_acquisition
from .core import ChannelStack, MeasurementMask, apply_mask
from .models import (OracleModel, density_radius_um, extract_features, fit_ls,
                     fit_mlp)
from .neighbors import nearest_measured
from .rd import RdMap, RdParams, approx_rd
from .recon import DEFAULT_NEIGHBORS, Reconstruction, reconstruct

PSNR_CAP_DB = 99.0


def psnr(truth: np.ndarray, estimate: np.ndarray) -> float:
    """10 log10(peak^2 / MSE) with peak = max(truth); inf when MSE is zero."""
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {estimate.shape}")
    peak = truth.max()
    if peak <= 0:
        raise ValueError("truth plane is identically zero; PSNR undefined")
    mse = float(((truth - estimate) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def capped_psnr(truth: np.ndarray, estimate: np.ndarray, cap: float = PSNR_CAP_DB) -> float:
    """PSNR with the infinite/huge sentinel capped for reporting and AUC."""
    return min(psnr(truth, estimate), cap)


def trapezoid_auc(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) == 0:
        raise ValueError("x and y must be equal-length and non-empty")
    if len(x) == 1:
        return 0.0
    return float(np.trapezoid(y, x)) if hasattr(np, "trapezoid") else float(np.trapz(y, x))


@dataclass(frozen=True)
class Metrics:
    """Milestone PSNR curves and their integrals for one run."""

    milestones: np.ndarray            # whole-percent FOV values
    psnr_per_channel: np.ndarray      # (n_milestones, d)
    mean_psnr: np.ndarray             # (n_milestones,)
    auc: float
    mean_erd_time_s: float


def run_metrics(run: AcquisitionRun) -> Metrics:
    """Average-channel PSNR AUC over the run's milestone snapshots."""
    if not run.milestones:
        raise ValueError("run has no milestone snapshots")
    pcts = np.array([m.percent for m in run.milestones], dtype=np.float64)
    per_chan = np.stack([m.psnr_per_channel for m in run.milestones])
    mean_curve = per_chan.mean(axis=1)
    auc = trapezoid_auc(pcts, mean_curve)
    erd_time = float(np.mean([s.erd_time_s for s in run.steps]))
    return Metrics(pcts, per_chan, mean_curve, auc, erd_time)


def erd_psnr_auc(run: AcquisitionRun, sample: ChannelStack, rd_params: RdParams,
                 neighbors: int = DEFAULT_NEIGHBORS) -> float:
    """Regression-quality metric: at each milestone, PSNR of the model's
    averaged ERD against the ground-truth averaged RD recomputed for that
    milestone's mask, integrated over the milestones."""
    if not run.milestones:
        raise ValueError("run has no milestone snapshots")
    pcts, scores = [], []
    for ms in run.milestones:
        mask = MeasurementMask(sample.grid, ms.mask)
        if mask.n_unmeasured == 0:
            continue
        measured = apply_mask(sample, mask)
        rd = approx_rd(sample, measured, rd_params, neighbors=neighbors)
        pcts.append(float(ms.percent))
        if rd.averaged.max() <= 0:
            scores.append(PSNR_CAP_DB if np.abs(ms.erd_averaged).max() == 0 else 0.0)
        else:
            scores.append(capped_psnr(rd.averaged, ms.erd_averaged))
    return trapezoid_auc(np.array(pcts), np.array(scores))


# ---------------------------------------------------------------------------
# training corpus

@dataclass(frozen=True)
class CorpusEntry:
    sample_index: int
    density_percent: int
    mask: MeasurementMask
    recon: Reconstruction
    rd: RdMap


@dataclass(frozen=True)
class TrainingCorpus:
    samples: tuple[ChannelStack, ...]
    sample_names: tuple[str, ...]
    densities: tuple[int, ...]
    seed: int
    rd_params: RdParams
    entries: tuple[CorpusEntry, ...]


def random_mask(grid, density_percent: float, rng: np.random.Generator) -> MeasurementMask:
    """Uniformly random mask measuring round(density% of the FOV) cells."""
    count = int(round(density_percent / 100.0 * grid.n_cells))
    count = min(max(count, 1), grid.n_cells)
    flat = rng.choice(grid.n_cells, size=count, replace=False)
    m = np.zeros(grid.n_cells, dtype=bool)
    m[flat] = True
    return MeasurementMask(grid, m.reshape(grid.shape))


def generate_training_corpus(samples: list[ChannelStack], rd_params: RdParams,
                             densities: range | tuple = range(1, 31), seed: int = 0,
                             sample_names: list[str] | None = None,
                             neighbors: int = DEFAULT_NEIGHBORS) -> TrainingCorpus:
    """Seeded random masks at each density, with reconstructions and
    approximate RD maps attached. Entry generation is keyed on
    (seed, sample index, density) so the corpus is reproducible."""
    densities = tuple(int(d) for d in densities)
    if sample_names is None:
        sample_names = [f"sample{i:02d}" for i in range(len(samples))]
    entries = []
    for si, sample in enumerate(samples):
        for dens in densities:
            rng = np.random.default_rng([seed, si, dens])
            mask = random_mask(sample.grid, dens, rng)
            measured = apply_mask(sample, mask)
            rec = reconstruct(measured, neighbors=neighbors)
            rd = approx_rd(sample, measured, rd_params, recon=rec, neighbors=neighbors)
            entries.append(CorpusEntry(si, dens, mask, rec, rd))
    return TrainingCorpus(tuple(samples), tuple(sample_names), densities, seed,
                          rd_params, tuple(entries))


def corpus_training_rows(corpus: TrainingCorpus, channels: tuple[int, ...] | None = None,
                         max_rows_per_entry: int | None = None, seed: int = 0,
                         neighbors: int = DEFAULT_NEIGHBORS) -> tuple[np.ndarray, np.ndarray]:
    """Assemble (features, RD targets) over all corpus entries and channels.

    max_rows_per_entry subsamples unmeasured cells per (entry, channel),
    seeded, to bound training cost on dense corpora.
    """
    feats, targs = [], []
    for ei, entry in enumerate(corpus.entries):
        mask = entry.mask
        chans = channels if channels is not None else entry.rd.channels
        nn = nearest_measured(mask, neighbors=neighbors,
                              count_radius_um=density_radius_um(mask.grid))
        t_cells = mask.unmeasured_cells
        for z in chans:
            zi = entry.rd.channels.index(z)
            f = extract_features(entry.recon, mask, z, neighbors=neighbors, nn=nn)
            y = entry.rd.planes[zi, t_cells[:, 0], t_cells[:, 1]]
            if max_rows_per_entry is not None and len(f) > max_rows_per_entry:
                rng = np.random.default_rng([seed, ei, z])
                idx = rng.choice(len(f), size=max_rows_per_entry, replace=False)
                f, y = f[idx], y[idx]
            feats.append(f)
            targs.append(y)
    return np.concatenate(feats), np.concatenate(targs)


def train_model(corpus: TrainingCorpus, kind: str, channels: tuple[int, ...] | None = None,
                seed: int = 0, mlp_epochs: int = 500, mlp_lr: float = 1e-3,
                mlp_batch_size: int = 1024, max_rows_per_entry: int | None = None):
    """Fit an LS or MLP ERD model on the corpus."""
    channels = channels if channels is not None else corpus.rd_params.channels
    feats, targs = corpus_training_rows(corpus, channels, max_rows_per_entry, seed)
    if kind == "ls":
        return fit_ls(feats, targs, channels=channels)
    if kind == "mlp":
        model, _history = fit_mlp(feats, targs, epochs=mlp_epochs, lr=mlp_lr,
                                  batch_size=mlp_batch_size, seed=seed,
                                  channels=channels)
        return model
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# c / window optimization

@dataclass(frozen=True)
class CandidateResult:
    c: float
    window_desc: str
    auc: float
    mean_rd_time_s: float


@dataclass(frozen=True)
class OptimizeResult:
    best_c: float
    best_window: str
    table: tuple[CandidateResult, ...]


def _oracle_scan_metrics(sample: ChannelStack, params: RdParams,
                         cfg: AcquisitionConfig, seed: int) -> tuple[float, float]:
    run = run_acquisition(sample, OracleModel(params), cfg, seed=seed)
    m = run_metrics(run)
    return m.auc, m.mean_erd_time_s


def optimize_c(samples: list[ChannelStack], c_values, windows,
               channels: tuple[int, ...] | None = None,
               cfg: AcquisitionConfig | None = None, seed: int = 0,
               workers: int = 1) -> OptimizeResult:
    """Grid-search c and window by simulated pointwise scans driven by the
    ground-truth averaged RD, maximizing mean PSNR AUC over the samples.

    Candidate-by-sample runs are independent; workers > 1 spreads them over
    a process pool. Aggregation is keyed, so results are identical for any
    worker count and candidate order. Ties resolve to the smallest c then
    the earlier window.
    """
    if cfg is None:
        cfg = AcquisitionConfig(mode=PointwiseMode(), stop_fov_percent=30.0)
    c_values = list(c_values)
    windows = list(windows)
    if not c_values or not windows:
        raise ValueError("candidate sets must be non-empty")
    jobs = [(c, window, si)
            for c in c_values for window in windows
            for si in range(len(samples))]
    args = [(samples[si], RdParams(c=c, window=window, channels=channels),
             cfg, seed + si) for c, window, si in jobs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_oracle_scan_metrics, *zip(*args)))
    else:
        outcomes = [_oracle_scan_metrics(*a) for a in args]

    by_candidate: dict[tuple, list] = {}
    for (c, window, _si), (auc, erd_time) in zip(jobs, outcomes):
        by_candidate.setdefault((c, window.describe()), []).append((auc, erd_time))
    rows = [CandidateResult(float(c), wdesc,
                            float(np.mean([a for a, _ in vals])),
                            float(np.mean([t for _, t in vals])))
            for (c, wdesc), vals in by_candidate.items()]
    window_order = {w.describe(): i for i, w in enumerate(windows)}
    best = max(rows, key=lambda r: (r.auc, -r.c, -window_order[r.window_desc]))
    return OptimizeResult(best.c, best.window_desc, tuple(rows))


def write_optimize_table(result: OptimizeResult, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("c,window,avg_mz_psnr_auc,mean_rd_time_s\n")
        for row in result.table:
            fh.write(f"{row.c:g},{row.window_desc},{row.auc:.6f},{row.mean_rd_time_s:.6f}\n")


def read_optimize_table(path: str | Path) -> list[CandidateResult]:
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            c, wdesc, auc, t = line.strip().split(",")
            rows.append(CandidateResult(float(c), wdesc, float(auc), float(t)))
    return rows


# ---------------------------------------------------------------------------
# corpus export for the network trainer

def export_corpus(corpus: TrainingCorpus, out_dir: str | Path) -> Path:
    """Write corpus tensors: per entry and channel, a 3-plane input stack
    (reconstruction at T, measured at S, mask) and the RD target plane, as
    .f32 files plus a JSON manifest."""
    from .ingest import write_plane_f32
    from .models import model_input

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries_doc = []
    for entry in corpus.entries:
        sample = corpus.samples[entry.sample_index]
        measured = apply_mask(sample, entry.mask)
        tag = f"{corpus.sample_names[entry.sample_index]}_d{entry.density_percent:02d}"
        files = []
        for zi, z in enumerate(entry.rd.channels):
            planes = model_input(entry.recon, measured, z)
            in_name = f"input_{tag}_z{z}.f32"
            rd_name = f"rd_{tag}_z{z}.f32"
            write_plane_f32(planes, out / in_name)
            write_plane_f32(entry.rd.planes[zi], out / rd_name)
            files.append({"channel": z, "input": in_name, "rd": rd_name})
        entries_doc.append({
            "sample": corpus.sample_names[entry.sample_index],
            "sample_index": entry.sample_index,
            "density_percent": entry.density_percent,
            "channels": files,
        })
    grid = corpus.samples[0].grid
    manifest = {
        "rows": grid.rows, "cols": grid.cols,
        "in_planes": 3,
        "seed": corpus.seed,
        "densities": list(corpus.densities),
        "rd_params": corpus.rd_params.to_json(),
        "samples": list(corpus.sample_names),
        "entries": entries_doc,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out
