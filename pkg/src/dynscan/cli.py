"""Command-line interface.

Subcommands: phantom, corpus, optimize-c, train, simulate, evaluate.
Every flag can also be supplied through a JSON config file (--config);
explicit flags override the file. Exit codes: 0 success, 2 validation
error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .acquire import AcquisitionConfig, LinewiseMode, PointwiseMode, run_acquisition
from .core import GridSpec
from .experiment import (erd_psnr_auc, export_corpus, generate_training_corpus,
                         optimize_c, run_metrics, train_model,
                         write_optimize_table)
from .ingest import generate_phantom, load_sample_dir, write_sample_dir
from .models import OracleModel, RandomModel, load_model, save_model
from .rd import RdParams, parse_window
from .unet import load_unet_weights


def _parse_densities(text: str) -> range:
    parts = [int(p) for p in text.split(":")]
    if len(parts) == 1:
        return range(parts[0], parts[0] + 1)
    if len(parts) == 2:
        return range(parts[0], parts[1] + 1)
    if len(parts) == 3:
        return range(parts[0], parts[1] + 1, parts[2])
    raise ValueError(f"bad densities spec {text!r} (want start:stop[:step])")


def _parse_c_set(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _parse_windows(text: str):
    return [parse_window(tok) for tok in text.split(",") if tok]


def _parse_channels(text: str | None):
    if text is None or text == "all":
        return None
    return tuple(int(tok) for tok in text.split(",") if tok != "")


def _parse_model(spec: str, rd_params: RdParams):
    kind, _, arg = spec.partition(":")
    if kind == "oracle":
        return OracleModel(rd_params, exact=(arg == "exact"))
    if kind == "random":
        return RandomModel(seed=int(arg) if arg else 0)
    if kind in ("ls", "mlp"):
        if not arg:
            raise ValueError(f"--model {kind} needs a file: {kind}:FILE")
        return load_model(arg)
    if kind == "unet":
        if not arg:
            raise ValueError("--model unet needs a file: unet:FILE")
        return load_unet_weights(arg)
    raise ValueError(f"unknown model spec {spec!r}")


def _load_samples_dir(root: str | Path):
    """All sample subdirectories under root (or root itself if it is one)."""
    root = Path(root)
    if (root / "meta.json").exists():
        dirs = [root]
    else:
        dirs = sorted(d for d in root.iterdir() if (d / "meta.json").exists())
    if not dirs:
        raise ValueError(f"no sample directories under {root}")
    stacks, names = [], []
    for d in dirs:
        stack, meta = load_sample_dir(d)
        stacks.append(stack)
        names.append(meta.name)
    return stacks, names


def _merge_config(args: argparse.Namespace, parser_defaults: dict) -> argparse.Namespace:
    """Layer values: defaults < config file < explicit flags."""
    config = {}
    if getattr(args, "config", None):
        config = json.loads(Path(args.config).read_text())
        unknown = set(config) - set(parser_defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key, default in parser_defaults.items():
        if getattr(args, key) is None:
            setattr(args, key, config.get(key, default))
    return args


# ---------------------------------------------------------------------------
# subcommands

def cmd_phantom(args) -> int:
    grid = GridSpec(args.rows, args.cols, args.pitch_um, args.pitch_um)
    out = Path(args.out)
    for i in range(args.count):
        seed = args.seed + i
        stack = generate_phantom(seed, grid, args.channels)
        name = f"phantom_{seed:04d}"
        write_sample_dir(stack, out / name, name=name)
    print(f"wrote {args.count} phantom sample(s) under {out}")
    return 0


def cmd_corpus(args) -> int:
    stacks, names = _load_samples_dir(args.samples)
    params = RdParams(c=args.c, window=parse_window(args.window),
                      channels=_parse_channels(args.channels))
    corpus = generate_training_corpus(stacks, params,
                                      densities=_parse_densities(args.densities),
                                      seed=args.seed, sample_names=names)
    export_corpus(corpus, args.out)
    print(f"corpus with {len(corpus.entries)} entries exported to {args.out}")
    return 0


def cmd_optimize_c(args) -> int:
    stacks, _names = _load_samples_dir(args.samples)
    cfg = AcquisitionConfig(mode=PointwiseMode(), stop_fov_percent=args.stop_fov)
    result = optimize_c(stacks, _parse_c_set(args.c_set), _parse_windows(args.windows),
                        channels=_parse_channels(args.channels), cfg=cfg,
                        seed=args.seed, workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_optimize_table(result, out)
    from .plots import save_auc_table_figure
    fig = save_auc_table_figure(result.table, out.with_suffix(".png"))
    print(f"best c={result.best_c:g} window={result.best_window}")
    print(f"table: {out}\nfigure: {fig}")
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus_dir(args.corpus)
    model = train_model(corpus, args.model, channels=_parse_channels(args.channels),
                        seed=args.seed, mlp_epochs=args.mlp_epochs,
                        max_rows_per_entry=args.max_rows_per_entry)
    save_model(model, args.out)
    print(f"{args.model} model written to {args.out}")
    return 0


def load_corpus_dir(corpus_dir: str | Path):
    """Rebuild a training corpus from an exported corpus directory.

    Channel indices are renumbered positionally (0..d-1 in manifest order).
    Reconstructions are recomputed from the stored measured values, which
    reproduces the exported reconstruction up to float32 quantization.
    """
    from .core import ChannelStack, MeasurementMask, apply_mask
    from .experiment import CorpusEntry, TrainingCorpus
    from .ingest import read_plane_f32
    from .rd import RdMap, average_rd
    from .recon import reconstruct

    root = Path(corpus_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    rows, cols = manifest["rows"], manifest["cols"]
    params = RdParams.from_json(manifest["rd_params"])
    params = RdParams(params.c, params.window, None)  # channels renumbered
    grid = GridSpec(rows, cols)
    built = []
    sample_stub = None
    for entry in manifest["entries"]:
        mask_plane = None
        recon_planes, rd_planes = [], []
        for chan in entry["channels"]:
            stacked = read_plane_f32(root / chan["input"], 3 * rows, cols)
            stacked = stacked.reshape(3, rows, cols)
            mask_plane = stacked[2] > 0.5
            recon_planes.append(np.maximum(stacked[0] + stacked[1], 0.0))
            rd_planes.append(read_plane_f32(root / chan["rd"], rows, cols))
        mask = MeasurementMask(grid, mask_plane)
        labels = tuple(range(1, len(recon_planes) + 1))
        stack = ChannelStack(grid, np.stack(recon_planes), labels)
        rec = reconstruct(apply_mask(stack, mask))
        rd = RdMap(np.stack(rd_planes), average_rd(np.stack(rd_planes)),
                   tuple(range(len(rd_planes))))
        built.append(CorpusEntry(entry["sample_index"], entry["density_percent"],
                                 mask, rec, rd))
        sample_stub = stack
    return TrainingCorpus((sample_stub,), tuple(manifest["samples"]),
                          tuple(manifest["densities"]), manifest["seed"],
                          params, tuple(built))


def cmd_simulate(args) -> int:
    stack, meta = load_sample_dir(args.sample)
    rd_params = RdParams(c=args.c, window=parse_window(args.window),
                         channels=_parse_channels(args.channels))
    model = _parse_model(args.model, rd_params)
    if args.mode == "pointwise":
        mode = PointwiseMode(group_fraction=args.group_fraction)
        cfg = AcquisitionConfig(mode=mode, stop_fov_percent=args.stop_fov)
    else:
        mode = LinewiseMode(line_fraction=args.line_fraction)
        cfg = AcquisitionConfig(mode=mode, stop_fov_percent=100.0)
    run = run_acquisition(stack, model, cfg, seed=args.seed,
                          channels=_parse_channels(args.channels),
                          out_dir=args.out, sample_name=meta.name)
    m = run_metrics(run)
    from .plots import save_mask_figure, save_psnr_curves
    save_psnr_curves([(run.model_desc, m.milestones, m.mean_psnr)],
                     Path(args.out) / "psnr_curve.png")
    save_mask_figure(run.final_mask.measured, Path(args.out) / "mask_final.png",
                     title=f"{meta.name} {run.stop_reason}")
    print(f"run complete: {len(run.steps)} steps, stop={run.stop_reason}, "
          f"avg m/z PSNR AUC={m.auc:.2f}")
    return 0


def cmd_evaluate(args) -> int:
    truth, _meta = load_sample_dir(args.truth)
    rd_params = RdParams(c=args.c, window=parse_window(args.window))
    rows = []
    curves = []
    for run_dir in args.runs:
        run_dir = Path(run_dir)
        doc = json.loads((run_dir / "config.json").read_text())
        metrics = _metrics_from_run_dir(run_dir, doc, truth, rd_params)
        rows.append((run_dir.name, doc["model"], metrics["auc"], metrics["erd_auc"],
                     metrics["final_fov"], metrics["mean_erd_time"]))
        curves.append((f"{run_dir.name}:{doc['model']}", metrics["milestones"],
                       metrics["mean_psnr"]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("run,model,avg_mz_psnr_auc,avg_erd_psnr_auc,final_fov_percent,"
                 "mean_erd_time_s\n")
        for name, model, auc, erd_auc, fov, t in rows:
            fh.write(f"{name},{model},{auc:.6f},{erd_auc:.6f},{fov:.4f},{t:.6f}\n")
    from .plots import save_psnr_curves
    fig = save_psnr_curves(curves, out.with_suffix(".png"))
    print(f"metrics: {out}\nfigure: {fig}")
    return 0


def _metrics_from_run_dir(run_dir: Path, doc: dict, truth, rd_params: RdParams) -> dict:
    """Recompute metrics from persisted milestone snapshots."""
    from .acquire import read_pgm
    from .core import MeasurementMask, apply_mask
    from .experiment import PSNR_CAP_DB, capped_psnr, trapezoid_auc
    from .ingest import read_plane_f32
    from .rd import approx_rd

    grid = truth.grid
    milestones = doc["milestones"]
    pcts, mean_psnr, erd_scores = [], [], []
    erd_times = []
    with open(run_dir / "trace.csv") as fh:
        header = fh.readline().strip().split(",")
        t_idx = header.index("erd_time_s")
        for line in fh:
            parts = line.strip().split(",")
            erd_times.append(float(parts[t_idx]))
    for ms in milestones:
        step = ms["step"]
        mask_arr = read_pgm(run_dir / f"mask_step{step:04d}.pgm")
        ebar = read_plane_f32(run_dir / f"ebar_step{step:04d}.f32",
                              grid.rows, grid.cols)
        recons = np.stack([
            read_plane_f32(run_dir / f"recon_{lab:.4f}_step{step:04d}.f32",
                           grid.rows, grid.cols)
            for lab in truth.channel_labels])
        vals = [capped_psnr(truth.planes[z], recons[z])
                for z in range(truth.n_channels)]
        pcts.append(float(ms["percent"]))
        mean_psnr.append(float(np.mean(vals)))
        mask = MeasurementMask(grid, mask_arr)
        if mask.n_unmeasured == 0:
            continue
        rd = approx_rd(truth, apply_mask(truth, mask), rd_params)
        if rd.averaged.max() <= 0:
            erd_scores.append(PSNR_CAP_DB if np.abs(ebar).max() == 0 else 0.0)
        else:
            erd_scores.append(capped_psnr(rd.averaged, ebar))
    return {
        "milestones": np.asarray(pcts),
        "mean_psnr": np.asarray(mean_psnr),
        "auc": trapezoid_auc(np.asarray(pcts), np.asarray(mean_psnr)),
        "erd_auc": trapezoid_auc(np.asarray(pcts[:len(erd_scores)]),
                                 np.asarray(erd_scores)),
        "final_fov": doc.get("final_fov", pcts[-1] if pcts else 0.0),
        "mean_erd_time": float(np.mean(erd_times)) if erd_times else 0.0,
    }


# ---------------------------------------------------------------------------
# parser assembly

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynscan",
        description="dynamic sparse-sampling simulator for multichannel images")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, defaults, configure):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file mirroring the flags")
        configure(p)
        p.set_defaults(func=func, _defaults=defaults)
        return p

    add("phantom", cmd_phantom,
        {"seed": 0, "rows": 64, "cols": 64, "channels": 4, "count": 1,
         "pitch_um": 15.0, "out": "phantoms"},
        lambda p: [
            p.add_argument("--seed", type=int),
            p.add_argument("--rows", type=int),
            p.add_argument("--cols", type=int),
            p.add_argument("--channels", type=int),
            p.add_argument("--count", type=int),
            p.add_argument("--pitch-um", dest="pitch_um", type=float),
            p.add_argument("--out")])

    add("corpus", cmd_corpus,
        {"samples": None, "densities": "1:30:1", "c": 8.0, "window": "dyn:3",
         "seed": 0, "channels": None, "out": "corpus"},
        lambda p: [
            p.add_argument("--samples"),
            p.add_argument("--densities"),
            p.add_argument("--c", type=float),
            p.add_argument("--window"),
            p.add_argument("--seed", type=int),
            p.add_argument("--channels"),
            p.add_argument("--out")])

    add("optimize-c", cmd_optimize_c,
        {"samples": None, "c_set": "1,2,4,8,16,32,64,128,256",
         "windows": "dyn:1,dyn:2,dyn:3,dyn:4,dyn:5,static:11,static:13,static:15,static:17,static:19",
         "channels": None, "stop_fov": 30.0, "seed": 0, "workers": 1,
         "out": "optimize_c.csv"},
        lambda p: [
            p.add_argument("--samples"),
            p.add_argument("--c-set", dest="c_set"),
            p.add_argument("--windows"),
            p.add_argument("--channels"),
            p.add_argument("--stop-fov", dest="stop_fov", type=float),
            p.add_argument("--seed", type=int),
            p.add_argument("--workers", type=int,
                           help="parallel processes for candidate runs"),
            p.add_argument("--out")])

    add("train", cmd_train,
        {"model": None, "corpus": None, "out": "model.json", "seed": 0,
         "channels": None, "mlp_epochs": 500, "max_rows_per_entry": None},
        lambda p: [
            p.add_argument("--model", choices=["ls", "mlp"]),
            p.add_argument("--corpus"),
            p.add_argument("--out"),
            p.add_argument("--seed", type=int),
            p.add_argument("--channels"),
            p.add_argument("--mlp-epochs", dest="mlp_epochs", type=int),
            p.add_argument("--max-rows-per-entry", dest="max_rows_per_entry", type=int)])

    add("simulate", cmd_simulate,
        {"sample": None, "model": "oracle", "mode": "pointwise", "stop_fov": 30.0,
         "line_fraction": 30.0, "group_fraction": None, "seed": 0, "c": 8.0,
         "window": "dyn:3", "channels": None, "out": "run"},
        lambda p: [
            p.add_argument("--sample"),
            p.add_argument("--model",
                           help="ls:FILE | mlp:FILE | unet:FILE | oracle | "
                                "oracle:exact | random[:SEED]"),
            p.add_argument("--mode", choices=["pointwise", "linewise"]),
            p.add_argument("--stop-fov", dest="stop_fov", type=float),
            p.add_argument("--line-fraction", dest="line_fraction", type=float),
            p.add_argument("--group-fraction", dest="group_fraction", type=float),
            p.add_argument("--seed", type=int),
            p.add_argument("--c", type=float),
            p.add_argument("--window"),
            p.add_argument("--channels"),
            p.add_argument("--out")])

    add("evaluate", cmd_evaluate,
        {"runs": None, "truth": None, "out": "metrics.csv", "c": 8.0,
         "window": "dyn:3"},
        lambda p: [
            p.add_argument("--runs", nargs="+"),
            p.add_argument("--truth"),
            p.add_argument("--out"),
            p.add_argument("--c", type=float,
                           help="RD parameter for the ERD-quality metric"),
            p.add_argument("--window")])

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, args._defaults)
        missing = [k for k, v in vars(args).items()
                   if v is None and k in args._defaults
                   and args._defaults[k] is None and k not in
                   ("channels", "group_fraction", "max_rows_per_entry")]
        if missing:
            raise ValueError(f"missing required option(s): "
                             + ", ".join("--" + m.replace("_", "-") for m in missing))
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
