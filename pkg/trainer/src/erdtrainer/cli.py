"""Trainer command line: consumes an exported corpus directory, trains the
network, and writes the interchange weight file plus history and optional
parity fixtures."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .corpus import load_corpus, split_by_sample
from .fixtures import export_fixtures
from .train import (LR_GRID, TrainConfig, export_weights, train_unet,
                    write_history_csv, zero_predictor_loss)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="erdtrain",
                                description="train the ERD U-Net on an exported corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default="unet.weights")
    p.add_argument("--history", default=None, help="per-epoch loss CSV")
    p.add_argument("--loss", choices=["mae", "mse"], default="mae")
    p.add_argument("--optimizer", choices=["adam", "nadam", "rms"], default="nadam")
    p.add_argument("--lr", type=float, default=1e-4,
                   help=f"learning rate (grid used in sweeps: {LR_GRID})")
    p.add_argument("--min-epochs", type=int, default=10)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--base-filters", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--fixtures", type=int, default=0,
                   help="also export N parity fixtures")
    p.add_argument("--fixtures-out", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        pairs = load_corpus(args.corpus)
        train_pairs, val_pairs = split_by_sample(pairs, args.val_fraction, args.seed)
        cfg = TrainConfig(loss=args.loss, optimizer=args.optimizer, lr=args.lr,
                          min_epochs=args.min_epochs, patience=args.patience,
                          max_epochs=args.max_epochs, batch_size=args.batch_size,
                          seed=args.seed, depth=args.depth,
                          base_filters=args.base_filters,
                          augment=not args.no_augment)
        result = train_unet(train_pairs, val_pairs, cfg)
        export_weights(result, args.out)
        if args.history:
            write_history_csv(result.history, args.history)
        baseline = zero_predictor_loss(val_pairs, args.loss)
        print(f"trained {len(result.history)} epochs; best epoch "
              f"{result.best_epoch} val {args.loss}={result.best_val_loss:.6f} "
              f"(zero-predictor {baseline:.6f}); weights -> {args.out}")
        if args.fixtures > 0:
            out_dir = args.fixtures_out or (Path(args.out).parent / "fixtures")
            export_fixtures(result.model, val_pairs, args.fixtures, out_dir,
                            weights_file=str(Path(args.out).name))
            print(f"{min(args.fixtures, len(val_pairs))} parity fixtures -> {out_dir}")
        return 0
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
