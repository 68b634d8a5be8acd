"""Reader for exported corpus directories.

The producer writes, per entry and channel, `input_<tag>_z<z>.f32` holding
three stacked planes (reconstruction at unmeasured cells, measured values,
binary mask) and `rd_<tag>_z<z>.f32` holding the target plane, plus a
`manifest.json` listing every file with grid dimensions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IN_PLANES = 3


@dataclass(frozen=True)
class CorpusPair:
    """One training example: (3, H, W) input planes and (H, W) target."""

    inputs: np.ndarray
    target: np.ndarray
    sample: str
    density_percent: int
    channel: int


def load_corpus(corpus_dir: str | Path) -> list[CorpusPair]:
    root = Path(corpus_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    rows, cols = int(manifest["rows"]), int(manifest["cols"])
    if int(manifest.get("in_planes", IN_PLANES)) != IN_PLANES:
        raise ValueError("corpus was exported with an unexpected plane count")
    pairs = []
    for entry in manifest["entries"]:
        for chan in entry["channels"]:
            inputs = np.fromfile(root / chan["input"], dtype="<f4")
            if inputs.size != IN_PLANES * rows * cols:
                raise ValueError(f"{chan['input']}: wrong element count")
            inputs = inputs.reshape(IN_PLANES, rows, cols).astype(np.float32)
            target = np.fromfile(root / chan["rd"], dtype="<f4")
            if target.size != rows * cols:
                raise ValueError(f"{chan['rd']}: wrong element count")
            target = target.reshape(rows, cols).astype(np.float32)
            pairs.append(CorpusPair(inputs, target, entry["sample"],
                                    int(entry["density_percent"]),
                                    int(chan["channel"])))
    if not pairs:
        raise ValueError(f"no corpus entries under {root}")
    return pairs


def split_by_sample(pairs: list[CorpusPair], val_fraction: float = 0.25,
                    seed: int = 0) -> tuple[list[CorpusPair], list[CorpusPair]]:
    """Deterministic train/validation split along sample boundaries."""
    samples = sorted({p.sample for p in pairs})
    if len(samples) == 1:
        # single-sample corpora split along densities instead
        densities = sorted({p.density_percent for p in pairs})
        rng = np.random.default_rng(seed)
        n_val = max(1, int(round(val_fraction * len(densities))))
        val_d = set(rng.choice(densities, size=n_val, replace=False).tolist())
        train = [p for p in pairs if p.density_percent not in val_d]
        val = [p for p in pairs if p.density_percent in val_d]
        return train, val
    rng = np.random.default_rng(seed)
    n_val = max(1, int(round(val_fraction * len(samples))))
    val_s = set(rng.choice(samples, size=n_val, replace=False).tolist())
    train = [p for p in pairs if p.sample not in val_s]
    val = [p for p in pairs if p.sample in val_s]
    return train, val
