"""Inference parity fixtures: (input, output) pairs the inference side must
reproduce from the exported weight file."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .corpus import CorpusPair
from .network import ErdUNet
from .train import _pad_to_multiple


def export_fixtures(model: ErdUNet, pairs: list[CorpusPair], count: int,
                    out_dir: str | Path, weights_file: str = "unet.weights") -> Path:
    """Serialize up to `count` (input tensor, output plane) pairs as .f32
    files with a JSON manifest. Outputs are computed at the original
    (unpadded) spatial size, matching what inference must produce."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.eval()
    entries = []
    for i, pair in enumerate(pairs[:count]):
        x = torch.from_numpy(pair.inputs)
        xp, (t0, t1, l0, l1) = _pad_to_multiple(x, model.pad_multiple)
        with torch.no_grad():
            y = model(xp.unsqueeze(0))[0, 0, t0:t1, l0:l1].numpy()
        in_name = f"fixture_{i:03d}_input.f32"
        out_name = f"fixture_{i:03d}_output.f32"
        pair.inputs.astype("<f4").tofile(out / in_name)
        y.astype("<f4").tofile(out / out_name)
        entries.append({
            "input": in_name, "output": out_name,
            "input_shape": list(pair.inputs.shape),
            "output_shape": list(y.shape),
            "sample": pair.sample, "density_percent": pair.density_percent,
            "channel": pair.channel,
        })
    (out / "fixtures.json").write_text(json.dumps({
        "weights": weights_file,
        "tolerance_max_abs": 1e-4,
        "fixtures": entries,
    }, indent=2))
    return out
