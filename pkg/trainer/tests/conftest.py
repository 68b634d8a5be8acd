import json

import numpy as np
import pytest


def blur3(plane):
    """3x3 box blur with zero boundary, plain numpy."""
    out = np.zeros_like(plane)
    h, w = plane.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ys = slice(max(0, dy), h + min(0, dy))
            xs = slice(max(0, dx), w + min(0, dx))
            yd = slice(max(0, -dy), h + min(0, -dy))
            xd = slice(max(0, -dx), w + min(0, -dx))
            out[yd, xd] += plane[ys, xs]
    return out / 9.0


def make_corpus_dir(root, rows=16, cols=16, n_samples=2, channels=2,
                    densities=(5, 10, 15, 20, 25, 30), seed=0):
    """Fabricates a corpus directory in the exported interchange format:
    smooth random fields, random masks, and a blur-based target that a
    small convolutional network can learn."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for si in range(n_samples):
        yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
        fields = []
        for z in range(channels):
            cy, cx = rng.uniform(0.3, 0.7) * rows, rng.uniform(0.3, 0.7) * cols
            sy, sx = rng.uniform(0.2, 0.5) * rows, rng.uniform(0.2, 0.5) * cols
            fields.append(np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2)))
        for dens in densities:
            count = max(1, int(round(dens / 100 * rows * cols)))
            mask = np.zeros(rows * cols, dtype=bool)
            mask[rng.choice(rows * cols, size=count, replace=False)] = True
            mask = mask.reshape(rows, cols)
            files = []
            tag = f"s{si:02d}_d{dens:02d}"
            for z in range(channels):
                field = fields[z]
                plane0 = field * (~mask)
                plane1 = field * mask
                stacked = np.stack([plane0, plane1, mask.astype(np.float64)])
                target = blur3(field) * (~mask)
                in_name = f"input_{tag}_z{z}.f32"
                rd_name = f"rd_{tag}_z{z}.f32"
                stacked.astype("<f4").tofile(root / in_name)
                target.astype("<f4").tofile(root / rd_name)
                files.append({"channel": z, "input": in_name, "rd": rd_name})
            entries.append({"sample": f"s{si:02d}", "sample_index": si,
                            "density_percent": dens, "channels": files})
    manifest = {
        "rows": rows, "cols": cols, "in_planes": 3, "seed": seed,
        "densities": list(densities),
        "rd_params": {"c": 8.0, "window": "dyn:3", "channels": None},
        "samples": [f"s{si:02d}" for si in range(n_samples)],
        "entries": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return root


@pytest.fixture
def corpus_dir(tmp_path):
    return make_corpus_dir(tmp_path / "corpus")
