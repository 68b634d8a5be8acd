"""U-Net ERD inference and the weight interchange file format.

The network is fully convolutional: an encoder of two 3x3 convolutions per
level (LeakyReLU 0.2) with 2x2 max-pool downsampling and filter doubling,
and a decoder (ReLU) of nearest-neighbor x2 upsampling followed by a 3x3
convolution, skip concatenation, two more 3x3 convolutions, and a final 1x1
convolution to a single plane. Inputs are zero-padded symmetrically to a
multiple of 2^(depth-1) and the output is cropped back.

Weight file layout: 4-byte magic, little-endian uint64 header length, UTF-8
JSON header (architecture descriptor plus a tensor manifest of name, shape,
byte offset), then the concatenated little-endian float32 tensor buffers.
Kernels are [out_channels, in_channels, kh, kw] row-major; biases
[out_channels]. The header carries a 64-bit FNV-1a checksum of the payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"UNW1"
FORMAT_NAME = "erd-unet-weights"
DEFAULT_DEPTH = 4
DEFAULT_BASE_FILTERS = 32
IN_PLANES = 3
ENCODER_ACTIVATION = "leaky_relu:0.2"
DECODER_ACTIVATION = "relu"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def tensor_names(depth: int) -> list[str]:
    """Manifest order of all tensors for a given depth (weights then bias)."""
    names = []
    for lvl in range(depth):
        for conv in (1, 2):
            names += [f"enc{lvl}_conv{conv}_w", f"enc{lvl}_conv{conv}_b"]
    for lvl in reversed(range(depth - 1)):
        names += [f"up{lvl}_conv_w", f"up{lvl}_conv_b"]
        for conv in (1, 2):
            names += [f"dec{lvl}_conv{conv}_w", f"dec{lvl}_conv{conv}_b"]
    names += ["out_conv_w", "out_conv_b"]
    return names


def tensor_shapes(depth: int, base_filters: int, in_planes: int = IN_PLANES) -> dict[str, tuple]:
    """Expected shape of every tensor in the declared architecture."""
    shapes: dict[str, tuple] = {}
    prev = in_planes
    for lvl in range(depth):
        f = base_filters * 2 ** lvl
        shapes[f"enc{lvl}_conv1_w"] = (f, prev, 3, 3)
        shapes[f"enc{lvl}_conv1_b"] = (f,)
        shapes[f"enc{lvl}_conv2_w"] = (f, f, 3, 3)
        shapes[f"enc{lvl}_conv2_b"] = (f,)
        prev = f
    for lvl in reversed(range(depth - 1)):
        f = base_filters * 2 ** lvl
        shapes[f"up{lvl}_conv_w"] = (f, 2 * f, 3, 3)
        shapes[f"up{lvl}_conv_b"] = (f,)
        shapes[f"dec{lvl}_conv1_w"] = (f, 2 * f, 3, 3)
        shapes[f"dec{lvl}_conv1_b"] = (f,)
        shapes[f"dec{lvl}_conv2_w"] = (f, f, 3, 3)
        shapes[f"dec{lvl}_conv2_b"] = (f,)
    shapes["out_conv_w"] = (1, base_filters, 1, 1)
    shapes["out_conv_b"] = (1,)
    return shapes


@dataclass(frozen=True)
class UNetModel:
    """Loaded U-Net parameters plus the architecture they were declared for."""

    depth: int
    base_filters: int
    tensors: dict[str, np.ndarray]
    channels: tuple[int, ...] | None = None

    def __post_init__(self):
        expected = tensor_shapes(self.depth, self.base_filters)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise ValueError(f"missing tensor {name}")
            got = self.tensors[name].shape
            if tuple(got) != shape:
                raise ValueError(f"tensor {name} has shape {got}, expected {shape}")

    @property
    def pad_multiple(self) -> int:
        return 2 ** (self.depth - 1)


def random_unet(depth: int, base_filters: int, seed: int = 0) -> UNetModel:
    """Randomly initialized network (useful for fixtures and tests)."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(depth, base_filters).items():
        if name.endswith("_w"):
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(0, np.sqrt(2.0 / fan_in), shape).astype(np.float32)
        else:
            tensors[name] = rng.normal(0, 0.05, shape).astype(np.float32)
    return UNetModel(depth, base_filters, tensors)


# ---------------------------------------------------------------------------
# interchange file

def write_unet_weights(model: UNetModel, path: str | Path) -> None:
    names = tensor_names(model.depth)
    offsets = {}
    chunks = []
    pos = 0
    for name in names:
        buf = np.ascontiguousarray(model.tensors[name], dtype="<f4").tobytes()
        offsets[name] = pos
        chunks.append(buf)
        pos += len(buf)
    payload = b"".join(chunks)
    header = {
        "format": FORMAT_NAME,
        "depth": model.depth,
        "base_filters": model.base_filters,
        "in_planes": IN_PLANES,
        "activations": {"encoder": ENCODER_ACTIVATION, "decoder": DECODER_ACTIVATION},
        "tensors": [{"name": n, "shape": list(model.tensors[n].shape),
                     "offset": offsets[n]} for n in names],
        "payload_bytes": len(payload),
        "fnv1a64": f"{fnv1a64(payload):016x}",
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_unet_weights(path: str | Path) -> UNetModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a U-Net weight file")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if header.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: unexpected format {header.get('format')!r}")
    payload = raw[12 + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise ValueError(f"{path}: truncated payload")
    checksum = f"{fnv1a64(payload):016x}"
    if checksum != header["fnv1a64"]:
        raise ValueError(f"{path}: payload checksum mismatch")
    acts = header.get("activations", {})
    if (acts.get("encoder"), acts.get("decoder")) != (ENCODER_ACTIVATION, DECODER_ACTIVATION):
        raise ValueError(f"{path}: unsupported activation tags {acts}")

    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        off = entry["offset"]
        buf = payload[off:off + 4 * count]
        if len(buf) != 4 * count:
            raise ValueError(f"{path}: tensor {entry['name']} runs past payload")
        tensors[entry["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape)
    return UNetModel(int(header["depth"]), int(header["base_filters"]), tensors)


# ---------------------------------------------------------------------------
# inference

def _conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """'same' 2-D convolution (cross-correlation) via im2col, float32."""
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    if ph or pw:
        xp = np.zeros((cin, h + 2 * ph, wd + 2 * pw), dtype=np.float32)
        xp[:, ph:ph + h, pw:pw + wd] = x
    else:
        xp = x
    cols = np.empty((cin * kh * kw, h * wd), dtype=np.float32)
    row = 0
    for c in range(cin):
        for dy in range(kh):
            for dx in range(kw):
                cols[row] = xp[c, dy:dy + h, dx:dx + wd].ravel()
                row += 1
    out = w.reshape(cout, -1).astype(np.float32) @ cols
    out += b.astype(np.float32)[:, None]
    return out.reshape(cout, h, wd)


def _leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def _maxpool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def _upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def unet_infer(model: UNetModel, planes: np.ndarray) -> np.ndarray:
    """Run the network on one channel's (3, H, W) input; returns (H, W).

    H and W are zero-padded symmetrically to the padding multiple and the
    result is cropped back, so arbitrary spatial sizes are accepted.
    """
    planes = np.asarray(planes, dtype=np.float32)
    if planes.ndim != 3 or planes.shape[0] != IN_PLANES:
        raise ValueError(f"expected ({IN_PLANES}, H, W) input, got {planes.shape}")
    _, h, w = planes.shape
    mult = model.pad_multiple
    ph, pw = (-h) % mult, (-w) % mult
    top, left = ph // 2, pw // 2
    x = np.zeros((IN_PLANES, h + ph, w + pw), dtype=np.float32)
    x[:, top:top + h, left:left + w] = planes

    t = model.tensors
    skips = []
    for lvl in range(model.depth):
        x = _leaky_relu(_conv2d_same(x, t[f"enc{lvl}_conv1_w"], t[f"enc{lvl}_conv1_b"]))
        x = _leaky_relu(_conv2d_same(x, t[f"enc{lvl}_conv2_w"], t[f"enc{lvl}_conv2_b"]))
        if lvl < model.depth - 1:
            skips.append(x)
            x = _maxpool2(x)
    for lvl in reversed(range(model.depth - 1)):
        x = _upsample2(x)
        x = np.maximum(_conv2d_same(x, t[f"up{lvl}_conv_w"], t[f"up{lvl}_conv_b"]), 0)
        x = np.concatenate([x, skips[lvl]], axis=0)
        x = np.maximum(_conv2d_same(x, t[f"dec{lvl}_conv1_w"], t[f"dec{lvl}_conv1_b"]), 0)
        x = np.maximum(_conv2d_same(x, t[f"dec{lvl}_conv2_w"], t[f"dec{lvl}_conv2_b"]), 0)
    x = _conv2d_same(x, t["out_conv_w"], t["out_conv_b"])
    return x[0, top:top + h, left:left + w].astype(np.float64)
