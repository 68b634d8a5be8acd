"""Writer/reader for the U-Net weight interchange file.

Independent implementation of the format consumed by the inference side:
4-byte magic "UNW1", little-endian uint64 header length, UTF-8 JSON header
(depth, base_filters, activation tags, tensor manifest with byte offsets,
payload size, 64-bit FNV-1a checksum of the payload), then concatenated
little-endian float32 buffers. Kernels [out, in, kh, kw] row-major, biases
[out].
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UNW1"
FORMAT_NAME = "erd-unet-weights"
IN_PLANES = 3
ENCODER_ACTIVATION = "leaky_relu:0.2"
DECODER_ACTIVATION = "relu"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def tensor_order(depth: int) -> list[str]:
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


def write_weights(tensors: dict, depth: int, base_filters: int,
                  path: str | Path) -> None:
    """tensors: name -> array-like (torch tensors or numpy arrays)."""
    names = tensor_order(depth)
    chunks, manifest = [], []
    pos = 0
    arrays = {}
    for name in names:
        t = tensors[name]
        arr = t.detach().cpu().numpy() if hasattr(t, "detach") else np.asarray(t)
        arr = np.ascontiguousarray(arr, dtype="<f4")
        arrays[name] = arr
        buf = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": pos})
        chunks.append(buf)
        pos += len(buf)
    payload = b"".join(chunks)
    header = {
        "format": FORMAT_NAME,
        "depth": depth,
        "base_filters": base_filters,
        "in_planes": IN_PLANES,
        "activations": {"encoder": ENCODER_ACTIVATION, "decoder": DECODER_ACTIVATION},
        "tensors": manifest,
        "payload_bytes": len(payload),
        "fnv1a64": f"{fnv1a64(payload):016x}",
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def read_weights(path: str | Path) -> tuple[dict, int, int]:
    """Returns (tensors, depth, base_filters); verifies the checksum."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if header.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: unexpected format")
    payload = raw[12 + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise ValueError(f"{path}: truncated payload")
    if f"{fnv1a64(payload):016x}" != header["fnv1a64"]:
        raise ValueError(f"{path}: checksum mismatch")
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        off = entry["offset"]
        tensors[entry["name"]] = np.frombuffer(
            payload[off:off + 4 * count], dtype="<f4").reshape(shape).copy()
    return tensors, int(header["depth"]), int(header["base_filters"])
