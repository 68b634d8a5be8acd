"""Torch implementation of the ERD U-Net.

Mirrors the inference-side architecture exactly: an encoder of paired 3x3
convolutions (LeakyReLU 0.2) with 2x2 max-pool downsampling and filter
doubling per level, and a decoder (ReLU) of nearest-neighbor upsampling, a
3x3 convolution halving the filters, skip concatenation, two more 3x3
convolutions, and a final 1x1 convolution to one plane.
"""

from __future__ import annotations

import torch
from torch import nn

IN_PLANES = 3


class ErdUNet(nn.Module):
    def __init__(self, depth: int = 4, base_filters: int = 32):
        super().__init__()
        self.depth = depth
        self.base_filters = base_filters
        self.enc1 = nn.ModuleList()
        self.enc2 = nn.ModuleList()
        prev = IN_PLANES
        for lvl in range(depth):
            f = base_filters * 2 ** lvl
            self.enc1.append(nn.Conv2d(prev, f, 3, padding=1))
            self.enc2.append(nn.Conv2d(f, f, 3, padding=1))
            prev = f
        self.up = nn.ModuleList()
        self.dec1 = nn.ModuleList()
        self.dec2 = nn.ModuleList()
        for lvl in reversed(range(depth - 1)):
            f = base_filters * 2 ** lvl
            self.up.append(nn.Conv2d(2 * f, f, 3, padding=1))
            self.dec1.append(nn.Conv2d(2 * f, f, 3, padding=1))
            self.dec2.append(nn.Conv2d(f, f, 3, padding=1))
        self.out_conv = nn.Conv2d(base_filters, 1, 1)
        self.lrelu = nn.LeakyReLU(0.2)
        self.relu = nn.ReLU()
        self.pool = nn.MaxPool2d(2)
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")

    @property
    def pad_multiple(self) -> int:
        return 2 ** (self.depth - 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for lvl in range(self.depth):
            x = self.lrelu(self.enc1[lvl](x))
            x = self.lrelu(self.enc2[lvl](x))
            if lvl < self.depth - 1:
                skips.append(x)
                x = self.pool(x)
        for i, lvl in enumerate(reversed(range(self.depth - 1))):
            x = self.upsample(x)
            x = self.relu(self.up[i](x))
            x = torch.cat([x, skips[lvl]], dim=1)
            x = self.relu(self.dec1[i](x))
            x = self.relu(self.dec2[i](x))
        return self.out_conv(x)

    def interchange_tensors(self) -> dict:
        """Parameters keyed by the interchange tensor names."""
        out = {}
        for lvl in range(self.depth):
            out[f"enc{lvl}_conv1_w"] = self.enc1[lvl].weight
            out[f"enc{lvl}_conv1_b"] = self.enc1[lvl].bias
            out[f"enc{lvl}_conv2_w"] = self.enc2[lvl].weight
            out[f"enc{lvl}_conv2_b"] = self.enc2[lvl].bias
        for i, lvl in enumerate(reversed(range(self.depth - 1))):
            out[f"up{lvl}_conv_w"] = self.up[i].weight
            out[f"up{lvl}_conv_b"] = self.up[i].bias
            out[f"dec{lvl}_conv1_w"] = self.dec1[i].weight
            out[f"dec{lvl}_conv1_b"] = self.dec1[i].bias
            out[f"dec{lvl}_conv2_w"] = self.dec2[i].weight
            out[f"dec{lvl}_conv2_b"] = self.dec2[i].bias
        out["out_conv_w"] = self.out_conv.weight
        out["out_conv_b"] = self.out_conv.bias
        return out

    def load_interchange_tensors(self, tensors: dict) -> None:
        with torch.no_grad():
            for name, param in self.interchange_tensors().items():
                value = torch.as_tensor(tensors[name], dtype=param.dtype)
                if tuple(value.shape) != tuple(param.shape):
                    raise ValueError(f"tensor {name}: shape {tuple(value.shape)} "
                                     f"!= parameter {tuple(param.shape)}")
                param.copy_(value)
