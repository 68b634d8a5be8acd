"""Paired geometric augmentation, redrawn every epoch.

Random horizontal/vertical flips (p = 0.5 each), rotation uniform in
+/-45 degrees, and height/width position shifts up to 25%, fill value 0.
Value planes and targets are resampled bilinearly; the binary mask plane is
resampled nearest-neighbor and re-binarized at 0.5 so the input invariants
survive the transform. Inputs and targets receive the identical transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torchvision.transforms import InterpolationMode
from torchvision.transforms.functional import affine, hflip, vflip


@dataclass(frozen=True)
class AugmentationPolicy:
    flip_probability: float = 0.5
    max_rotation_deg: float = 45.0
    max_shift_fraction: float = 0.25
    fill_value: float = 0.0


def augment_pair(inputs: torch.Tensor, target: torch.Tensor,
                 rng: np.random.Generator,
                 policy: AugmentationPolicy = AugmentationPolicy()
                 ) -> tuple[torch.Tensor, torch.Tensor]:
    """inputs (3, H, W), target (1, H, W) -> transformed copies."""
    h, w = inputs.shape[-2:]
    do_h = rng.uniform() < policy.flip_probability
    do_v = rng.uniform() < policy.flip_probability
    angle = float(rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg))
    dy = float(rng.uniform(-policy.max_shift_fraction, policy.max_shift_fraction) * h)
    dx = float(rng.uniform(-policy.max_shift_fraction, policy.max_shift_fraction) * w)

    def tf(plane: torch.Tensor, mode: InterpolationMode) -> torch.Tensor:
        x = plane.unsqueeze(0) if plane.ndim == 2 else plane
        if do_h:
            x = hflip(x)
        if do_v:
            x = vflip(x)
        x = affine(x, angle=angle, translate=[dx, dy], scale=1.0, shear=[0.0],
                   interpolation=mode, fill=policy.fill_value)
        return x

    values = tf(inputs[:2], InterpolationMode.BILINEAR)
    mask = tf(inputs[2:3], InterpolationMode.NEAREST)
    mask = (mask >= 0.5).to(inputs.dtype)
    # plane invariants: value planes stay consistent with the moved mask
    recon_t = values[0:1] * (1.0 - mask)
    measured_s = values[1:2] * mask
    new_inputs = torch.cat([recon_t, measured_s, mask], dim=0)
    new_target = tf(target, InterpolationMode.BILINEAR)
    return new_inputs, new_target
