"""Training-time augmentations for unit-range volumes.

Stages apply in a fixed order: flips, affine warp, ghosting, Gaussian blur,
gamma contrast.  Every stage preserves the [0,1] range (by convexity or an
explicit clip) and the volume shape.  A config with everything disabled is the
identity.  All randomness comes from the seed passed per call.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from skullsynth.volume_io import UNIT, Volume


@dataclass
class AugmentationConfig:
    flip: bool = False
    affine: bool = False
    rot_deg: float = 10.0
    scale_lo: float = 0.9
    scale_hi: float = 1.1
    shear: float = 0.05
    ghost: bool = False
    ghost_amp: float = 0.1  # additive shifted-copy amplitude, <= 0.1
    blur: bool = False
    blur_sigma_lo: float = 0.3
    blur_sigma_hi: float = 1.2
    gamma: bool = False
    gamma_lo: float = 0.7
    gamma_hi: float = 1.4

    def enabled(self):
        return self.flip or self.affine or self.ghost or self.blur or self.gamma


def _rotation(rng, max_deg):
    a, b, c = np.deg2rad(rng.uniform(-max_deg, max_deg, size=3))
    rz = np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])
    ry = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
    rx = np.array([[np.cos(c), -np.sin(c), 0], [np.sin(c), np.cos(c), 0], [0, 0, 1]])
    return rz @ ry @ rx


def _shift_zero_fill(data, axis, offset):
    out = np.zeros_like(data)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    if offset >= 0:
        dst[axis] = slice(offset, None)
        src[axis] = slice(None, data.shape[axis] - offset)
    else:
        dst[axis] = slice(None, offset)
        src[axis] = slice(-offset, None)
    out[tuple(dst)] = data[tuple(src)]
    return out


def augment(v: Volume, cfg: AugmentationConfig, seed) -> Volume:
    if v.domain != UNIT:
        raise ValueError(f"augment expects a UNIT volume, got {v.domain}")
    if not cfg.enabled():
        return Volume(v.data.copy(), v.spacing, v.domain, v.provenance)

    rng = np.random.default_rng(seed)
    data = v.data.astype(np.float64)

    if cfg.flip:
        for axis in range(3):
            if rng.random() < 0.5:
                data = np.flip(data, axis=axis)
        data = np.ascontiguousarray(data)

    if cfg.affine:
        mat = _rotation(rng, cfg.rot_deg)
        mat = mat * rng.uniform(cfg.scale_lo, cfg.scale_hi)
        shear = np.eye(3) + rng.uniform(-cfg.shear, cfg.shear, size=(3, 3)) * (1 - np.eye(3))
        mat = mat @ shear
        center = (np.array(data.shape) - 1) / 2.0
        offset = center - mat @ center
        data = ndimage.affine_transform(data, mat, offset=offset, order=1, mode="nearest")

    if cfg.ghost:
        axis = int(rng.integers(0, 3))
        max_shift = max(1, data.shape[axis] // 8)
        shift = int(rng.integers(1, max_shift + 1)) * (1 if rng.random() < 0.5 else -1)
        amp = rng.uniform(0.0, cfg.ghost_amp)
        data = np.clip(data + amp * _shift_zero_fill(data, axis, shift), 0.0, 1.0)

    if cfg.blur:
        sigma = rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi)
        data = ndimage.gaussian_filter(data, sigma=sigma, mode="nearest")

    if cfg.gamma:
        g = rng.uniform(cfg.gamma_lo, cfg.gamma_hi)
        data = np.clip(data, 0.0, 1.0) ** g

    return Volume(np.clip(data, 0.0, 1.0), v.spacing, UNIT, v.provenance)
