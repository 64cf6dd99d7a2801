"""Deterministic synthetic skull fixtures: paired pseudo-MR, pseudo-CT, truth mask.

The skull is an ellipsoidal shell (outer ellipsoid minus a concentric inner
one); the brain is the interior ellipsoid.  Intensities straddle the bone
threshold with a wide margin so segmentation acceptance never hinges on
threshold tuning: CT shell ~1400 HU, interior ~30 HU, exterior -1000 HU.
The MR-like view inverts the contrast (dark shell, bright brain).

An optional spherical defect removes shell voxels from all three outputs
consistently; removed voxels take the interior (soft-tissue) intensity.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from skullsynth.volume_io import HU, UNIT, SegmentationMask, Volume

MR_EXTERIOR = 0.15
MR_SHELL = 0.05
MR_BRAIN = 0.85
CT_EXTERIOR = -1000.0
CT_BRAIN = 30.0
CT_SHELL = 1400.0


@dataclass
class PhantomSpec:
    shape: tuple = (32, 32, 32)
    center: Optional[tuple] = None  # defaults to the volume center
    semi_axes: Optional[tuple] = None  # defaults to 0.38 * shape
    thickness: float = 2.0  # shell thickness in voxels
    noise_sigma_mr: float = 0.0  # unit-scale sigma
    noise_sigma_ct: float = 0.0  # HU-scale sigma
    spacing: tuple = (1.0, 1.0, 1.0)
    defect_center: Optional[tuple] = None
    defect_radius: float = 0.0
    seed: int = 0


def _ellipsoid(shape, center, semi_axes):
    zz, yy, xx = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    q = (
        ((zz - center[0]) / semi_axes[0]) ** 2
        + ((yy - center[1]) / semi_axes[1]) ** 2
        + ((xx - center[2]) / semi_axes[2]) ** 2
    )
    return q <= 1.0


def _regions(spec):
    shape = tuple(int(n) for n in spec.shape)
    center = spec.center or tuple((n - 1) / 2.0 for n in shape)
    semi = spec.semi_axes or tuple(0.38 * n for n in shape)
    if any(c - s < -0.5 or c + s > n - 0.5 for c, s, n in zip(center, semi, shape)):
        raise ValueError(f"shell exceeds bounds: center {center}, semi-axes {semi}, shape {shape}")
    inner_semi = tuple(max(s - spec.thickness, 0.5) for s in semi)
    outer = _ellipsoid(shape, center, semi)
    inner = _ellipsoid(shape, center, inner_semi)
    shell = outer & ~inner
    removed = np.zeros_like(shell)
    if spec.defect_radius > 0:
        dc = spec.defect_center or (center[0] - semi[0], center[1], center[2])
        zz, yy, xx = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
        sphere = (zz - dc[0]) ** 2 + (yy - dc[1]) ** 2 + (xx - dc[2]) ** 2 <= spec.defect_radius**2
        removed = shell & sphere
        shell = shell & ~sphere
    return shell, inner, removed


def make_phantom(spec: PhantomSpec):
    """Build the (mr_like, ct_like, mask) triplet; deterministic for a fixed seed."""
    shell, brain, removed = _regions(spec)
    shape = shell.shape

    mr = np.full(shape, MR_EXTERIOR, dtype=np.float64)
    mr[brain] = MR_BRAIN
    mr[shell] = MR_SHELL
    mr[removed] = MR_BRAIN  # defect exposes soft tissue, not air
    ct = np.full(shape, CT_EXTERIOR, dtype=np.float64)
    ct[brain] = CT_BRAIN
    ct[shell] = CT_SHELL
    ct[removed] = CT_BRAIN

    rng = np.random.default_rng(np.random.SeedSequence((int(spec.seed), 0x70AA)))
    if spec.noise_sigma_mr > 0:
        mr = np.clip(mr + rng.normal(0.0, spec.noise_sigma_mr, shape), 0.0, 1.0)
    if spec.noise_sigma_ct > 0:
        ct = ct + rng.normal(0.0, spec.noise_sigma_ct, shape)

    mr_vol = Volume(mr, spec.spacing, UNIT, provenance=f"phantom(seed={spec.seed})")
    ct_vol = Volume(ct, spec.spacing, HU, provenance=f"phantom(seed={spec.seed})")
    mask = SegmentationMask(shell.astype(np.uint8), spec.spacing)
    return mr_vol, ct_vol, mask


def make_defect_phantom(spec: PhantomSpec):
    """Phantom with a spherical hole punched through the shell."""
    if spec.defect_radius <= 0:
        raise ValueError("defect phantom needs defect_radius > 0")
    return make_phantom(spec)
