"""Dice, surface Dice, and PSNR against hand-computed cases."""

import numpy as np
import pytest

from skullsynth.metrics import dice, psnr, surface_dice
from skullsynth.volume_io import SegmentationMask


def mask_of(data):
    return SegmentationMask(np.asarray(data, dtype=np.uint8), (1, 1, 1))


def box(shape, sl):
    m = np.zeros(shape, dtype=np.uint8)
    m[sl] = 1
    return m


class TestDice:
    def test_hand_computed_overlap(self):
        a = box((6, 6, 6), np.s_[1:3, 1:3, 1:3])  # 8 voxels
        b = box((6, 6, 6), np.s_[2:4, 1:3, 1:3])  # 8 voxels, 4 shared
        assert dice(a, b) == pytest.approx(2 * 4 / 16)

    def test_identical_and_disjoint(self):
        a = box((5, 5, 5), np.s_[0:2, 0:2, 0:2])
        assert dice(a, a) == 1.0
        assert dice(a, box((5, 5, 5), np.s_[3:5, 3:5, 3:5])) == 0.0

    def test_empty_conventions(self):
        empty = np.zeros((4, 4, 4), dtype=np.uint8)
        assert dice(empty, empty) == 1.0
        assert dice(empty, box((4, 4, 4), np.s_[0:1, 0:1, 0:1])) == 0.0

    def test_accepts_masks_and_arrays(self):
        a = box((4, 4, 4), np.s_[1:3, 1:3, 1:3])
        assert dice(mask_of(a), a) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            dice(np.zeros((3, 3, 3)), np.zeros((3, 3, 4)))

    def test_symmetry(self, rng):
        a = (rng.random((7, 7, 7)) < 0.4).astype(np.uint8)
        b = (rng.random((7, 7, 7)) < 0.4).astype(np.uint8)
        assert dice(a, b) == dice(b, a)


class TestSurfaceDice:
    def test_identical_masks(self):
        a = box((8, 8, 8), np.s_[2:6, 2:6, 2:6])
        assert surface_dice(a, a, 0.0) == 1.0

    def test_parallel_plates_tolerance_boundary(self):
        # 1-voxel plates 2 mm apart: inside tolerance at 2, outside at 1.9
        a = box((9, 9, 9), np.s_[2:3, :, :])
        b = box((9, 9, 9), np.s_[4:5, :, :])
        assert surface_dice(a, b, 2.0) == 1.0
        assert surface_dice(a, b, 1.9) == 0.0

    def test_spacing_scales_distance(self):
        a = box((9, 5, 5), np.s_[2:3, :, :])
        b = box((9, 5, 5), np.s_[4:5, :, :])
        # same two plates at 0.5 mm z-spacing sit 1 mm apart
        assert surface_dice(a, b, 1.0, spacing=(0.5, 1.0, 1.0)) == 1.0
        assert surface_dice(a, b, 0.9, spacing=(0.5, 1.0, 1.0)) == 0.0

    def test_interior_voxels_do_not_count(self):
        # solid cube vs the same cube with its core removed: boundaries match
        solid = box((9, 9, 9), np.s_[2:7, 2:7, 2:7])
        hollow = solid.copy()
        hollow[3:6, 3:6, 3:6] = 0
        assert surface_dice(solid, solid, 0.0) == 1.0
        # hollow adds an inner boundary the solid lacks; at tol 1 every inner
        # surface voxel is within one voxel of the outer shell
        assert surface_dice(solid, hollow, 1.0) == 1.0

    def test_empty_conventions(self):
        empty = np.zeros((5, 5, 5), dtype=np.uint8)
        a = box((5, 5, 5), np.s_[1:4, 1:4, 1:4])
        assert surface_dice(empty, empty, 1.0) == 1.0
        assert surface_dice(a, empty, 1.0) == 0.0

    def test_partial_overlap_fraction(self):
        # two 1-voxel plates sharing half their extent, tolerance 0:
        # exactly the shared voxels of each boundary match
        a = np.zeros((3, 4, 4), dtype=np.uint8)
        b = np.zeros((3, 4, 4), dtype=np.uint8)
        a[1, :, 0:2] = 1
        b[1, :, 1:3] = 1
        got = surface_dice(a, b, 0.0)
        assert got == pytest.approx(2 * 4 / (8 + 8))

    def test_symmetry(self, rng):
        a = (rng.random((8, 8, 8)) < 0.35).astype(np.uint8)
        b = (rng.random((8, 8, 8)) < 0.35).astype(np.uint8)
        assert surface_dice(a, b, 1.0) == surface_dice(b, a, 1.0)

    def test_negative_tolerance_rejected(self):
        with pytest.raises(ValueError):
            surface_dice(np.zeros((3, 3, 3)), np.zeros((3, 3, 3)), -0.5)


class TestPSNR:
    def test_constant_offset_frozen_value(self):
        a = np.zeros((4, 4, 4))
        b = np.full((4, 4, 4), 0.1)
        assert psnr(a, b, peak=1.0) == pytest.approx(20.0)

    def test_peak_shifts_by_constant(self):
        a = np.zeros((4, 4, 4))
        b = np.full((4, 4, 4), 0.1)
        assert psnr(a, b, peak=2.0) == pytest.approx(20.0 + 20.0 * np.log10(2.0))

    def test_identical_is_infinite(self, rng):
        a = rng.random((5, 5, 5))
        assert psnr(a, a.copy()) == float("inf")

    def test_symmetry_and_shapes(self, rng):
        a, b = rng.random((4, 4, 4)), rng.random((4, 4, 4))
        assert psnr(a, b) == psnr(b, a)
        with pytest.raises(ValueError, match="shape mismatch"):
            psnr(a, rng.random((4, 4, 5)))

    def test_lower_noise_means_higher_psnr(self, rng):
        a = rng.random((6, 6, 6))
        assert psnr(a, a + 0.01) > psnr(a, a + 0.1)
