"""Tests for the canonical-grid preprocessing pipeline and volume files."""

from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from ctscroll.errors import VolumeError, VolumeIOError
from ctscroll.preprocess.io import read_canonical, read_rvol, write_canonical, write_rvol
from ctscroll.preprocess.pipeline import PreprocessConfig, preprocess_volume, to_canonical
from ctscroll.preprocess.volume import (
    CHANNEL_MEAN,
    CHANNEL_STD,
    TARGET_SPACING,
    CanonicalVolume,
    RawVolume,
    TripletStack,
    clip_hu,
    crop_or_pad,
    group_triplets,
    normalize,
    rescale_unit,
    resample,
    ungroup_triplets,
)


def _ramp(depth: int, side: int = 2) -> np.ndarray:
    """Slice k holds the value k everywhere."""
    return np.broadcast_to(np.arange(depth, dtype=np.float64)[:, None, None], (depth, side, side)).copy()


class TestHounsfieldWindow:

    def test_clip_to_window(self):
        vol = RawVolume(np.array([[[-2000, 500, -400]]], dtype=np.int16), TARGET_SPACING)
        assert clip_hu(vol).ravel().tolist() == [-1000.0, 200.0, -400.0]

    def test_rescale_endpoints(self):
        out = rescale_unit(np.array([-1000.0, 200.0, -400.0]))
        assert out.tolist() == pytest.approx([0.0, 1.0, 0.5])

    def test_invalid_window(self):
        vol = RawVolume(np.zeros((1, 1, 1), dtype=np.int16), TARGET_SPACING)
        with pytest.raises(VolumeError):
            clip_hu(vol, 200.0, -1000.0)
        with pytest.raises(VolumeError):
            rescale_unit(np.zeros(3), 5.0, 5.0)


class TestRawVolume:

    def test_rejects_2d(self):
        with pytest.raises(VolumeError, match="3D"):
            RawVolume(np.zeros((4, 4)), TARGET_SPACING)

    def test_rejects_bad_spacing(self):
        with pytest.raises(VolumeError):
            RawVolume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))


class TestResample:

    def test_thick_slices_double(self):
        voxels = (10 * _ramp(120, side=4)).astype(np.int16)
        out = resample(RawVolume(voxels, (3.0, 0.75, 0.75)))
        assert out.shape == (240, 4, 4)
        assert out.spacing == TARGET_SPACING
        # Output slice o samples input z = o / 2 on a linear ramp.
        expected = 5.0 * np.arange(239)
        np.testing.assert_allclose(out.voxels[:239, 1, 2], expected, atol=1e-9)

    def test_identity_when_on_target(self):
        voxels = np.arange(8, dtype=np.int16).reshape(2, 2, 2)
        out = resample(RawVolume(voxels, TARGET_SPACING))
        np.testing.assert_array_equal(out.voxels, voxels)

    def test_empty_result(self):
        with pytest.raises(VolumeError, match="empty"):
            resample(RawVolume(np.zeros((1, 1, 1)), (0.1, 0.1, 0.1)))


class TestCropOrPad:

    def test_center_crop(self):
        out = crop_or_pad(_ramp(242), (240, 2, 2))
        np.testing.assert_array_equal(out[:, 0, 0], np.arange(1, 241))

    def test_symmetric_pad(self):
        out = crop_or_pad(_ramp(238) + 1.0, (240, 2, 2))
        assert out.shape == (240, 2, 2)
        assert out[0, 0, 0] == 0.0 and out[-1, 0, 0] == 0.0
        np.testing.assert_array_equal(out[1:-1, 0, 0], np.arange(1, 239))

    def test_odd_pad_goes_high(self):
        out = crop_or_pad(np.ones((2, 2, 2)), (5, 2, 2), fill=-1.0)
        assert out[:, 0, 0].tolist() == [-1.0, 1.0, 1.0, -1.0, -1.0]

    def test_empty_grid(self):
        with pytest.raises(VolumeError):
            crop_or_pad(np.zeros((0, 2, 2)), (3, 2, 2))


class TestNormalizeAndGroup:

    def test_channel_statistics_cycle(self):
        grid = np.ones((6, 2, 2))
        out = normalize(grid)
        for k in range(6):
            c = k % 3
            assert out.voxels[k, 0, 0] == pytest.approx((1.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c])

    def test_mean_maps_to_zero(self):
        grid = np.broadcast_to(np.array(CHANNEL_MEAN)[:, None, None], (3, 2, 2))
        np.testing.assert_allclose(normalize(grid).voxels, 0.0, atol=1e-12)

    def test_triplet_k_holds_slices_3k_to_3k_plus_2(self):
        stack = group_triplets(CanonicalVolume(voxels=_ramp(12)))
        assert stack.n_triplets == 4
        for i in range(4):
            for c in range(3):
                assert np.all(stack.triplets[i, c] == 3 * i + c)

    def test_ungroup_inverts_group(self):
        volume = CanonicalVolume(voxels=np.random.default_rng(0).normal(size=(9, 3, 3)))
        np.testing.assert_array_equal(ungroup_triplets(group_triplets(volume)).voxels, volume.voxels)

    def test_indivisible_depth(self):
        with pytest.raises(VolumeError, match="divisible"):
            group_triplets(CanonicalVolume(voxels=np.zeros((7, 2, 2))))


class TestPipeline:

    def test_toy_grid_to_triplets(self):
        voxels = np.full((24, 64, 64), -1000, dtype=np.int16)
        stack = preprocess_volume(RawVolume(voxels, TARGET_SPACING), PreprocessConfig.toy())
        assert isinstance(stack, TripletStack)
        assert stack.triplets.shape == (8, 3, 64, 64)
        # Air rescales to 0, so each channel reads −mean / std.
        for c in range(3):
            assert stack.triplets[0, c, 0, 0] == pytest.approx(-CHANNEL_MEAN[c] / CHANNEL_STD[c])

    def test_padding_reads_as_air(self):
        voxels = np.full((18, 64, 64), 200, dtype=np.int16)
        canonical = to_canonical(RawVolume(voxels, TARGET_SPACING), PreprocessConfig.toy())
        assert canonical.shape == (24, 64, 64)
        assert canonical.voxels[0, 0, 0] == pytest.approx(-CHANNEL_MEAN[0] / CHANNEL_STD[0])
        assert canonical.voxels[3, 0, 0] == pytest.approx((1.0 - CHANNEL_MEAN[0]) / CHANNEL_STD[0])

    def test_config_rejects_indivisible_shape(self):
        with pytest.raises(ValidationError):
            PreprocessConfig(target_shape=(25, 64, 64))

    def test_config_rejects_inverted_window(self):
        with pytest.raises(ValidationError):
            PreprocessConfig(hu_window=(200.0, -1000.0))


class TestVolumeFiles:

    def test_rvol_round_trip(self, tmp_path):
        voxels = np.random.default_rng(0).integers(-1000, 1000, size=(3, 4, 5)).astype(np.int16)
        path = write_rvol(RawVolume(voxels, (2.0, 0.5, 0.5)), tmp_path / "vol.json")
        assert (tmp_path / "vol.bin").stat().st_size == voxels.size * 2
        loaded = read_rvol(path)
        np.testing.assert_array_equal(loaded.voxels, voxels)
        assert loaded.spacing == (2.0, 0.5, 0.5)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(VolumeIOError, match="not found"):
            read_rvol(tmp_path / "absent.json")

    def test_truncated_blob(self, tmp_path):
        path = write_rvol(RawVolume(np.zeros((2, 2, 2), dtype=np.int16), TARGET_SPACING), tmp_path / "v.json")
        (tmp_path / "v.bin").write_bytes(b"\x00" * 6)
        with pytest.raises(VolumeIOError, match="voxels"):
            read_rvol(path)

    def test_canonical_dump(self, tmp_path):
        volume = CanonicalVolume(voxels=np.linspace(-1, 1, 27).reshape(3, 3, 3))
        path = write_canonical(volume, tmp_path / "c.f32")
        assert (tmp_path / "c.json").exists()
        loaded = read_canonical(path)
        np.testing.assert_allclose(loaded.voxels, volume.voxels, rtol=1e-6)
        assert loaded.normalization["mean"] == CHANNEL_MEAN

    def test_corrupt_canonical_sidecar(self, tmp_path):
        path = write_canonical(CanonicalVolume(voxels=np.zeros((3, 2, 2))), tmp_path / "c.f32")
        (tmp_path / "c.json").write_text("{not json")
        with pytest.raises(VolumeIOError, match="Unreadable"):
            read_canonical(path)

    def test_canonical_shape_mismatch(self, tmp_path):
        path = write_canonical(CanonicalVolume(voxels=np.zeros((3, 2, 2))), tmp_path / "c.f32")
        (tmp_path / "c.json").write_text('{"shape": [5, 5, 5]}')
        with pytest.raises(VolumeIOError, match="Unreadable"):
            read_canonical(path)
