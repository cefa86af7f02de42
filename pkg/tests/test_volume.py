import struct

import numpy as np
import pytest

from tpcinr.errors import FormatError
from tpcinr.volume import (
    ADC_MAX,
    INRV_MAGIC,
    SynthConfig,
    Volume3D,
    coords_for,
    denormalize_value,
    denormalize_values,
    downsample,
    grid_coords,
    is_zero_suppressed,
    load_volume,
    normalize_coords,
    normalize_value,
    occupancy,
    resuppress,
    save_volume,
    synth_tracks,
)

# ============================================================================
# VOLUME3D
# ============================================================================


class TestVolume3D:
    """Test construction, validation and indexing of Volume3D."""

    def test_values_flattened_and_read_only(self):
        grid = np.arange(24, dtype=np.uint16).reshape(2, 3, 4)
        v = Volume3D((2, 3, 4), grid)

        assert v.values.shape == (24,)
        assert v.values.dtype == np.uint16
        with pytest.raises(ValueError):
            v.values[0] = 5

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="does not match dims"):
            Volume3D((2, 2, 2), np.zeros(7))

    def test_value_above_adc_max_rejected(self):
        with pytest.raises(ValueError, match="ADC values"):
            Volume3D((1, 1, 2), np.array([0, ADC_MAX + 1]))

    def test_zero_axis_rejected(self):
        with pytest.raises(ValueError, match="at least 1"):
            Volume3D.zeros((4, 0, 2))

    def test_flat_index_is_row_major(self):
        v = Volume3D.zeros((4, 5, 6))

        assert v.flat_index((1, 2, 3)) == (1 * 5 + 2) * 6 + 3
        assert v.unravel_index(45) == (1, 2, 3)

    def test_grid_view_matches_values(self, sparse_volume):
        assert sparse_volume.grid()[3, 3, 2] == sparse_volume.values[sparse_volume.flat_index((3, 3, 2))]

    def test_equality_compares_content(self, sparse_volume):
        same = Volume3D(sparse_volume.dims, sparse_volume.values.copy())

        assert same == sparse_volume
        assert Volume3D.zeros(sparse_volume.dims) != sparse_volume


# ============================================================================
# INRV I/O
# ============================================================================


class TestInrvFormat:
    """Test INRV save/load and rejection of malformed files."""

    def test_round_trip_bit_exact(self, sparse_volume, tmp_path):
        path = tmp_path / "v.inrv"
        save_volume(sparse_volume, path)

        assert load_volume(path) == sparse_volume

    def test_file_layout(self, sparse_volume, tmp_path):
        """Test 20-byte header followed by little-endian u16 values."""
        path = tmp_path / "v.inrv"
        save_volume(sparse_volume, path)
        data = path.read_bytes()

        assert len(data) == 20 + 2 * sparse_volume.size
        assert struct.unpack_from("<4sIIII", data) == (INRV_MAGIC, 1, 8, 8, 4)

    def test_random_volumes_round_trip(self, rng, tmp_path):
        path = tmp_path / "r.inrv"
        for _ in range(1000):
            dims = tuple(int(d) for d in rng.integers(1, 9, size=3))
            v = Volume3D(dims, rng.integers(0, ADC_MAX + 1, size=int(np.prod(dims))))
            save_volume(v, path)
            assert load_volume(path) == v

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_volume(tmp_path / "absent.inrv")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.inrv"
        path.write_bytes(struct.pack("<4sIIII", b"XXXX", 1, 1, 1, 1) + b"\x00\x00")

        with pytest.raises(FormatError, match="Bad magic"):
            load_volume(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v2.inrv"
        path.write_bytes(struct.pack("<4sIIII", INRV_MAGIC, 2, 1, 1, 1) + b"\x00\x00")

        with pytest.raises(FormatError, match="version"):
            load_volume(path)

    def test_payload_length_mismatch(self, tmp_path):
        path = tmp_path / "short.inrv"
        path.write_bytes(struct.pack("<4sIIII", INRV_MAGIC, 1, 2, 2, 2) + b"\x00" * 10)

        with pytest.raises(FormatError, match="payload length mismatch"):
            load_volume(path)

    def test_value_above_1023(self, tmp_path):
        path = tmp_path / "hot.inrv"
        path.write_bytes(struct.pack("<4sIIII", INRV_MAGIC, 1, 1, 1, 1) + struct.pack("<H", 1024))

        with pytest.raises(FormatError, match="above 1023"):
            load_volume(path)


# ============================================================================
# NORMALIZATION
# ============================================================================


class TestNormalization:
    """Test coordinate and value normalization."""

    def test_normalize_coords_endpoints(self):
        assert normalize_coords((0, 124, 15), (192, 249, 16)).x == (-1.0, 0.0, 1.0)
        assert normalize_coords((191, 0, 0), (192, 249, 16)).x[0] == 1.0

    def test_size_one_axis_maps_to_zero(self):
        assert normalize_coords((0, 0, 0), (1, 5, 1)).x == (0.0, -1.0, 0.0)

    def test_out_of_range_index(self):
        with pytest.raises(ValueError, match="out of range"):
            normalize_coords((2, 0, 0), (2, 2, 2))

    def test_grid_coords_match_normalize_coords(self):
        dims = (3, 4, 2)
        coords = grid_coords(dims)
        v = Volume3D.zeros(dims)

        assert coords.shape == (24, 3)
        for flat in (0, 7, 23):
            expected = normalize_coords(v.unravel_index(flat), dims).x
            np.testing.assert_array_equal(coords[flat], expected)

    def test_coords_for_matches_grid(self):
        dims = (5, 3, 4)
        indices = np.array([0, 11, 59, 11])

        np.testing.assert_array_equal(coords_for(dims, indices), grid_coords(dims)[indices])

    def test_coords_for_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            coords_for((2, 2, 2), np.array([8]))

    def test_value_normalization(self):
        assert normalize_value(0) == 0.0
        assert normalize_value(ADC_MAX) == 1.0
        with pytest.raises(ValueError):
            normalize_value(1024)

    def test_denormalize_rounds_half_even_and_clamps(self):
        assert denormalize_value(511.5 / ADC_MAX) == 512
        assert denormalize_value(-0.2) == 0
        assert denormalize_value(1.7) == ADC_MAX

    def test_denormalize_values_handles_non_finite(self):
        out = denormalize_values(np.array([np.nan, np.inf, -np.inf, 0.5]))

        np.testing.assert_array_equal(out, [0, ADC_MAX, 0, 512])


# ============================================================================
# STATISTICS AND RESAMPLING
# ============================================================================


class TestStatistics:
    """Test occupancy, zero suppression and downsampling."""

    def test_occupancy(self, sparse_volume):
        assert occupancy(sparse_volume) == 7 / 256

    def test_zero_suppression_check(self, sparse_volume):
        assert is_zero_suppressed(sparse_volume)

        values = sparse_volume.values.copy()
        values[0] = 10
        assert not is_zero_suppressed(Volume3D(sparse_volume.dims, values))

    def test_resuppress_zeroes_low_values(self):
        v = Volume3D((1, 1, 4), np.array([0, 63, 64, 900]))

        np.testing.assert_array_equal(resuppress(v).values, [0, 0, 64, 900])

    def test_downsample_dims(self):
        assert downsample(Volume3D.zeros((192, 249, 16)), (2, 2, 1)).dims == (96, 125, 16)
        assert downsample(Volume3D.zeros((5, 5, 3)), (2, 2, 2)).dims == (3, 3, 2)

    def test_downsample_keeps_strided_values(self, rng):
        grid = rng.integers(0, ADC_MAX + 1, size=(6, 7, 4))
        v = Volume3D(grid.shape, grid)

        kept = downsample(v, (2, 3, 2))

        np.testing.assert_array_equal(kept.grid(), grid[::2, ::3, ::2])

    def test_downsample_identity(self, sparse_volume):
        assert downsample(sparse_volume, (1, 1, 1)) == sparse_volume

    def test_downsample_rejects_bad_factors(self, sparse_volume):
        with pytest.raises(ValueError):
            downsample(sparse_volume, (0, 1, 1))


# ============================================================================
# SYNTHETIC TRACKS
# ============================================================================


class TestSynthTracks:
    """Test the synthetic sparse-track generator."""

    def test_deterministic(self, small_synth_config):
        assert synth_tracks(small_synth_config) == synth_tracks(small_synth_config)

    def test_seed_changes_output(self, small_synth_config):
        other = SynthConfig(
            dims=small_synth_config.dims,
            n_tracks=small_synth_config.n_tracks,
            target_occupancy=small_synth_config.target_occupancy,
            seed=2,
        )

        assert synth_tracks(other) != synth_tracks(small_synth_config)

    def test_occupancy_band_and_suppression(self):
        cfg = SynthConfig(dims=(48, 64, 8), n_tracks=20, target_occupancy=0.01, seed=7)

        v = synth_tracks(cfg)

        assert 0.005 <= occupancy(v) <= 0.02
        assert is_zero_suppressed(v)
        assert int(v.values.max()) <= ADC_MAX

    @pytest.mark.parametrize(
        ("dims", "target", "seed"),
        [
            ((48, 64, 8), 1e-4, 7),
            ((96, 125, 16), 1e-5, 0),
            ((48, 64, 8), 1e-3, 7),
            ((16, 20, 4), 0.01, 5),
        ],
    )
    def test_low_occupancy_stays_in_band(self, dims, target, seed):
        v = synth_tracks(SynthConfig(dims=dims, n_tracks=20, target_occupancy=target, seed=seed))

        assert target / 2 <= occupancy(v) <= 2 * target
        assert is_zero_suppressed(v)

    def test_band_without_whole_cell_count_unreachable(self):
        # 64 cells at 1e-3 would need between 0.032 and 0.128 occupied cells
        with pytest.raises(ValueError, match="unreachable"):
            synth_tracks(SynthConfig(dims=(4, 4, 4), n_tracks=3, target_occupancy=1e-3))

    def test_intensity_range_respected(self):
        cfg = SynthConfig(
            dims=(24, 24, 6), n_tracks=4, target_occupancy=0.02, intensity_range=(100, 400), seed=3
        )

        nonzero = synth_tracks(cfg).values
        nonzero = nonzero[nonzero > 0]

        assert nonzero.min() >= 100
        assert nonzero.max() <= 400

    def test_zero_tracks_gives_empty_volume(self):
        v = synth_tracks(SynthConfig(dims=(4, 4, 4), n_tracks=0, target_occupancy=0.1))

        assert occupancy(v) == 0.0

    def test_zero_tracks_full_occupancy_unreachable(self):
        with pytest.raises(ValueError, match="unreachable"):
            synth_tracks(SynthConfig(dims=(4, 4, 4), n_tracks=0, target_occupancy=1.0))

    def test_full_occupancy_unreachable_with_one_track(self):
        with pytest.raises(ValueError, match="unreachable"):
            synth_tracks(SynthConfig(dims=(400, 400, 1), n_tracks=1, target_occupancy=1.0))

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"intensity_range": (10, 500)},
            {"intensity_range": (64, 2000)},
            {"intensity_range": (500, 100)},
            {"target_occupancy": 0.0},
            {"target_occupancy": 1.5},
            {"n_tracks": -1},
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            SynthConfig(**kwargs)
