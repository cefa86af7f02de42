import math
import struct

import numpy as np
import pytest

from tpcinr.codec import (
    INRC_MAGIC,
    CompressedArtifact,
    Precision,
    compress,
    compression_ratio,
    decompress,
    deserialize,
    error_map,
    from_bytes,
    raw_bytes,
    serialize,
    to_bytes,
)
from tpcinr.errors import FormatError
from tpcinr.models import ModelKind, ModelSpec, build_model, eval_model
from tpcinr.train import TrainConfig, train
from tpcinr.volume import ADC_MAX, Volume3D, denormalize_values, downsample, grid_coords

DEFAULT_HEADER_BYTES = 102
# Offset of the weight-count field for a three-hidden-layer spec
WEIGHT_COUNT_OFFSET = 22 + 12 + 36 + 24


def artifact_for(kind: ModelKind, precision: Precision = Precision.FP32, **spec_kwargs) -> CompressedArtifact:
    spec = ModelSpec.default(kind, **spec_kwargs)
    return CompressedArtifact.from_model(build_model(spec), precision, source_dims=(8, 8, 4))


@pytest.fixture
def siren_artifact() -> CompressedArtifact:
    return artifact_for(ModelKind.SIREN, width=8, depth=3, init_seed=1)


# ============================================================================
# ARTIFACT
# ============================================================================


class TestCompressedArtifact:
    """Test packaging of trained models."""

    def test_from_model_quantizes_and_canonicalizes(self):
        spec = ModelSpec.default(ModelKind.SIREN, width=8, depth=2, init_seed=7, wire_s0=2.0)
        model = build_model(spec)

        artifact = CompressedArtifact.from_model(model, Precision.FP32)

        assert artifact.spec == spec.canonical()
        assert artifact.weights.dtype == np.dtype("<f4")
        assert artifact.weight_count == spec.parameter_count()
        np.testing.assert_array_equal(artifact.weights[:24], model.layers[0].W.reshape(-1).astype(np.float32))

    def test_model_rebuilds_layers(self, siren_artifact):
        model = siren_artifact.model()

        assert [layer.W.shape for layer in model.layers] == [(8, 3), (8, 8), (8, 8), (1, 8)]
        assert model.layers[0].W.dtype == np.float64

    def test_ffnet_keeps_frequency_matrix(self):
        artifact = artifact_for(ModelKind.FFNET, width=8, depth=1, ffnet_features=4, ffnet_seed=3)

        assert artifact.fourier_B.shape == (4, 3)
        assert artifact.fourier_B.dtype == np.dtype("<f4")
        assert artifact.model().fourier_B is not None

    def test_fp16_precision(self):
        artifact = artifact_for(ModelKind.SIREN, Precision.FP16, width=8, depth=2)

        assert artifact.weights.dtype == np.dtype("<f2")

    def test_weight_count_validated(self):
        spec = ModelSpec.default(ModelKind.MLP, width=4, depth=1)

        with pytest.raises(ValueError, match="weight count"):
            CompressedArtifact(spec=spec, weights=np.zeros(3))

    def test_frequency_matrix_required_for_ffnet(self):
        spec = ModelSpec.default(ModelKind.FFNET, width=4, depth=1, ffnet_features=2)

        with pytest.raises(ValueError, match="fourier_B"):
            CompressedArtifact(spec=spec, weights=np.zeros(spec.parameter_count()))

    def test_unknown_precision_code(self):
        with pytest.raises(FormatError):
            Precision.from_code(7)


# ============================================================================
# INRC SERIALIZATION
# ============================================================================


class TestInrcFormat:
    """Test the INRC layout and rejection of corrupted buffers."""

    def test_default_siren_size(self):
        fp32 = artifact_for(ModelKind.SIREN)
        fp16 = artifact_for(ModelKind.SIREN, Precision.FP16)

        assert len(to_bytes(fp32)) == DEFAULT_HEADER_BYTES + 33665 * 4
        assert len(to_bytes(fp16)) == DEFAULT_HEADER_BYTES + 33665 * 2

    def test_header_fields(self, siren_artifact):
        data = to_bytes(siren_artifact)

        magic, version, kind, precision, in_dim, out_dim, n_hidden = struct.unpack_from("<4sIBBIII", data)

        assert (magic, version, kind, precision) == (INRC_MAGIC, 1, 2, 0)
        assert (in_dim, out_dim, n_hidden) == (3, 1, 3)
        assert struct.unpack_from("<3I", data, 22) == (8, 8, 8)
        assert struct.unpack_from("<Q", data, WEIGHT_COUNT_OFFSET)[0] == siren_artifact.weight_count

    @pytest.mark.parametrize("kind", list(ModelKind))
    @pytest.mark.parametrize("precision", list(Precision))
    def test_round_trip_bit_exact(self, kind, precision, tmp_path):
        artifact = artifact_for(kind, precision, width=6, depth=2, ffnet_features=5, ffnet_seed=2, init_seed=4)
        path = tmp_path / "a.inrc"

        serialize(artifact, path)
        restored = deserialize(path)

        assert restored == artifact
        assert restored.spec == artifact.spec
        assert path.read_bytes() == to_bytes(restored)

    def test_random_artifacts_round_trip(self):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            kind = list(ModelKind)[int(rng.integers(len(ModelKind)))]
            hidden = tuple(int(d) for d in rng.integers(1, 6, size=int(rng.integers(1, 4))))
            spec = ModelSpec(
                kind=kind,
                hidden_dims=hidden,
                siren_omega0=float(rng.uniform(1, 40)),
                ffnet_features=int(rng.integers(1, 6)),
                ffnet_sigma=float(rng.uniform(0.5, 20)),
                ffnet_seed=int(rng.integers(0, 2**40)),
                wire_omega0=float(rng.uniform(1, 40)),
                wire_s0=float(rng.uniform(1, 20)),
            ).canonical()
            fourier_B = rng.normal(size=(spec.ffnet_features, 3)) if kind is ModelKind.FFNET else None
            artifact = CompressedArtifact(
                spec=spec,
                weights=rng.normal(size=spec.parameter_count()),
                precision=list(Precision)[int(rng.integers(2))],
                source_dims=tuple(int(d) for d in rng.integers(1, 300, size=3)),
                downsample_factors=tuple(int(d) for d in rng.integers(1, 5, size=3)),
                fourier_B=fourier_B,
            )

            restored = from_bytes(to_bytes(artifact))

            assert to_bytes(restored) == to_bytes(artifact)
            assert restored.spec == artifact.spec
            assert restored.source_dims == artifact.source_dims
            assert restored.downsample_factors == artifact.downsample_factors

    def test_bad_magic(self, siren_artifact):
        data = b"XXXX" + to_bytes(siren_artifact)[4:]

        with pytest.raises(FormatError, match="Bad magic"):
            from_bytes(data)

    def test_unsupported_version(self, siren_artifact):
        data = bytearray(to_bytes(siren_artifact))
        struct.pack_into("<I", data, 4, 2)

        with pytest.raises(FormatError, match="version"):
            from_bytes(bytes(data))

    def test_unknown_kind(self, siren_artifact):
        data = bytearray(to_bytes(siren_artifact))
        data[8] = 9

        with pytest.raises(FormatError, match="kind"):
            from_bytes(bytes(data))

    def test_unknown_precision(self, siren_artifact):
        data = bytearray(to_bytes(siren_artifact))
        data[9] = 4

        with pytest.raises(FormatError, match="precision"):
            from_bytes(bytes(data))

    def test_weight_count_mismatch(self, siren_artifact):
        data = bytearray(to_bytes(siren_artifact))
        struct.pack_into("<Q", data, WEIGHT_COUNT_OFFSET, siren_artifact.weight_count + 1)

        with pytest.raises(FormatError, match="weight-count mismatch"):
            from_bytes(bytes(data))

    def test_truncated(self, siren_artifact):
        data = to_bytes(siren_artifact)

        with pytest.raises(FormatError, match="Truncated"):
            from_bytes(data[:-3])
        with pytest.raises(FormatError, match="Truncated"):
            from_bytes(data[:10])

    def test_trailing_bytes(self, siren_artifact):
        with pytest.raises(FormatError, match="payload length mismatch"):
            from_bytes(to_bytes(siren_artifact) + b"\x00")

    def test_deserialize_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            deserialize(tmp_path / "absent.inrc")


# ============================================================================
# COMPRESSION ACCOUNTING
# ============================================================================


class TestCompressionRatio:
    def test_raw_bytes(self):
        assert raw_bytes((192, 249, 16)) == 1_529_856

    def test_ratio_matches_file_size(self, tmp_path):
        artifact = CompressedArtifact.from_model(
            build_model(ModelSpec()), Precision.FP32, source_dims=(192, 249, 16)
        )
        path = tmp_path / "default.inrc"
        serialize(artifact, path)

        assert path.stat().st_size == 134_762
        assert compression_ratio(artifact) == 1_529_856 / path.stat().st_size

    def test_fp16_roughly_doubles_ratio(self):
        model = build_model(ModelSpec())
        fp32 = CompressedArtifact.from_model(model, Precision.FP32, source_dims=(192, 249, 16))
        fp16 = CompressedArtifact.from_model(model, Precision.FP16, source_dims=(192, 249, 16))

        assert compression_ratio(fp16) / compression_ratio(fp32) == pytest.approx(2.0, rel=0.05)

    def test_ratio_increases_as_width_decreases(self):
        ratios = [
            compression_ratio(artifact_for(ModelKind.SIREN, width=w, depth=3)) for w in (64, 32, 16, 8)
        ]

        assert ratios == sorted(ratios)
        assert len(set(ratios)) == len(ratios)


# ============================================================================
# DECODE AND EVALUATION
# ============================================================================


class TestDecompress:
    """Test decoding on arbitrary grids."""

    def test_defaults_to_source_dims(self, siren_artifact):
        assert decompress(siren_artifact).dims == (8, 8, 4)

    def test_matches_model_on_training_grid(self, siren_artifact):
        decoded = decompress(siren_artifact)
        expected = denormalize_values(eval_model(siren_artifact.model(), grid_coords((8, 8, 4))))

        np.testing.assert_array_equal(decoded.values, expected)

    def test_arbitrary_target_dims(self, siren_artifact):
        assert decompress(siren_artifact, (5, 11, 3)).dims == (5, 11, 3)

    def test_parallel_chunks_match_serial(self, siren_artifact):
        serial = decompress(siren_artifact, (16, 16, 8), chunk_size=100)
        parallel = decompress(siren_artifact, (16, 16, 8), chunk_size=100, max_workers=4)

        assert parallel == serial

    def test_resolution_consistency_unit_factor(self, siren_artifact):
        decoded = decompress(siren_artifact, (8, 8, 4))

        assert downsample(decoded, (1, 1, 1)) == decoded

    def test_resolution_consistency_where_grids_align(self, siren_artifact):
        """Every other cell of a (9, 9, 5) decode sits on the (5, 5, 3) grid."""
        # One cell per chunk gives both decodes the same matmul shape for every
        # cell, so shared coordinates decode to identical counts.
        fine = decompress(siren_artifact, (9, 9, 5), chunk_size=1)
        coarse = decompress(siren_artifact, (5, 5, 3), chunk_size=1)

        shared = grid_coords((9, 9, 5)).reshape(9, 9, 5, 3)[::2, ::2, ::2].reshape(-1, 3)
        np.testing.assert_array_equal(shared, grid_coords((5, 5, 3)))
        assert downsample(fine, (2, 2, 2)) == coarse

    def test_resuppress(self, siren_artifact):
        decoded = decompress(siren_artifact, resuppress=True)

        assert np.all((decoded.values == 0) | (decoded.values >= 64))

    def test_rejects_bad_chunking(self, siren_artifact):
        with pytest.raises(ValueError):
            decompress(siren_artifact, chunk_size=0)


class TestErrorMap:
    """Test error volumes and summary metrics."""

    def test_identical_volumes(self, sparse_volume):
        report = error_map(sparse_volume, sparse_volume)

        assert report.mse == 0.0
        assert report.l1_mean == 0.0
        assert report.psnr == math.inf
        assert not report.abs_error.values.any()

    def test_maximal_difference(self):
        report = error_map(Volume3D((1, 1, 2), np.full(2, ADC_MAX)), Volume3D.zeros((1, 1, 2)))

        assert report.mse == ADC_MAX**2
        assert report.psnr == 0.0
        assert report.normalized_mse == 1.0

    def test_hand_example(self):
        decoded = Volume3D((1, 2, 2), np.array([10, 0, 0, 0]))

        report = error_map(decoded, Volume3D.zeros((1, 2, 2)))

        assert report.mse == 25.0
        assert report.l1_mean == 2.5
        assert report.psnr == pytest.approx(10 * math.log10(ADC_MAX**2 / 25.0))
        np.testing.assert_array_equal(report.abs_error.values, [10, 0, 0, 0])

    def test_l1_bounded_by_rmse(self, rng):
        for _ in range(20):
            a = Volume3D((4, 4, 4), rng.integers(0, ADC_MAX + 1, size=64))
            b = Volume3D((4, 4, 4), rng.integers(0, ADC_MAX + 1, size=64))

            report = error_map(a, b)

            assert report.l1_mean <= math.sqrt(report.mse) + 1e-9

    def test_dims_mismatch(self, sparse_volume):
        with pytest.raises(ValueError, match="Dims mismatch"):
            error_map(sparse_volume, Volume3D.zeros((8, 8, 3)))


class TestCompress:
    def test_end_to_end(self, sparse_volume):
        spec = ModelSpec.default(ModelKind.SIREN, width=16, depth=2, init_seed=2)
        cfg = TrainConfig(epochs=5, batch_size=64, loss_eval_every=5)

        artifact, log = compress(sparse_volume, spec, cfg, precision="fp16")

        assert artifact.source_dims == sparse_volume.dims
        assert artifact.downsample_factors == (1, 1, 1)
        assert artifact.precision is Precision.FP16
        assert len(log.records) == 5
        assert decompress(artifact).dims == sparse_volume.dims

    def test_fp16_decode_close_to_fp32(self, small_synth_volume):
        spec = ModelSpec.default(ModelKind.SIREN, width=32, depth=3, init_seed=1)
        model, _ = train(small_synth_volume, spec, TrainConfig(epochs=30, batch_size=256, seed=1))
        full = CompressedArtifact.from_model(model, Precision.FP32)
        half = from_bytes(to_bytes(CompressedArtifact.from_model(model, Precision.FP16)))

        report = error_map(decompress(half), decompress(full))

        assert report.normalized_mse < 1e-2
        assert len(to_bytes(half)) < len(to_bytes(full))

    def test_records_source_metadata(self, sparse_volume):
        spec = ModelSpec.default(ModelKind.MLP, width=8, depth=1)
        training = downsample(sparse_volume, (2, 2, 1))

        artifact, _ = compress(
            training,
            spec,
            TrainConfig(epochs=2, batch_size=64),
            source_dims=sparse_volume.dims,
            downsample_factors=(2, 2, 1),
        )

        assert artifact.source_dims == (8, 8, 4)
        assert artifact.downsample_factors == (2, 2, 1)
        assert decompress(artifact).dims == (8, 8, 4)
