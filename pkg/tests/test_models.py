import math

import numpy as np
import pytest

from tpcinr.models import (
    ModelKind,
    ModelParams,
    ModelSpec,
    build_model,
    eval_model,
    fourier_features,
    siren_forward,
    wire_activation,
)
from tpcinr.nncore import Activation, LayerParams, gradcheck

GRADCHECK_INSTANCES = 20
KINK_MARGIN = 5e-3


def small_spec(kind: ModelKind, seed: int) -> ModelSpec:
    return ModelSpec(
        kind=kind,
        hidden_dims=(16, 16),
        ffnet_features=16,
        ffnet_sigma=1.0,
        ffnet_seed=seed,
        init_seed=seed,
    )


def near_relu_kink(model: ModelParams, coords: np.ndarray) -> bool:
    """True when any hidden pre-activation lies within KINK_MARGIN of zero."""
    h = model.encode(coords)
    for layer in model.layers[:-1]:
        u = h @ layer.W.T + layer.b
        if np.any(np.abs(u) < KINK_MARGIN):
            return True
        h = model.activation.apply(u)
    return False


# ============================================================================
# SPECS
# ============================================================================


class TestModelSpec:
    """Test spec validation, shape arithmetic and canonical form."""

    def test_default_siren_parameter_count(self):
        spec = ModelSpec.default(ModelKind.SIREN, width=128, depth=3)

        assert spec.parameter_count() == 33665
        assert build_model(spec).parameter_count == 33665

    def test_layer_shapes(self):
        spec = ModelSpec.default(ModelKind.MLP, width=8, depth=2)

        assert spec.layer_shapes() == [(8, 3), (8, 8), (1, 8)]

    def test_ffnet_input_width_doubles_features(self):
        spec = ModelSpec.default(ModelKind.FFNET, width=16, depth=2, ffnet_features=32)

        assert spec.first_in_dim == 64
        assert spec.layer_shapes()[0] == (16, 64)

    def test_kind_accepts_strings(self):
        assert ModelSpec(kind="wire").kind is ModelKind.WIRE

    @pytest.mark.parametrize(
        "spec",
        [
            ModelSpec(hidden_dims=()),
            ModelSpec(hidden_dims=(8, 0)),
            ModelSpec(kind=ModelKind.SIREN, siren_omega0=0.0),
            ModelSpec(kind=ModelKind.FFNET, ffnet_features=0),
            ModelSpec(kind=ModelKind.WIRE, wire_s0=-1.0),
        ],
    )
    def test_validate_rejects(self, spec):
        with pytest.raises(ValueError):
            spec.validate()

    def test_inapplicable_hyperparameters_ignored_by_validation(self):
        ModelSpec(kind=ModelKind.MLP, siren_omega0=-5.0).validate()

    def test_canonical_resets_inapplicable_fields(self):
        spec = ModelSpec(kind=ModelKind.SIREN, siren_omega0=12.0, wire_s0=3.0, ffnet_seed=9, init_seed=4)

        canonical = spec.canonical()

        assert canonical.siren_omega0 == 12.0
        assert canonical.wire_s0 == ModelSpec().wire_s0
        assert canonical.ffnet_seed == 0
        assert canonical.init_seed == 0


# ============================================================================
# CONSTRUCTION
# ============================================================================


class TestBuildModel:
    """Test initialization rules and determinism."""

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_deterministic(self, kind):
        a = build_model(small_spec(kind, seed=3))
        b = build_model(small_spec(kind, seed=3))

        for la, lb in zip(a.layers, b.layers, strict=True):
            np.testing.assert_array_equal(la.W, lb.W)
            np.testing.assert_array_equal(la.b, lb.b)

    def test_seed_changes_weights(self):
        a = build_model(small_spec(ModelKind.SIREN, seed=1))
        b = build_model(small_spec(ModelKind.SIREN, seed=2))

        assert not np.array_equal(a.layers[0].W, b.layers[0].W)

    def test_siren_bounds(self):
        model = build_model(ModelSpec.default(ModelKind.SIREN, width=64, depth=3))

        assert np.abs(model.layers[0].W).max() <= 1.0 / 3
        for layer in model.layers[1:]:
            assert np.abs(layer.W).max() <= math.sqrt(6.0 / layer.in_dim) / 30.0
        for layer in model.layers:
            assert np.abs(layer.b).max() <= 1.0 / math.sqrt(layer.in_dim)

    def test_wire_bounds(self):
        model = build_model(ModelSpec.default(ModelKind.WIRE, width=32, depth=2))

        for layer in model.layers:
            assert np.abs(layer.W).max() <= math.sqrt(6.0 / layer.in_dim) / 20.0

    def test_mlp_glorot_with_zero_bias(self):
        model = build_model(ModelSpec.default(ModelKind.MLP, width=32, depth=2))

        for layer in model.layers:
            assert np.abs(layer.W).max() <= math.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            assert not layer.b.any()

    def test_ffnet_frequency_matrix(self):
        spec = ModelSpec.default(ModelKind.FFNET, width=8, depth=1, ffnet_features=64, ffnet_seed=5)

        model = build_model(spec)
        again = build_model(
            ModelSpec.default(ModelKind.FFNET, width=8, depth=1, ffnet_features=64, ffnet_seed=5, init_seed=9)
        )

        assert model.fourier_B.shape == (64, 3)
        np.testing.assert_array_equal(model.fourier_B, again.fourier_B)

    def test_activation_by_kind(self):
        assert build_model(small_spec(ModelKind.SIREN, 0)).activation.kind is Activation.SINE
        assert build_model(small_spec(ModelKind.WIRE, 0)).activation.kind is Activation.GABOR
        assert build_model(small_spec(ModelKind.MLP, 0)).activation.kind is Activation.RELU
        assert build_model(small_spec(ModelKind.FFNET, 0)).activation.kind is Activation.RELU

    def test_fourier_matrix_only_for_ffnet(self):
        spec = ModelSpec.default(ModelKind.SIREN, width=4, depth=1)

        with pytest.raises(ValueError, match="fourier_B"):
            ModelParams(spec=spec, layers=build_model(spec).layers, fourier_B=np.ones((2, 3)))

    def test_layer_chain_checked(self):
        spec = ModelSpec.default(ModelKind.MLP, width=4, depth=1)
        layers = [LayerParams(np.zeros((4, 3)), np.zeros(4)), LayerParams(np.zeros((1, 5)), np.zeros(1))]

        with pytest.raises(ValueError, match="expects 5 inputs"):
            ModelParams(spec=spec, layers=layers)


# ============================================================================
# EVALUATION
# ============================================================================


class TestEncodingsAndActivations:
    def test_fourier_features_at_origin(self):
        np.testing.assert_array_equal(fourier_features(np.zeros(3), np.ones((2, 3))), [0.0, 0.0, 1.0, 1.0])

    def test_fourier_features_batch_shape(self, rng):
        assert fourier_features(rng.uniform(-1, 1, size=(7, 3)), rng.normal(size=(5, 3))).shape == (7, 10)

    def test_fourier_features_dimension_mismatch(self):
        with pytest.raises(ValueError):
            fourier_features(np.zeros(2), np.ones((4, 3)))

    def test_wire_activation(self):
        assert wire_activation(0.0) == 1.0
        assert abs(wire_activation(10.0 / 10.0, omega0=20.0, s0=10.0)) < 1e-40
        with pytest.raises(ValueError):
            wire_activation(0.5, omega0=0.0)

    def test_wire_activation_vectorized(self, rng):
        u = rng.uniform(-1, 1, size=100)

        assert np.all(np.abs(wire_activation(u)) <= np.exp(-((10.0 * u) ** 2)) + 1e-15)


class TestEvalModel:
    """Test architecture-specific evaluation."""

    def test_zero_siren_outputs_zero(self, rng):
        spec = ModelSpec.default(ModelKind.SIREN, width=8, depth=2)
        model = build_model(spec)
        zeroed = model.with_layers([LayerParams(np.zeros_like(layer.W), np.zeros_like(layer.b)) for layer in model.layers])

        np.testing.assert_array_equal(eval_model(zeroed, rng.uniform(-1, 1, size=(4, 3))), np.zeros(4))

    def test_siren_output_bound(self, rng):
        model = build_model(ModelSpec.default(ModelKind.SIREN, width=16, depth=2))
        last = model.layers[-1]

        out = eval_model(model, rng.uniform(-1, 1, size=(50, 3)))

        assert np.all(np.abs(out) <= np.abs(last.W).sum() + abs(last.b[0]))

    def test_siren_forward_single_and_batch(self, rng):
        model = build_model(ModelSpec.default(ModelKind.SIREN, width=8, depth=2))
        coords = rng.uniform(-1, 1, size=(3, 3))

        single = siren_forward(model, coords[0])

        assert isinstance(single, float)
        assert single == pytest.approx(float(eval_model(model, coords)[0]), rel=1e-12, abs=1e-15)
        assert siren_forward(model, coords).shape == (3,)

    def test_siren_forward_rejects_other_kinds(self):
        with pytest.raises(ValueError, match="SIREN"):
            siren_forward(build_model(small_spec(ModelKind.MLP, 0)), np.zeros(3))

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_batch_output_shape(self, kind, rng):
        out = eval_model(build_model(small_spec(kind, 0)), rng.uniform(-1, 1, size=(6, 3)))

        assert out.shape == (6,)
        assert np.all(np.isfinite(out))


# ============================================================================
# GRADIENT CORRECTNESS
# ============================================================================


class TestGradientCorrectness:
    """UNIT: backward agrees with central differences on random small instances of every kind."""

    @pytest.mark.parametrize(
        ("kind", "tolerance"),
        [
            (ModelKind.MLP, 1e-4),
            (ModelKind.FFNET, 1e-4),
            (ModelKind.SIREN, 1e-4),
            (ModelKind.WIRE, 1e-3),
        ],
    )
    def test_gradcheck(self, kind, tolerance):
        rng = np.random.default_rng(2024)
        checked = 0
        seed = 0
        while checked < GRADCHECK_INSTANCES:
            model = build_model(small_spec(kind, seed))
            seed += 1
            coords = rng.uniform(-1, 1, size=(3, 3))
            targets = rng.uniform(0, 1, size=3)
            if model.activation.kind is Activation.RELU and near_relu_kink(model, coords):
                continue
            assert gradcheck(model, coords, targets, h=1e-4) < tolerance, f"{kind} seed {seed - 1}"
            checked += 1
