"""Coordinate-network architectures: plain MLP, Fourier-feature network (FFNet),
SIREN and WIRE, as constructible parameter bundles.

All four are stacks of dense layers with a linear output layer; they differ in
the input encoding (FFNet maps ``x`` to ``[sin(2 pi B x), cos(2 pi B x)]``),
the hidden activation (ReLU, sine, real Gabor wavelet) and the initialization.

Example:
    >>> spec = ModelSpec.default(ModelKind.SIREN, width=128, depth=3)
    >>> build_model(spec).parameter_count
    33665
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Self

import numpy as np

from tpcinr.nncore import Activation, ActivationParams, LayerParams, forward, parameter_count
from tpcinr.utils import make_rng

logger = logging.getLogger(__name__)

# Defaults
DEFAULT_WIDTH = 128
DEFAULT_DEPTH = 3
SIREN_OMEGA0 = 30.0
FFNET_FEATURES = 256
FFNET_SIGMA = 10.0
WIRE_OMEGA0 = 20.0
WIRE_S0 = 10.0


class ModelKind(StrEnum):
    MLP = "mlp"
    FFNET = "ffnet"
    SIREN = "siren"
    WIRE = "wire"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of one coordinate network.

    Attributes:
        kind: Architecture family
        hidden_dims: Width of every hidden layer
        in_dim: Coordinate dimension
        out_dim: Output dimension
        siren_omega0: Frequency factor multiplying every SIREN hidden pre-activation
        ffnet_features: Number of Fourier frequencies (the encoding has twice as many)
        ffnet_sigma: Standard deviation of the Fourier frequency matrix entries
        ffnet_seed: Seed of the Fourier frequency matrix
        wire_omega0: Gabor carrier frequency
        wire_s0: Gabor envelope scale
        init_seed: Seed of the weight initialization
    """

    kind: ModelKind = ModelKind.SIREN
    hidden_dims: tuple[int, ...] = (DEFAULT_WIDTH,) * DEFAULT_DEPTH
    in_dim: int = 3
    out_dim: int = 1
    siren_omega0: float = SIREN_OMEGA0
    ffnet_features: int = FFNET_FEATURES
    ffnet_sigma: float = FFNET_SIGMA
    ffnet_seed: int = 0
    wire_omega0: float = WIRE_OMEGA0
    wire_s0: float = WIRE_S0
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))

    @classmethod
    def default(
        cls,
        kind: ModelKind | str = ModelKind.SIREN,
        width: int = DEFAULT_WIDTH,
        depth: int = DEFAULT_DEPTH,
        **overrides,
    ) -> Self:
        return cls(kind=ModelKind(kind), hidden_dims=(width,) * depth, **overrides)

    def validate(self) -> None:
        """Raise ValueError unless the spec can be built."""
        if not self.hidden_dims:
            raise ValueError("hidden_dims must not be empty")
        if any(d < 1 for d in self.hidden_dims):
            raise ValueError(f"Every hidden width must be positive, got {self.hidden_dims}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"in_dim and out_dim must be positive, got {self.in_dim}, {self.out_dim}")
        match self.kind:
            case ModelKind.SIREN if self.siren_omega0 <= 0:
                raise ValueError(f"siren_omega0 must be positive, got {self.siren_omega0}")
            case ModelKind.FFNET if self.ffnet_features < 1 or self.ffnet_sigma <= 0:
                raise ValueError(
                    f"ffnet_features and ffnet_sigma must be positive, got "
                    f"{self.ffnet_features}, {self.ffnet_sigma}"
                )
            case ModelKind.WIRE if self.wire_omega0 <= 0 or self.wire_s0 <= 0:
                raise ValueError(
                    f"wire_omega0 and wire_s0 must be positive, got "
                    f"{self.wire_omega0}, {self.wire_s0}"
                )

    def canonical(self) -> Self:
        """Copy with the hyperparameters that do not apply to ``kind`` reset, and no init seed."""
        defaults = ModelSpec()
        keep_siren = self.kind is ModelKind.SIREN
        keep_ffnet = self.kind is ModelKind.FFNET
        keep_wire = self.kind is ModelKind.WIRE
        return replace(
            self,
            siren_omega0=self.siren_omega0 if keep_siren else defaults.siren_omega0,
            ffnet_features=self.ffnet_features if keep_ffnet else defaults.ffnet_features,
            ffnet_sigma=self.ffnet_sigma if keep_ffnet else defaults.ffnet_sigma,
            ffnet_seed=self.ffnet_seed if keep_ffnet else defaults.ffnet_seed,
            wire_omega0=self.wire_omega0 if keep_wire else defaults.wire_omega0,
            wire_s0=self.wire_s0 if keep_wire else defaults.wire_s0,
            init_seed=0,
        )

    @property
    def first_in_dim(self) -> int:
        """Input width of the first dense layer (doubled Fourier features for FFNet)."""
        return 2 * self.ffnet_features if self.kind is ModelKind.FFNET else self.in_dim

    def layer_shapes(self) -> list[tuple[int, int]]:
        """``(out_dim, in_dim)`` of every dense layer, input to output."""
        widths = [self.first_in_dim, *self.hidden_dims, self.out_dim]
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    def parameter_count(self) -> int:
        return sum(out_dim * in_dim + out_dim for out_dim, in_dim in self.layer_shapes())


@dataclass(frozen=True, eq=False)
class ModelParams:
    """A coordinate network: its spec, its dense layers and, for FFNet, the frequency matrix."""

    spec: ModelSpec
    layers: list[LayerParams] = field(default_factory=list)
    fourier_B: np.ndarray | None = None

    def __post_init__(self):
        for index in range(1, len(self.layers)):
            if self.layers[index].in_dim != self.layers[index - 1].out_dim:
                raise ValueError(
                    f"Layer {index} expects {self.layers[index].in_dim} inputs but layer "
                    f"{index - 1} produces {self.layers[index - 1].out_dim}"
                )
        if (self.fourier_B is not None) != (self.spec.kind is ModelKind.FFNET):
            raise ValueError("fourier_B must be present exactly when kind is FFNET")
        if self.fourier_B is not None:
            object.__setattr__(self, "fourier_B", np.atleast_2d(np.asarray(self.fourier_B, dtype=np.float64)))

    @property
    def activation(self) -> ActivationParams:
        match self.spec.kind:
            case ModelKind.SIREN:
                return ActivationParams(Activation.SINE, omega0=self.spec.siren_omega0)
            case ModelKind.WIRE:
                return ActivationParams(
                    Activation.GABOR, omega0=self.spec.wire_omega0, s0=self.spec.wire_s0
                )
        return ActivationParams(Activation.RELU)

    def encode(self, coords: np.ndarray) -> np.ndarray:
        if self.fourier_B is None:
            return coords
        return fourier_features(coords, self.fourier_B)

    def with_layers(self, layers: list[LayerParams]) -> Self:
        return replace(self, layers=list(layers))

    @property
    def parameter_count(self) -> int:
        """Number of trainable parameters (the Fourier matrix is fixed, not trained)."""
        return parameter_count(self.layers)


# ============================================================================
# CONSTRUCTION
# ============================================================================


def _uniform_layer(rng: np.random.Generator, out_dim: int, in_dim: int, bound: float) -> LayerParams:
    W = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-1.0 / math.sqrt(in_dim), 1.0 / math.sqrt(in_dim), size=out_dim)
    return LayerParams(W, b)


def build_model(spec: ModelSpec) -> ModelParams:
    """Initialize a network for ``spec``; identical seeds give bit-identical parameters.

    Initialization rules:
        - MLP and FFNet: Glorot uniform weights, zero biases.
        - SIREN: first layer ``U(-1/fan_in, 1/fan_in)``, later layers
          ``U(-sqrt(6/fan_in)/omega0, +sqrt(6/fan_in)/omega0)``.
        - WIRE: every layer uses SIREN's later-layer rule with the Gabor ``omega0``.
        - SIREN and WIRE biases: ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
        - FFNet frequency matrix: ``N(0, sigma^2)`` entries from its own seed.

    Raises:
        ValueError: If the spec is invalid
    """
    spec.validate()
    rng = make_rng(spec.init_seed)
    layers: list[LayerParams] = []
    for index, (out_dim, in_dim) in enumerate(spec.layer_shapes()):
        match spec.kind:
            case ModelKind.MLP | ModelKind.FFNET:
                bound = math.sqrt(6.0 / (in_dim + out_dim))
                W = rng.uniform(-bound, bound, size=(out_dim, in_dim))
                layers.append(LayerParams(W, np.zeros(out_dim)))
            case ModelKind.SIREN:
                if index == 0:
                    bound = 1.0 / in_dim
                else:
                    bound = math.sqrt(6.0 / in_dim) / spec.siren_omega0
                layers.append(_uniform_layer(rng, out_dim, in_dim, bound))
            case ModelKind.WIRE:
                bound = math.sqrt(6.0 / in_dim) / spec.wire_omega0
                layers.append(_uniform_layer(rng, out_dim, in_dim, bound))

    fourier_B = None
    if spec.kind is ModelKind.FFNET:
        fourier_B = make_rng(spec.ffnet_seed).normal(
            0.0, spec.ffnet_sigma, size=(spec.ffnet_features, spec.in_dim)
        )

    model = ModelParams(spec=spec, layers=layers, fourier_B=fourier_B)
    logger.debug(f"Built {spec.kind} model {spec.hidden_dims} with {model.parameter_count} parameters")
    return model


# ============================================================================
# EVALUATION
# ============================================================================


def fourier_features(x: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Fourier encoding ``[sin(2 pi B x), cos(2 pi B x)]``.

    Accepts a single coordinate ``(d,)`` or a batch ``(n, d)``.

    Example:
        >>> fourier_features(np.zeros(3), np.ones((2, 3)))
        array([0., 0., 1., 1.])
    """
    x = np.asarray(x, dtype=np.float64)
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if x.shape[-1] != B.shape[1]:
        raise ValueError(f"Coordinate dimension {x.shape[-1]} does not match B columns {B.shape[1]}")
    projected = 2.0 * np.pi * (x @ B.T)
    return np.concatenate([np.sin(projected), np.cos(projected)], axis=-1)


def wire_activation(u: np.ndarray | float, omega0: float = WIRE_OMEGA0, s0: float = WIRE_S0):
    """Real Gabor wavelet ``cos(omega0 u) exp(-(s0 u)^2)``."""
    if omega0 <= 0 or s0 <= 0:
        raise ValueError(f"omega0 and s0 must be positive, got {omega0}, {s0}")
    result = ActivationParams(Activation.GABOR, omega0=omega0, s0=s0).apply(
        np.asarray(u, dtype=np.float64)
    )
    return float(result) if result.ndim == 0 else result


def eval_model(params: ModelParams, coords: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch of normalized coordinates, in normalized-value units."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[None, :]
    return forward(params, coords)


def siren_forward(params: ModelParams, x: np.ndarray) -> np.ndarray | float:
    """Evaluate a SIREN on one coordinate (returns a float) or a batch."""
    if params.spec.kind is not ModelKind.SIREN:
        raise ValueError(f"siren_forward needs a SIREN model, got {params.spec.kind}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(eval_model(params, x[None, :])[0])
    return eval_model(params, x)
