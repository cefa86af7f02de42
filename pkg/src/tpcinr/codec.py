"""Compression codec: trained network in, INRC artifact out, volumes decoded at any resolution.

An artifact stores the canonical model spec, every trainable weight at fp32 or
fp16, the FFNet frequency matrix, and the source metadata needed to decode
without any external state. INRC layout (little-endian, no padding)::

    magic "INRC" | version u32 | kind u8 | precision u8
    in_dim u32 | out_dim u32 | n_hidden u32 | hidden dims u32 * n_hidden
    omega0 f64 | sigma f64 | s0 f64 | n_features u32 | fourier seed u64
    source dims 3 x u32 | downsample factors 3 x u32 | weight count u64
    weights (per layer: W row-major, then b) | fourier_B row-major (FFNet only)
"""

import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum
from os import PathLike
from pathlib import Path
from typing import Self

import numpy as np

from tpcinr.errors import FormatError
from tpcinr.models import ModelKind, ModelParams, ModelSpec, eval_model
from tpcinr.nncore import LayerParams
from tpcinr.train import TrainConfig, TrainLog, train
from tpcinr.utils import Dims, fixed_order_sum, format_dims
from tpcinr.volume import (
    ADC_MAX,
    Volume3D,
    check_dims,
    denormalize_values,
    grid_coords,
)
from tpcinr.volume import resuppress as resuppress_volume

logger = logging.getLogger(__name__)

INRC_MAGIC = b"INRC"
INRC_VERSION = 1
DECODE_CHUNK = 65536

_PREAMBLE = struct.Struct("<4sIBBIII")
_HYPER = struct.Struct("<dddIQ")
_SOURCE = struct.Struct("<IIIIIIQ")

_KIND_CODES = {ModelKind.MLP: 0, ModelKind.FFNET: 1, ModelKind.SIREN: 2, ModelKind.WIRE: 3}
_CODE_KINDS = {code: kind for kind, code in _KIND_CODES.items()}


class Precision(StrEnum):
    FP32 = "fp32"
    FP16 = "fp16"

    @property
    def code(self) -> int:
        return 0 if self is Precision.FP32 else 1

    @property
    def dtype(self) -> np.dtype:
        return np.dtype("<f4") if self is Precision.FP32 else np.dtype("<f2")

    @classmethod
    def from_code(cls, code: int) -> "Precision":
        match code:
            case 0:
                return cls.FP32
            case 1:
                return cls.FP16
        raise FormatError(f"Unknown precision code {code}")


# The frequency matrix is fixed, not trained; it stays fp32 at either precision
# so fp16 artifacts do not shift FFNet phases.
FOURIER_DTYPE = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class CompressedArtifact:
    """Everything needed to decode a volume: spec, stored weights and source metadata.

    Attributes:
        spec: Canonical model spec
        weights: Flat trainable weights at the stored precision, layer by layer
            (``W`` row-major, then ``b``)
        precision: Stored weight precision
        source_dims: Dims of the full-resolution source volume
        downsample_factors: Per-axis factors the training volume was decimated by
        fourier_B: FFNet frequency matrix (``ffnet_features x in_dim``), else None
        format_version: INRC version
    """

    spec: ModelSpec
    weights: np.ndarray
    precision: Precision = Precision.FP32
    source_dims: Dims = (1, 1, 1)
    downsample_factors: Dims = (1, 1, 1)
    fourier_B: np.ndarray | None = None
    format_version: int = field(default=INRC_VERSION)

    def __post_init__(self):
        object.__setattr__(self, "precision", Precision(self.precision))
        object.__setattr__(self, "source_dims", check_dims(self.source_dims))
        object.__setattr__(self, "downsample_factors", check_dims(self.downsample_factors))
        weights = np.asarray(self.weights, dtype=self.precision.dtype).reshape(-1)
        if weights.size != self.spec.parameter_count():
            raise ValueError(
                f"weight count {weights.size} does not match {self.spec.kind} "
                f"{self.spec.hidden_dims} ({self.spec.parameter_count()} parameters)"
            )
        object.__setattr__(self, "weights", weights)
        if (self.fourier_B is not None) != (self.spec.kind is ModelKind.FFNET):
            raise ValueError("fourier_B must be present exactly when kind is FFNET")
        if self.fourier_B is not None:
            B = np.asarray(self.fourier_B, dtype=FOURIER_DTYPE)
            expected = (self.spec.ffnet_features, self.spec.in_dim)
            if B.size != expected[0] * expected[1]:
                raise ValueError(f"fourier_B has {B.size} entries, expected shape {expected}")
            object.__setattr__(self, "fourier_B", B.reshape(expected))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CompressedArtifact):
            return NotImplemented
        return to_bytes(self) == to_bytes(other)

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_model(
        cls,
        model: ModelParams,
        precision: Precision | str = Precision.FP32,
        source_dims: Dims = (1, 1, 1),
        downsample_factors: Dims = (1, 1, 1),
    ) -> Self:
        """Package a trained model, quantizing its weights to ``precision``."""
        flat = np.concatenate(
            [np.concatenate([layer.W.reshape(-1), layer.b]) for layer in model.layers]
        )
        return cls(
            spec=model.spec.canonical(),
            weights=flat.astype(Precision(precision).dtype),
            precision=Precision(precision),
            source_dims=source_dims,
            downsample_factors=downsample_factors,
            fourier_B=model.fourier_B,
        )

    @property
    def weight_count(self) -> int:
        return self.weights.size

    def model(self) -> ModelParams:
        """Rebuild a float64 network from the stored weights."""
        layers = []
        offset = 0
        for out_dim, in_dim in self.spec.layer_shapes():
            W = self.weights[offset : offset + out_dim * in_dim].reshape(out_dim, in_dim)
            offset += out_dim * in_dim
            b = self.weights[offset : offset + out_dim]
            offset += out_dim
            layers.append(LayerParams(W, b))
        return ModelParams(spec=self.spec, layers=layers, fourier_B=self.fourier_B)


@dataclass(frozen=True)
class ErrorReport:
    """Per-cell absolute error (ADC counts) and its summary.

    Attributes:
        abs_error: ``|decoded - reference|`` per cell
        mse: Mean squared error in ADC counts squared
        l1_mean: Mean absolute error in ADC counts
        psnr: ``10 log10(1023^2 / mse)`` in dB; ``inf`` when the volumes are identical
    """

    abs_error: Volume3D
    mse: float
    l1_mean: float
    psnr: float

    @property
    def normalized_mse(self) -> float:
        return self.mse / ADC_MAX**2


# ============================================================================
# COMPRESS / DECOMPRESS
# ============================================================================


def compress(
    volume: Volume3D,
    spec: ModelSpec,
    cfg: TrainConfig,
    *,
    precision: Precision | str = Precision.FP32,
    source_dims: Dims | None = None,
    downsample_factors: Dims = (1, 1, 1),
) -> tuple[CompressedArtifact, TrainLog]:
    """Fit a network to ``volume`` and package it as an artifact.

    Args:
        volume: Training volume (possibly decimated from a larger source)
        spec: Architecture
        cfg: Training configuration
        precision: Stored weight precision
        source_dims: Dims to decode to by default; defaults to ``volume.dims``
        downsample_factors: Factors ``volume`` was decimated by, recorded as metadata

    Returns:
        Tuple of (artifact, training log)

    Example:
        >>> artifact, log = compress(volume, ModelSpec.default("siren"), TrainConfig(epochs=200))
        >>> decompress(artifact).dims == volume.dims
        True
    """
    model, log = train(volume, spec, cfg)
    artifact = CompressedArtifact.from_model(
        model,
        precision=precision,
        source_dims=source_dims or volume.dims,
        downsample_factors=downsample_factors,
    )
    logger.info(
        f"Compressed {format_dims(volume.dims)} into {artifact.weight_count} {artifact.precision} "
        f"weights (ratio {compression_ratio(artifact):.2f})"
    )
    return artifact, log


def decompress(
    a: CompressedArtifact,
    target_dims: Dims | None = None,
    *,
    resuppress: bool = False,
    chunk_size: int = DECODE_CHUNK,
    max_workers: int = 1,
) -> Volume3D:
    """Decode an artifact on the normalized grid of ``target_dims``.

    Each axis of size ``D`` is sampled at ``-1 + 2t/(D-1)``, so decoding at the
    training dims reproduces the training coordinates exactly. Values are
    denormalized, rounded and clamped to ``[0, 1023]``.

    Args:
        a: Artifact to decode
        target_dims: Output dims; defaults to the artifact's source dims
        resuppress: Zero every decoded value below the zero-suppression floor
        chunk_size: Cells evaluated per chunk
        max_workers: Threads evaluating chunks; output assembly is position-indexed

    Returns:
        The decoded volume
    """
    dims = check_dims(target_dims or a.source_dims)
    if chunk_size < 1 or max_workers < 1:
        raise ValueError(f"chunk_size and max_workers must be positive, got {chunk_size}, {max_workers}")
    model = a.model()
    coords = grid_coords(dims)
    starts = range(0, len(coords), chunk_size)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        chunks = list(executor.map(lambda lo: eval_model(model, coords[lo : lo + chunk_size]), starts))

    decoded = Volume3D(dims, denormalize_values(np.concatenate(chunks)))
    logger.debug(f"Decoded artifact at {format_dims(dims)}")
    return resuppress_volume(decoded) if resuppress else decoded


def raw_bytes(dims: Dims) -> int:
    """Size of a volume stored as 16-bit counts."""
    c, z, r = dims
    return c * z * r * 2


def compression_ratio(a: CompressedArtifact) -> float:
    """Raw 16-bit source size over the serialized artifact size."""
    return raw_bytes(a.source_dims) / len(to_bytes(a))


def error_map(decoded: Volume3D, reference: Volume3D) -> ErrorReport:
    """Absolute error volume and MSE, L1 and PSNR summaries in ADC units.

    Raises:
        ValueError: If the dims differ
    """
    if decoded.dims != reference.dims:
        logger.error(f"Dims mismatch: {format_dims(decoded.dims)} vs {format_dims(reference.dims)}")
        raise ValueError(
            f"Dims mismatch: {format_dims(decoded.dims)} vs {format_dims(reference.dims)}"
        )
    diff = decoded.values.astype(np.int64) - reference.values.astype(np.int64)
    abs_diff = np.abs(diff)
    n = diff.size
    mse = fixed_order_sum((diff * diff).tolist()) / n
    l1_mean = fixed_order_sum(abs_diff.tolist()) / n
    psnr = math.inf if mse == 0 else 10.0 * math.log10(ADC_MAX**2 / mse)
    return ErrorReport(Volume3D(decoded.dims, abs_diff), mse, l1_mean, psnr)


# ============================================================================
# INRC SERIALIZATION
# ============================================================================


def to_bytes(a: CompressedArtifact) -> bytes:
    spec = a.spec
    match spec.kind:
        case ModelKind.SIREN:
            omega0 = spec.siren_omega0
        case ModelKind.WIRE:
            omega0 = spec.wire_omega0
        case _:
            omega0 = 0.0
    is_ffnet = spec.kind is ModelKind.FFNET
    parts = [
        _PREAMBLE.pack(
            INRC_MAGIC,
            a.format_version,
            _KIND_CODES[spec.kind],
            a.precision.code,
            spec.in_dim,
            spec.out_dim,
            len(spec.hidden_dims),
        ),
        struct.pack(f"<{len(spec.hidden_dims)}I", *spec.hidden_dims),
        _HYPER.pack(
            omega0,
            spec.ffnet_sigma if is_ffnet else 0.0,
            spec.wire_s0 if spec.kind is ModelKind.WIRE else 0.0,
            spec.ffnet_features if is_ffnet else 0,
            spec.ffnet_seed if is_ffnet else 0,
        ),
        _SOURCE.pack(*a.source_dims, *a.downsample_factors, a.weight_count),
        a.weights.astype(a.precision.dtype).tobytes(),
    ]
    if a.fourier_B is not None:
        parts.append(a.fourier_B.astype(FOURIER_DTYPE).tobytes())
    return b"".join(parts)


class _Reader:
    """Sequential reader over a byte buffer that fails with FormatError when it runs out."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def unpack(self, fmt: struct.Struct) -> tuple:
        if self.offset + fmt.size > len(self.data):
            raise FormatError(f"Truncated INRC payload at byte {self.offset}")
        values = fmt.unpack_from(self.data, self.offset)
        self.offset += fmt.size
        return values

    def array(self, count: int, dtype: np.dtype) -> np.ndarray:
        size = count * dtype.itemsize
        if self.offset + size > len(self.data):
            raise FormatError(
                f"Truncated INRC payload: need {size} bytes at {self.offset}, "
                f"have {len(self.data) - self.offset}"
            )
        values = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset).copy()
        self.offset += size
        return values


def from_bytes(data: bytes) -> CompressedArtifact:
    """Parse an INRC buffer.

    Raises:
        FormatError: On bad magic, unsupported version, unknown kind or precision
            code, truncated payload, trailing bytes or a weight count that does
            not match the spec's shape arithmetic
    """
    reader = _Reader(data)
    magic, version, kind_code, precision_code, in_dim, out_dim, n_hidden = reader.unpack(_PREAMBLE)
    if magic != INRC_MAGIC:
        raise FormatError(f"Bad magic {magic!r}; expected {INRC_MAGIC!r}")
    if version != INRC_VERSION:
        raise FormatError(f"Unsupported INRC version {version}; expected {INRC_VERSION}")
    if kind_code not in _CODE_KINDS:
        raise FormatError(f"Unknown model kind code {kind_code}")
    kind = _CODE_KINDS[kind_code]
    precision = Precision.from_code(precision_code)
    if n_hidden < 1 or in_dim < 1 or out_dim < 1:
        raise FormatError(f"Invalid layer layout: in={in_dim} out={out_dim} hidden={n_hidden}")

    hidden_dims = reader.unpack(struct.Struct(f"<{n_hidden}I"))
    omega0, sigma, s0, n_features, fourier_seed = reader.unpack(_HYPER)
    *dims, weight_count = reader.unpack(_SOURCE)

    defaults = ModelSpec()
    spec = ModelSpec(
        kind=kind,
        hidden_dims=hidden_dims,
        in_dim=in_dim,
        out_dim=out_dim,
        siren_omega0=omega0 if kind is ModelKind.SIREN else defaults.siren_omega0,
        ffnet_features=n_features if kind is ModelKind.FFNET else defaults.ffnet_features,
        ffnet_sigma=sigma if kind is ModelKind.FFNET else defaults.ffnet_sigma,
        ffnet_seed=fourier_seed if kind is ModelKind.FFNET else defaults.ffnet_seed,
        wire_omega0=omega0 if kind is ModelKind.WIRE else defaults.wire_omega0,
        wire_s0=s0 if kind is ModelKind.WIRE else defaults.wire_s0,
    )
    try:
        spec.validate()
    except ValueError as e:
        raise FormatError(f"Invalid model spec in INRC header: {e}") from e
    if weight_count != spec.parameter_count():
        raise FormatError(
            f"weight-count mismatch: header says {weight_count}, {kind} {tuple(hidden_dims)} "
            f"needs {spec.parameter_count()}"
        )

    weights = reader.array(weight_count, precision.dtype)
    fourier_B = None
    if kind is ModelKind.FFNET:
        fourier_B = reader.array(n_features * in_dim, FOURIER_DTYPE).reshape(n_features, in_dim)
    if reader.offset != len(data):
        raise FormatError(f"payload length mismatch: {len(data) - reader.offset} trailing bytes")

    try:
        return CompressedArtifact(
            spec=spec,
            weights=weights,
            precision=precision,
            source_dims=tuple(dims[:3]),
            downsample_factors=tuple(dims[3:]),
            fourier_B=fourier_B,
            format_version=version,
        )
    except ValueError as e:
        raise FormatError(f"Invalid INRC metadata: {e}") from e


def serialize(a: CompressedArtifact, path: str | PathLike) -> None:
    """Write an artifact as an INRC file."""
    path = Path(path)
    data = to_bytes(a)
    try:
        path.write_bytes(data)
    except OSError as e:
        logger.error(f"Failed to write artifact to {path}: {e}")
        raise
    logger.info(f"Wrote {len(data)}-byte artifact to {path}")


def deserialize(path: str | PathLike) -> CompressedArtifact:
    """Read an INRC file.

    Raises:
        FileNotFoundError: If the file does not exist
        FormatError: If the content is not a valid artifact
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"Artifact file not found: {path}")
        raise FileNotFoundError(f"Artifact file not found: {path}")
    try:
        artifact = from_bytes(path.read_bytes())
    except FormatError as e:
        logger.error(f"Invalid artifact {path}: {e}")
        raise
    logger.debug(f"Loaded {artifact.spec.kind} artifact from {path}")
    return artifact
