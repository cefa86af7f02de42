"""Detector volumes: the INRV file format, coordinate and value normalization,
downsampling, occupancy, and a synthetic sparse-track generator.

A ``Volume3D`` is a dense ``(c, z, r)`` grid of 10-bit ADC counts stored in
16-bit cells, flattened row-major with ``c`` outermost and ``r`` innermost.

Example:
    >>> from tpcinr.volume import SynthConfig, synth_tracks, occupancy
    >>> v = synth_tracks(SynthConfig(dims=(48, 64, 8), n_tracks=20, seed=7))
    >>> 0.005 <= occupancy(v) <= 0.02
    True
"""

import logging
import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass
from os import PathLike
from pathlib import Path

import numpy as np

from tpcinr.errors import FormatError
from tpcinr.utils import Dims, format_dims, make_rng

logger = logging.getLogger(__name__)

# Constants
ADC_MAX = 1023
ZERO_SUPPRESSION_FLOOR = 64
INRV_MAGIC = b"INRV"
INRV_VERSION = 1
_INRV_HEADER = struct.Struct("<4sIIII")

# Synthetic track rasterization
KERNEL_SIGMA = 1.0
TRACK_STEP = 0.5
MAX_ARCS_PER_TRACK = 64


def check_dims(dims: Sequence[int]) -> Dims:
    if len(dims) != 3:
        raise ValueError(f"Expected three dims (c, z, r), got {tuple(dims)}")
    checked = (int(dims[0]), int(dims[1]), int(dims[2]))
    if min(checked) < 1:
        raise ValueError(f"Every axis must be at least 1, got {checked}")
    return checked


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Dense ``(c, z, r)`` grid of ADC counts.

    Values are held as a read-only flat ``uint16`` array of length ``c*z*r``.
    The 0..1023 range is always enforced; the zero-suppression floor is checked
    with ``is_zero_suppressed`` because decoded volumes and error maps may
    legitimately hold values below it.

    Attributes:
        dims: Axis sizes ``(c, z, r)``
        values: Flat ADC counts in row-major order
    """

    dims: Dims
    values: np.ndarray

    def __post_init__(self):
        dims = check_dims(self.dims)
        raw = np.asarray(self.values)
        if raw.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(
                f"values length {raw.size} does not match dims {format_dims(dims)} "
                f"({dims[0] * dims[1] * dims[2]} cells)"
            )
        if raw.size and (raw.min() < 0 or raw.max() > ADC_MAX):
            raise ValueError(f"ADC values must lie in [0, {ADC_MAX}]")
        values = np.array(raw.reshape(-1), dtype=np.uint16)
        values.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Volume3D):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]

    @property
    def size(self) -> int:
        return self.values.size

    def grid(self) -> np.ndarray:
        """Read-only ``(c, z, r)`` view of the values."""
        return self.values.reshape(self.dims)

    def flat_index(self, index: Sequence[int]) -> int:
        i, j, k = (int(t) for t in index)
        _, z, r = self.dims
        return (i * z + j) * r + k

    def unravel_index(self, flat: int) -> tuple[int, int, int]:
        i, j, k = np.unravel_index(int(flat), self.dims)
        return int(i), int(j), int(k)

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "Volume3D":
        dims = check_dims(dims)
        return cls(dims, np.zeros(dims[0] * dims[1] * dims[2], dtype=np.uint16))


@dataclass(frozen=True)
class NormalizedCoord:
    """A point of the ``[-1, 1]^3`` model input domain, one component per axis (c, z, r)."""

    x: tuple[float, float, float]


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic sparse-track generator.

    Attributes:
        dims: Output volume dims ``(c, z, r)``
        n_tracks: Number of tracks; each may be made of several smooth arcs
        target_occupancy: Desired fraction of nonzero cells, in (0, 1]
        intensity_range: ``(lo, hi)`` bounds of nonzero ADC values, ``lo >= 64``
        seed: Seed of the generator stream
    """

    dims: Dims = (96, 125, 16)
    n_tracks: int = 20
    target_occupancy: float = 0.01
    intensity_range: tuple[int, int] = (ZERO_SUPPRESSION_FLOOR, ADC_MAX)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", check_dims(self.dims))
        lo, hi = (int(b) for b in self.intensity_range)
        object.__setattr__(self, "intensity_range", (lo, hi))
        if lo < ZERO_SUPPRESSION_FLOOR:
            raise ValueError(f"intensity_range low bound {lo} is below {ZERO_SUPPRESSION_FLOOR}")
        if hi > ADC_MAX:
            raise ValueError(f"intensity_range high bound {hi} exceeds {ADC_MAX}")
        if lo > hi:
            raise ValueError(f"intensity_range {self.intensity_range} is empty")
        if not 0.0 < self.target_occupancy <= 1.0:
            raise ValueError(f"target_occupancy must be in (0, 1], got {self.target_occupancy}")
        if self.n_tracks < 0:
            raise ValueError(f"n_tracks must be non-negative, got {self.n_tracks}")


# ============================================================================
# INRV I/O
# ============================================================================


def load_volume(path: str | PathLike) -> Volume3D:
    """Read an INRV file.

    Args:
        path: Path of the file

    Returns:
        The stored volume, bit-exact

    Raises:
        FileNotFoundError: If the file does not exist
        FormatError: On bad magic, unsupported version, payload length mismatch,
            or a value above 1023
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"Volume file not found: {path}")
        raise FileNotFoundError(f"Volume file not found: {path}")

    data = path.read_bytes()
    if len(data) < _INRV_HEADER.size:
        logger.error(f"Truncated INRV header in {path} ({len(data)} bytes)")
        raise FormatError(f"Truncated INRV header in {path}")

    magic, version, c, z, r = _INRV_HEADER.unpack_from(data)
    if magic != INRV_MAGIC:
        logger.error(f"Bad magic {magic!r} in {path}")
        raise FormatError(f"Bad magic {magic!r} in {path}; expected {INRV_MAGIC!r}")
    if version != INRV_VERSION:
        logger.error(f"Unsupported INRV version {version} in {path}")
        raise FormatError(f"Unsupported INRV version {version}; expected {INRV_VERSION}")

    payload = data[_INRV_HEADER.size :]
    expected = c * z * r * 2
    if len(payload) != expected:
        logger.error(f"Payload length mismatch in {path}: {len(payload)} != {expected}")
        raise FormatError(
            f"payload length mismatch: {len(payload)} bytes for dims {c}x{z}x{r} "
            f"(expected {expected})"
        )
    if min(c, z, r) < 1:
        raise FormatError(f"Invalid dims {c}x{z}x{r} in {path}")

    values = np.frombuffer(payload, dtype="<u2")
    if values.size and values.max() > ADC_MAX:
        logger.error(f"Value {int(values.max())} above {ADC_MAX} in {path}")
        raise FormatError(f"Value {int(values.max())} above {ADC_MAX} in {path}")

    volume = Volume3D((c, z, r), values)
    logger.debug(f"Loaded volume {format_dims(volume.dims)} from {path}")
    return volume


def save_volume(v: Volume3D, path: str | PathLike) -> None:
    """Write a volume as an INRV file (header followed by little-endian u16 values)."""
    path = Path(path)
    header = _INRV_HEADER.pack(INRV_MAGIC, INRV_VERSION, *v.dims)
    try:
        with open(path, "wb") as file:
            file.write(header)
            file.write(v.values.astype("<u2").tobytes())
    except OSError as e:
        logger.error(f"Failed to write volume to {path}: {e}")
        raise
    logger.debug(f"Wrote volume {format_dims(v.dims)} to {path}")


# ============================================================================
# NORMALIZATION
# ============================================================================


def axis_coords(size: int) -> np.ndarray:
    """Normalized coordinates of every index of an axis of ``size`` cells."""
    if size == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(size, dtype=np.float64) / (size - 1)


def normalize_coords(index: Sequence[int], dims: Sequence[int]) -> NormalizedCoord:
    """Map a grid index to the model input domain.

    An axis of size ``D`` maps index ``t`` to ``-1 + 2t/(D-1)``; size-1 axes map to 0.

    Example:
        >>> normalize_coords((0, 124, 15), (192, 249, 16)).x
        (-1.0, 0.0, 1.0)
    """
    dims = check_dims(dims)
    if len(index) != 3:
        raise ValueError(f"Expected a three-component index, got {tuple(index)}")
    coords = []
    for t, size in zip(index, dims, strict=True):
        if not 0 <= t < size:
            raise ValueError(f"Index {tuple(index)} out of range for dims {dims}")
        coords.append(0.0 if size == 1 else -1.0 + 2.0 * t / (size - 1))
    return NormalizedCoord((coords[0], coords[1], coords[2]))


def grid_coords(dims: Sequence[int]) -> np.ndarray:
    """Normalized coordinates of every cell, shape ``(c*z*r, 3)``, in flat order."""
    dims = check_dims(dims)
    axes = np.meshgrid(*(axis_coords(size) for size in dims), indexing="ij")
    return np.stack([a.reshape(-1) for a in axes], axis=1)


def coords_for(dims: Sequence[int], flat_indices: np.ndarray) -> np.ndarray:
    """Normalized coordinates of the given flat indices, shape ``(n, 3)``."""
    dims = check_dims(dims)
    flat_indices = np.asarray(flat_indices, dtype=np.int64)
    n_cells = dims[0] * dims[1] * dims[2]
    if flat_indices.size and (flat_indices.min() < 0 or flat_indices.max() >= n_cells):
        raise ValueError(f"Flat index out of range for dims {format_dims(dims)}")
    unravelled = np.unravel_index(flat_indices, dims)
    columns = [axis_coords(size)[idx] for size, idx in zip(dims, unravelled, strict=True)]
    return np.stack(columns, axis=-1).reshape(-1, 3)


def normalize_value(adc: int) -> float:
    """Map an ADC count in [0, 1023] to [0, 1]."""
    if not 0 <= adc <= ADC_MAX:
        raise ValueError(f"ADC value {adc} outside [0, {ADC_MAX}]")
    return adc / ADC_MAX


def denormalize_value(u: float) -> int:
    """Map a normalized value back to an ADC count, rounding half-to-even and clamping."""
    return int(min(max(round(u * ADC_MAX), 0), ADC_MAX))


def normalize_values(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) / ADC_MAX


def denormalize_values(u: np.ndarray) -> np.ndarray:
    """Vectorized ``denormalize_value``; non-finite inputs clamp to the nearest bound."""
    scaled = np.nan_to_num(np.asarray(u, dtype=np.float64) * ADC_MAX, nan=0.0)
    return np.clip(np.rint(scaled), 0, ADC_MAX).astype(np.uint16)


# ============================================================================
# STATISTICS AND RESAMPLING
# ============================================================================


def occupancy(v: Volume3D) -> float:
    """Fraction of nonzero cells."""
    return np.count_nonzero(v.values) / v.size


def is_zero_suppressed(v: Volume3D, floor: int = ZERO_SUPPRESSION_FLOOR) -> bool:
    """True when every nonzero value is at least ``floor``."""
    nonzero = v.values[v.values > 0]
    return bool(nonzero.size == 0 or nonzero.min() >= floor)


def resuppress(v: Volume3D, floor: int = ZERO_SUPPRESSION_FLOOR) -> Volume3D:
    """Zero every value below ``floor``."""
    values = v.values.copy()
    values[values < floor] = 0
    return Volume3D(v.dims, values)


def downsample(v: Volume3D, factors: Sequence[int]) -> Volume3D:
    """Strided decimation keeping indices ``0, f, 2f, ...`` on every axis.

    Output dims are ``ceil(dim / f)``; kept values are not modified.

    Example:
        >>> downsample(Volume3D.zeros((192, 249, 16)), (2, 2, 1)).dims
        (96, 125, 16)
    """
    if len(factors) != 3 or any(int(f) < 1 for f in factors):
        raise ValueError(f"Downsample factors must be three positive integers, got {factors}")
    fc, fz, fr = (int(f) for f in factors)
    kept = v.grid()[::fc, ::fz, ::fr]
    return Volume3D(kept.shape, kept.reshape(-1))


# ============================================================================
# SYNTHETIC TRACKS
# ============================================================================


def _stamp(
    acc: np.ndarray, point: np.ndarray, amplitude: float, lo: int, hi: int, limit: int
) -> int:
    """Deposit a Gaussian blob at ``point`` and return how many cells became occupied.

    At most ``limit`` cells become newly occupied; the strongest deposits win.
    """
    dims = np.array(acc.shape)
    center = np.rint(point).astype(np.int64)
    start = np.maximum(center - 1, 0)
    stop = np.minimum(center + 2, dims)
    if np.any(stop <= start):
        return 0
    ranges = [np.arange(a, b, dtype=np.float64) for a, b in zip(start, stop, strict=True)]
    grids = np.meshgrid(*ranges, indexing="ij")
    d2 = sum((g - p) ** 2 for g, p in zip(grids, point, strict=True))
    deposit = np.minimum(amplitude * np.exp(-d2 / (2.0 * KERNEL_SIGMA**2)), hi)

    block = acc[tuple(slice(a, b) for a, b in zip(start, stop, strict=True))]
    merged = np.maximum(block, deposit)
    fresh = (np.rint(merged) >= lo) & ~(np.rint(block) >= lo)
    n_fresh = int(np.count_nonzero(fresh))
    if n_fresh > limit:
        candidates = np.flatnonzero(fresh)
        order = np.argsort(-deposit.reshape(-1)[candidates], kind="stable")
        dropped = candidates[order[max(limit, 0):]]
        merged.reshape(-1)[dropped] = block.reshape(-1)[dropped]
        n_fresh = max(limit, 0)
    block[...] = merged
    return n_fresh


def _rasterize_arc(
    acc: np.ndarray,
    rng: np.random.Generator,
    amplitude: float,
    lo: int,
    hi: int,
    occupied: int,
    budget: int,
) -> int:
    """Trace one quadratic arc through the grid until it exits or the budget is met."""
    dims = np.array(acc.shape, dtype=np.float64)
    live = dims > 1

    start = rng.uniform(0.0, 1.0, size=3) * (dims - 1)
    direction = rng.normal(size=3)
    direction[2] = abs(direction[2])  # tracks travel outward through the layers
    direction[~live] = 0.0
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        return occupied + _stamp(acc, start, amplitude, lo, hi, budget - occupied)
    direction /= norm

    curvature = rng.normal(scale=0.05, size=3)
    curvature[~live] = 0.0
    curvature -= curvature.dot(direction) * direction

    max_length = 2.0 * dims.max()
    t = 0.0
    while t <= max_length and occupied < budget:
        point = start + t * direction + 0.5 * t * t * curvature
        if np.any(point < -0.5) or np.any(point > dims - 0.5):
            break
        jitter = rng.uniform(0.85, 1.15)
        occupied += _stamp(acc, point, amplitude * jitter, lo, hi, budget - occupied)
        t += TRACK_STEP
    return occupied


def synth_tracks(cfg: SynthConfig) -> Volume3D:
    """Generate a sparse volume of smooth charged-particle-like tracks.

    Each track is a chain of quadratic arcs sampled every half cell and
    rasterized with a one-cell Gaussian kernel; values below the low intensity
    bound are suppressed to zero. Tracks stop once the running count of
    occupied cells reaches their share of ``target_occupancy``, and a single
    stamp never occupies more cells than that share leaves, so the measured
    occupancy lands within ``[target/2, 2*target]`` even for targets of a few
    cells.

    Args:
        cfg: Generator configuration

    Returns:
        A zero-suppressed volume; identical for identical configs

    Raises:
        ValueError: If no whole number of cells fits the occupancy band for the
            dims, or the tracks cannot fill the lower end of it
    """
    c, z, r = cfg.dims
    n_cells = c * z * r
    lo, hi = cfg.intensity_range

    if cfg.n_tracks == 0:
        if cfg.target_occupancy >= 1.0:
            logger.error("Target occupancy 1.0 is unreachable with zero tracks")
            raise ValueError("target occupancy unreachable: occupancy 1.0 requested with 0 tracks")
        return Volume3D.zeros(cfg.dims)

    fewest = math.ceil(cfg.target_occupancy / 2 * n_cells)
    most = math.floor(2 * cfg.target_occupancy * n_cells)
    if fewest > most:
        logger.error(
            f"No whole cell count fits occupancy {cfg.target_occupancy:.3g} "
            f"in {format_dims(cfg.dims)}"
        )
        raise ValueError(
            f"target occupancy unreachable: {cfg.target_occupancy} for dims "
            f"{format_dims(cfg.dims)} ({n_cells} cells)"
        )

    rng = make_rng(cfg.seed)
    target_cells = min(max(fewest, round(cfg.target_occupancy * n_cells)), most, n_cells)
    acc = np.zeros(cfg.dims, dtype=np.float64)
    occupied = 0

    for k in range(cfg.n_tracks):
        budget = math.ceil(target_cells * (k + 1) / cfg.n_tracks)
        amplitude = rng.uniform(min(2.0 * lo, hi), hi)
        arcs = 0
        while occupied < budget and arcs < MAX_ARCS_PER_TRACK:
            occupied = _rasterize_arc(acc, rng, amplitude, lo, hi, occupied, budget)
            arcs += 1

    quantized = np.rint(np.minimum(acc, hi))
    quantized[quantized < lo] = 0
    volume = Volume3D(cfg.dims, quantized.astype(np.uint16).reshape(-1))

    measured = occupancy(volume)
    if not fewest <= np.count_nonzero(volume.values) <= most:
        logger.error(
            f"Reached occupancy {measured:.3g} outside [{cfg.target_occupancy / 2:.3g}, "
            f"{2 * cfg.target_occupancy:.3g}]"
        )
        raise ValueError(
            f"target occupancy unreachable: {cfg.target_occupancy} for dims "
            f"{format_dims(cfg.dims)} with {cfg.n_tracks} tracks (reached {measured:.3g})"
        )
    logger.info(
        f"Synthesized {cfg.n_tracks} tracks in {format_dims(cfg.dims)} "
        f"(occupancy {measured:.4%}, seed {cfg.seed})"
    )
    return volume
