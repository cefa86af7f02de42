"""Training-point selection.

Four strategies pick the cells a training epoch visits:

- ``FULL``: every cell once, in flat order (optionally shuffled).
- ``RANDOM``: uniform draws with replacement.
- ``IMPORTANCE``: draws with replacement, ``P(i)`` proportional to ``|y_i|``
  and to a small ``epsilon`` for zero cells.
- ``ENTROPY``: a histogram of the values sets per-bin quotas that make the
  sample's value distribution as flat as the data allows; rare values are
  over-represented while common ones are thinned.

Every sampler takes an explicit ``numpy.random.Generator``; nothing reads
global random state.
"""

import logging
from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property
from typing import Protocol

import numpy as np

from tpcinr.volume import ADC_MAX, Volume3D, coords_for, normalize_values

logger = logging.getLogger(__name__)

# Defaults
DEFAULT_RHO = 0.1
DEFAULT_BINS = 256
EPSILON_SCALE = 1e-3


class SamplingMethod(StrEnum):
    FULL = "full"
    IMPORTANCE = "importance"
    ENTROPY = "entropy"
    RANDOM = "random"


@dataclass(frozen=True)
class SamplerSpec:
    """Sampler choice and parameters.

    Attributes:
        method: Sampling strategy
        rho: Sampling ratio, the fraction of cells an epoch touches (ignored by FULL)
        epsilon: Zero-cell weight for IMPORTANCE in normalized units; None derives it
            from the data (see ``default_epsilon``)
        bins: Histogram bin count for ENTROPY
        value_range: ``(lo, hi)`` ENTROPY histogram bounds in ADC counts; None uses the
            data minimum and maximum
    """

    method: SamplingMethod = SamplingMethod.IMPORTANCE
    rho: float = DEFAULT_RHO
    epsilon: float | None = None
    bins: int = DEFAULT_BINS
    value_range: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", SamplingMethod(self.method))
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"Sampling ratio rho must lie in (0, 1], got {self.rho}")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.bins < 1:
            raise ValueError(f"bins must be at least 1, got {self.bins}")
        if self.value_range is not None and self.value_range[1] < self.value_range[0]:
            raise ValueError(f"value_range {self.value_range} is empty")


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Aligned flat indices, normalized coordinates and normalized target values."""

    indices: np.ndarray
    coords: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if not (len(self.indices) == len(self.coords) == len(self.targets)):
            raise ValueError(
                f"SampleSet lengths differ: {len(self.indices)} indices, "
                f"{len(self.coords)} coords, {len(self.targets)} targets"
            )

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class ImportanceWeights:
    """Per-cell sampling probabilities (summing to one) and the zero-cell weight used."""

    w: np.ndarray
    epsilon: float

    @cached_property
    def cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.w)
        cdf[-1] = 1.0
        return cdf


@dataclass(frozen=True, eq=False)
class HistogramModel:
    """Equal-width histogram ``P(y)`` of the values over ``[lo, hi]``.

    Attributes:
        edges: ``B + 1`` strictly increasing bin boundaries
        counts: Number of values per bin
        N: Total number of values
        B: Number of bins
        assignment: Bin of every value, aligned with the input
    """

    edges: np.ndarray
    counts: np.ndarray
    N: int
    B: int
    assignment: np.ndarray


@dataclass(frozen=True, eq=False)
class BinAllocation:
    """Per-bin sample counts for one entropy-sampling draw.

    Attributes:
        take: Samples drawn from each bin; sums to ``round(N * rho)``
        C: Base per-bin quota ``N * rho / B``
        rho: Sampling ratio
    """

    take: np.ndarray
    C: float
    rho: float

    @property
    def total(self) -> int:
        return int(self.take.sum())


# ============================================================================
# IMPORTANCE SAMPLING
# ============================================================================


def default_epsilon(values: np.ndarray) -> float:
    """``1e-3`` times the mean nonzero magnitude (or ``1e-3`` when every value is zero)."""
    values = np.asarray(values, dtype=np.float64)
    nonzero = np.abs(values[values != 0])
    if nonzero.size == 0:
        return EPSILON_SCALE
    return float(EPSILON_SCALE * nonzero.mean())


def importance_weights(values: np.ndarray, epsilon: float | None = None) -> ImportanceWeights:
    """Weights ``|y_i|`` for nonzero values and ``epsilon`` for zeros, normalized to sum one.

    Example:
        >>> importance_weights(np.array([0, 2, 0, 3]), epsilon=0.5).w
        array([0.08333333, 0.33333333, 0.08333333, 0.5       ])
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("importance_weights needs at least one value")
    if epsilon is None:
        epsilon = default_epsilon(values)
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    raw = np.where(values != 0, np.abs(values), epsilon)
    return ImportanceWeights(w=raw / raw.sum(), epsilon=float(epsilon))


def weighted_sample(w: ImportanceWeights, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` indices i.i.d. with replacement, ``P(i) = w_i``, by inverse-CDF lookup."""
    if n < 1:
        raise ValueError(f"Sample count must be at least 1, got {n}")
    u = rng.random(n)
    indices = np.searchsorted(w.cdf, u, side="right")
    return np.minimum(indices, w.w.size - 1).astype(np.int64)


def random_sample(n_total: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` indices uniformly with replacement over ``[0, n_total)``."""
    if n < 1:
        raise ValueError(f"Sample count must be at least 1, got {n}")
    if n_total < 1:
        raise ValueError(f"Population must be non-empty, got {n_total}")
    return rng.integers(0, n_total, size=n, dtype=np.int64)


# ============================================================================
# ENTROPY-BASED SAMPLING
# ============================================================================


def entropy_histogram(
    values: np.ndarray, B: int, value_range: tuple[float, float] | None = None
) -> HistogramModel:
    """Equal-width histogram over ``[lo, hi]``; ``hi`` falls in the last bin.

    Args:
        values: Flat values
        B: Number of bins
        value_range: Bounds overriding the data minimum and maximum; values outside
            are clipped into the end bins

    Raises:
        ValueError: If ``B < 1`` or ``values`` is empty
    """
    if B < 1:
        raise ValueError(f"Bin count B must be at least 1, got {B}")
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("entropy_histogram needs at least one value")

    lo, hi = value_range if value_range is not None else (values.min(), values.max())
    lo, hi = float(lo), float(hi)
    if hi < lo:
        raise ValueError(f"Histogram range [{lo}, {hi}] is empty")

    if hi == lo:
        edges = lo + np.arange(B + 1, dtype=np.float64) / B
        assignment = np.zeros(values.size, dtype=np.int64)
    else:
        edges = np.linspace(lo, hi, B + 1)
        scaled = np.floor((values - lo) / (hi - lo) * B)
        assignment = np.clip(scaled, 0, B - 1).astype(np.int64)

    counts = np.bincount(assignment, minlength=B).astype(np.int64)
    return HistogramModel(edges=edges, counts=counts, N=values.size, B=B, assignment=assignment)


def _water_level(counts: np.ndarray, budget: int) -> float:
    """Level ``L`` with ``sum(min(counts, L)) == budget``."""
    remaining = float(budget)
    ordered = np.sort(counts.astype(np.float64))
    for k, count in enumerate(ordered):
        open_bins = ordered.size - k
        if count * open_bins >= remaining:
            return remaining / open_bins
        remaining -= count
    return float(ordered[-1])


def entropy_allocate(hist: HistogramModel, rho: float) -> BinAllocation:
    """Per-bin quotas flattening the sampled value distribution.

    The base quota is ``C = N * rho / B``. When every bin holds at least ``C``
    values each takes ``C``; otherwise bins below ``C`` are taken whole and the
    deficit is water-filled across the bins holding more, raising their common
    quota until the budget ``round(N * rho)`` is met. Empty bins take nothing.
    Fractional quotas round half-to-even; a rounding residual is settled one
    unit at a time over the bins in decreasing count order, so the total is
    exact and no quota goes negative or past its bin count.

    Example:
        >>> hist = entropy_histogram(np.array([0.0] * 5 + [1.0] * 95), B=2)
        >>> entropy_allocate(hist, 0.2).take
        array([ 5, 15])
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"Sampling ratio rho must lie in (0, 1], got {rho}")
    budget = round(hist.N * rho)
    C = hist.N * rho / hist.B

    level = _water_level(hist.counts, budget)
    quota = np.minimum(hist.counts.astype(np.float64), level)
    take = np.rint(quota).astype(np.int64)
    residual = budget - int(take.sum())
    step = 1 if residual > 0 else -1
    by_count = np.argsort(-hist.counts, kind="stable")
    while residual:
        for b in by_count:
            if residual == 0:
                break
            if (take[b] < hist.counts[b]) if step > 0 else (take[b] > 0):
                take[b] += step
                residual -= step
    return BinAllocation(take=take, C=C, rho=rho)


class EntropyPlan:
    """Histogram, allocation and bin membership prepared once for repeated draws."""

    def __init__(
        self,
        values: np.ndarray,
        rho: float,
        B: int,
        value_range: tuple[float, float] | None = None,
    ):
        self.hist = entropy_histogram(values, B, value_range)
        self.allocation = entropy_allocate(self.hist, rho)
        self.order = np.argsort(self.hist.assignment, kind="stable")
        self.starts = np.concatenate([[0], np.cumsum(self.hist.counts)[:-1]]).astype(np.int64)
        self.bin_of_slot = np.repeat(np.arange(self.hist.B), self.allocation.take)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform with-replacement draws inside each bin, returned in shuffled order."""
        counts = self.hist.counts[self.bin_of_slot]
        offsets = np.floor(rng.random(self.bin_of_slot.size) * counts).astype(np.int64)
        offsets = np.minimum(offsets, counts - 1)
        picked = self.order[self.starts[self.bin_of_slot] + offsets]
        return rng.permutation(picked)


def entropy_sample(
    values: np.ndarray,
    rho: float,
    B: int,
    rng: np.random.Generator,
    value_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """Entropy-based sample of ``round(N * rho)`` indices (histogram, allocation, draw)."""
    return EntropyPlan(values, rho, B, value_range).draw(rng)


# ============================================================================
# GATHER
# ============================================================================


def gather(volume: Volume3D, indices: np.ndarray) -> SampleSet:
    """Look up normalized coordinates and targets for flat indices (duplicates kept)."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    if indices.size and (indices.min() < 0 or indices.max() >= volume.size):
        raise ValueError(f"Index out of range for a volume of {volume.size} cells")
    return SampleSet(
        indices=indices,
        coords=coords_for(volume.dims, indices),
        targets=normalize_values(volume.values[indices]),
    )


# ============================================================================
# PREPARED SAMPLERS
# ============================================================================


class Sampler(Protocol):
    """A prepared sampler producing the flat indices of one epoch."""

    method: SamplingMethod

    def draw(self, rng: np.random.Generator) -> np.ndarray: ...


class FullSampler:
    method = SamplingMethod.FULL

    def __init__(self, n_total: int, shuffle: bool = False):
        self.n_total = n_total
        self.shuffle = shuffle

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.shuffle:
            return rng.permutation(self.n_total).astype(np.int64)
        return np.arange(self.n_total, dtype=np.int64)


class RandomSampler:
    method = SamplingMethod.RANDOM

    def __init__(self, n_total: int, n: int):
        self.n_total = n_total
        self.n = n

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return random_sample(self.n_total, self.n, rng)


class ImportanceSampler:
    method = SamplingMethod.IMPORTANCE

    def __init__(self, values: np.ndarray, n: int, epsilon: float | None = None):
        self.weights = importance_weights(values, epsilon)
        _ = self.weights.cdf
        self.n = n

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return weighted_sample(self.weights, self.n, rng)


class EntropySampler:
    method = SamplingMethod.ENTROPY

    def __init__(
        self,
        values: np.ndarray,
        n: int,
        bins: int,
        value_range: tuple[float, float] | None = None,
    ):
        rho = min(1.0, n / values.size)
        self.plan = EntropyPlan(values, rho, bins, value_range)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return self.plan.draw(rng)


def points_per_epoch(spec: SamplerSpec, n_total: int) -> int:
    """Cells one epoch touches: all of them for FULL, otherwise ``round(rho * N)`` (at least 1)."""
    if spec.method is SamplingMethod.FULL:
        return n_total
    return max(1, round(spec.rho * n_total))


def build_sampler(
    spec: SamplerSpec,
    values: np.ndarray,
    n: int | None = None,
    shuffle: bool = False,
) -> Sampler:
    """Prepare the sampler described by ``spec`` over normalized ``values``.

    Args:
        spec: Sampler choice and parameters
        values: Flat normalized values of the whole volume
        n: Points per epoch; defaults to ``points_per_epoch(spec, len(values))``
        shuffle: Shuffle the FULL ordering each epoch

    Returns:
        A sampler whose ``draw(rng)`` yields one epoch of flat indices
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    n_total = values.size
    n = n if n is not None else points_per_epoch(spec, n_total)

    match spec.method:
        case SamplingMethod.FULL:
            return FullSampler(n_total, shuffle=shuffle)
        case SamplingMethod.RANDOM:
            return RandomSampler(n_total, n)
        case SamplingMethod.IMPORTANCE:
            return ImportanceSampler(values, n, spec.epsilon)
        case SamplingMethod.ENTROPY:
            value_range = None
            if spec.value_range is not None:
                value_range = (spec.value_range[0] / ADC_MAX, spec.value_range[1] / ADC_MAX)
            return EntropySampler(values, n, spec.bins, value_range)

    raise ValueError(f"Unsupported sampling method {spec.method}")
