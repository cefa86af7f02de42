import math
import re
from collections.abc import Iterable, Sequence

import numpy as np

Dims = tuple[int, int, int]


def parse_dims(text: str) -> Dims:
    """
    Parse a dimension string of the form ``CxZxR``.

    Args:
        text: Dimension string (e.g., '192x249x16')

    Returns:
        Tuple of three positive integers

    Example:
        >>> parse_dims('48x64x8')
        (48, 64, 8)
    """
    match = re.fullmatch(r"\s*(\d+)\s*[xX,]\s*(\d+)\s*[xX,]\s*(\d+)\s*", text)
    if match is None:
        raise ValueError(f"Invalid dims {text!r}; expected the form CxZxR (e.g. 192x249x16)")
    dims = (int(match.group(1)), int(match.group(2)), int(match.group(3)))
    if min(dims) < 1:
        raise ValueError(f"Invalid dims {text!r}; every axis must be at least 1")
    return dims


def format_dims(dims: Sequence[int]) -> str:
    """Render dims as ``CxZxR``."""
    return "x".join(str(d) for d in dims)


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """
    Build a counter-based (Philox) generator from a seed.

    Every randomized operation takes a generator built here; nothing reads
    global random state.

    Args:
        seed: Integer seed or an already spawned SeedSequence

    Returns:
        A numpy Generator backed by Philox
    """
    return np.random.Generator(np.random.Philox(seed))


def split_rng(seed: int, n: int) -> list[np.random.Generator]:
    """
    Derive ``n`` independent generator streams from one seed.

    Example:
        >>> sampler_rng, shuffle_rng = split_rng(7, 2)
    """
    return [make_rng(child) for child in np.random.SeedSequence(seed).spawn(n)]


def fixed_order_sum(values: Iterable[float]) -> float:
    """Correctly rounded sum, independent of the order and chunking of its inputs."""
    return math.fsum(values)


def median(values: Sequence[float]) -> float:
    """Median of a non-empty sequence, ignoring NaN entries."""
    arr = np.asarray(values, dtype=np.float64)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        return math.nan
    return float(np.median(arr))
