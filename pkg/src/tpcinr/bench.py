"""Desk-scale experiment suites: super-resolution reconstruction, rate-distortion
and sampling efficiency.

A sweep expands into independent cells (one training run each). Cells run in a
thread pool and come back in sweep order, so records never depend on
completion order. Reports are pure functions of the records.

Example:
    >>> spec = SweepSpec(seeds=(0, 1, 2, 3, 4))
    >>> records = run_sampling_efficiency(spec, jobs=4)
    >>> emit_report(records, "sampling.csv")
"""

import csv
import logging
from collections import defaultdict
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import StrEnum
from os import PathLike
from pathlib import Path

import numpy as np

from tpcinr.codec import compress, compression_ratio, decompress, error_map
from tpcinr.models import DEFAULT_DEPTH, DEFAULT_WIDTH, ModelKind, ModelSpec
from tpcinr.sampling import SamplingMethod
from tpcinr.train import TrainConfig, evaluate_full
from tpcinr.utils import Dims, format_dims, median
from tpcinr.volume import ADC_MAX, SynthConfig, Volume3D, downsample, load_volume, synth_tracks

logger = logging.getLogger(__name__)

DEFAULT_SCALES: dict[str, Dims] = {
    "S1": (1, 1, 1),
    "S4": (2, 2, 1),
    "S8": (2, 2, 2),
    "S16": (4, 4, 1),
}
R2_THRESHOLD = 0.95


class Suite(StrEnum):
    RECONSTRUCTION = "reconstruction"
    RATE_DISTORTION = "rate-distortion"
    SAMPLING = "sampling"


VolumeSource = SynthConfig | str | PathLike


@dataclass(frozen=True)
class SweepSpec:
    """Grid of one experiment sweep.

    Attributes:
        volumes: Synthetic configs or INRV paths
        kinds: Model kinds (reconstruction and rate-distortion suites)
        widths: Hidden widths; the first is used where a single width is needed
        depth: Hidden layers
        methods: Sampling methods (sampling suite)
        rhos: Sampling ratios (sampling suite)
        scales: Scale name to per-axis ``(c, z, r)`` decimation factors
        seeds: Training and initialization seeds; orderings use medians over them
        train: Base training configuration (epochs, batch size, optimizer, sampler)
        baselines: CSV files of external codec results to list side by side
    """

    volumes: tuple[VolumeSource, ...] = (SynthConfig(),)
    kinds: tuple[ModelKind, ...] = (ModelKind.SIREN,)
    widths: tuple[int, ...] = (DEFAULT_WIDTH,)
    depth: int = DEFAULT_DEPTH
    methods: tuple[SamplingMethod, ...] = (
        SamplingMethod.IMPORTANCE,
        SamplingMethod.RANDOM,
        SamplingMethod.ENTROPY,
    )
    rhos: tuple[float, ...] = (0.05, 0.1, 0.25)
    scales: dict[str, Dims] = field(default_factory=lambda: dict(DEFAULT_SCALES))
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    train: TrainConfig = TrainConfig(epochs=200)
    baselines: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(ModelKind(k) for k in self.kinds))
        object.__setattr__(self, "methods", tuple(SamplingMethod(m) for m in self.methods))
        for name in ("volumes", "kinds", "widths", "methods", "rhos", "scales", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"Sweep {name} must not be empty")
        if any(w < 1 for w in self.widths) or self.depth < 1:
            raise ValueError(f"Widths and depth must be positive, got {self.widths}, {self.depth}")
        if any(not 0 < rho <= 1 for rho in self.rhos):
            raise ValueError(f"Every rho must lie in (0, 1], got {self.rhos}")
        for name, factors in self.scales.items():
            if len(factors) != 3 or any(int(f) < 1 for f in factors):
                raise ValueError(f"Scale {name} needs three positive factors, got {factors}")


@dataclass
class BenchRecord:
    """One sweep cell: its coordinates and measured metrics. Field order is the CSV column order."""

    suite: str
    volume: str
    kind: str
    width: int
    depth: int
    method: str
    rho: float
    scale: str
    factors: str
    seed: int
    epochs: int
    full_mse: float
    raw_mse: float
    l1_mean: float
    psnr: float
    compression_ratio: float
    total_wall_ms: float
    per_epoch_wall_ms: float
    setup_ms: float
    sample_ms: float


@dataclass(frozen=True)
class BenchCell:
    """Coordinates of one training run in a sweep."""

    suite: Suite
    volume_index: int
    kind: ModelKind
    width: int
    method: SamplingMethod
    rho: float
    scale: str
    factors: Dims
    seed: int

    def describe(self, volume_label: str = "") -> str:
        label = volume_label or f"volume[{self.volume_index}]"
        parts = [str(self.suite), label, f"{self.kind}/{self.width}", f"{self.method}@{self.rho:g}"]
        if self.scale:
            parts.append(f"{self.scale}({format_dims(self.factors)})")
        parts.append(f"seed={self.seed}")
        return " ".join(parts)


@dataclass(frozen=True)
class PropertyCheck:
    """Outcome of one ordering or trend check in a summary report."""

    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class BaselineRow:
    codec: str
    compression_ratio: float
    mse: float


# ============================================================================
# SWEEP EXPANSION
# ============================================================================


def plan_cells(spec: SweepSpec, suite: Suite | str) -> list[BenchCell]:
    """Expand a sweep into cells in a fixed, reproducible order."""
    suite = Suite(suite)
    base_method = spec.train.sampler.method
    base_rho = spec.train.sampler.rho
    cells: list[BenchCell] = []
    for v in range(len(spec.volumes)):
        match suite:
            case Suite.RECONSTRUCTION:
                for kind in spec.kinds:
                    for scale, factors in spec.scales.items():
                        for seed in spec.seeds:
                            cells.append(
                                BenchCell(suite, v, kind, spec.widths[0], base_method, base_rho,
                                          scale, tuple(factors), seed)
                            )
            case Suite.RATE_DISTORTION:
                for kind in spec.kinds:
                    for width in spec.widths:
                        for seed in spec.seeds:
                            cells.append(
                                BenchCell(suite, v, kind, width, base_method, base_rho,
                                          "", (1, 1, 1), seed)
                            )
            case Suite.SAMPLING:
                for method in spec.methods:
                    rhos = (1.0,) if method is SamplingMethod.FULL else spec.rhos
                    for rho in rhos:
                        for seed in spec.seeds:
                            cells.append(
                                BenchCell(suite, v, ModelKind.SIREN, spec.widths[0], method, rho,
                                          "", (1, 1, 1), seed)
                            )
    return cells


def volume_label(source: VolumeSource) -> str:
    if isinstance(source, SynthConfig):
        return f"synth-{format_dims(source.dims)}-occ{source.target_occupancy:g}-seed{source.seed}"
    return Path(source).stem


def resolve_volume(source: VolumeSource) -> tuple[str, Volume3D]:
    """Load or synthesize a sweep volume; returns a label and the volume."""
    if isinstance(source, SynthConfig):
        return volume_label(source), synth_tracks(source)
    return volume_label(source), load_volume(Path(source))


# ============================================================================
# EXECUTION
# ============================================================================


def run_cell(spec: SweepSpec, cell: BenchCell, label: str, volume: Volume3D) -> BenchRecord:
    """Train, encode, decode at full resolution and measure one cell."""
    model_spec = ModelSpec.default(
        cell.kind, width=cell.width, depth=spec.depth, init_seed=cell.seed, ffnet_seed=cell.seed
    )
    cfg = replace(spec.train, seed=cell.seed)
    if cell.suite is Suite.SAMPLING:
        cfg = replace(cfg, sampler=replace(cfg.sampler, method=cell.method, rho=cell.rho))

    training_volume = downsample(volume, cell.factors)
    artifact, log = compress(
        training_volume,
        model_spec,
        cfg,
        source_dims=volume.dims,
        downsample_factors=cell.factors,
    )
    full_mse = evaluate_full(artifact.model(), volume)
    report = error_map(decompress(artifact), volume)
    logger.info(f"{cell.describe(label)}: full_mse={full_mse:.3e} psnr={report.psnr:.2f}")

    return BenchRecord(
        suite=str(cell.suite),
        volume=label,
        kind=str(cell.kind),
        width=cell.width,
        depth=spec.depth,
        method=str(cfg.sampler.method),
        rho=float(cfg.sampler.rho),
        scale=cell.scale,
        factors=format_dims(cell.factors),
        seed=cell.seed,
        epochs=cfg.epochs,
        full_mse=full_mse,
        raw_mse=full_mse * ADC_MAX**2,
        l1_mean=report.l1_mean,
        psnr=report.psnr,
        compression_ratio=compression_ratio(artifact),
        total_wall_ms=log.total_wall_ms,
        per_epoch_wall_ms=log.mean_epoch_ms,
        setup_ms=log.setup_ms,
        sample_ms=log.mean_sample_ms,
    )


def run_suite(spec: SweepSpec, suite: Suite | str, jobs: int = 1) -> list[BenchRecord]:
    """Run every cell of ``suite`` with up to ``jobs`` concurrent cells; records follow sweep order."""
    if jobs < 1:
        raise ValueError(f"jobs must be positive, got {jobs}")
    cells = plan_cells(spec, suite)
    volumes = [resolve_volume(source) for source in spec.volumes]
    logger.info(f"Running {len(cells)} {Suite(suite)} cells with {jobs} job(s)")

    def run(cell: BenchCell) -> BenchRecord:
        label, volume = volumes[cell.volume_index]
        return run_cell(spec, cell, label, volume)

    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(run, cells))


def run_reconstruction_suite(spec: SweepSpec, jobs: int = 1) -> list[BenchRecord]:
    """Train on decimated copies of each volume and evaluate at full resolution, per scale."""
    return run_suite(spec, Suite.RECONSTRUCTION, jobs)


def run_rate_distortion(spec: SweepSpec, jobs: int = 1) -> list[BenchRecord]:
    """Compress each volume at every width and record compression ratio against MSE."""
    return run_suite(spec, Suite.RATE_DISTORTION, jobs)


def run_sampling_efficiency(spec: SweepSpec, jobs: int = 1) -> list[BenchRecord]:
    """Train the baseline SIREN under every sampling method and ratio."""
    return run_suite(spec, Suite.SAMPLING, jobs)


SUITE_RUNNERS: dict[Suite, Callable[[SweepSpec, int], list[BenchRecord]]] = {
    Suite.RECONSTRUCTION: run_reconstruction_suite,
    Suite.RATE_DISTORTION: run_rate_distortion,
    Suite.SAMPLING: run_sampling_efficiency,
}


# ============================================================================
# ANALYSIS
# ============================================================================


def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line through ``(x, y)``.

    Returns:
        Tuple of (slope, intercept, R squared)

    Example:
        >>> linear_fit_r2([0.1, 0.5, 1.0], [1.0, 5.0, 10.0])[2]
        1.0
    """
    x_arr = np.asarray(x, dtype=np.float64)
    y_arr = np.asarray(y, dtype=np.float64)
    if x_arr.size != y_arr.size or x_arr.size < 2:
        raise ValueError(f"Need at least two paired points, got {x_arr.size} and {y_arr.size}")
    slope, intercept = np.polyfit(x_arr, y_arr, 1)
    residual = y_arr - (slope * x_arr + intercept)
    ss_res = float(np.sum(residual**2))
    ss_tot = float(np.sum((y_arr - y_arr.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), round(r2, 12)


def _medians(records: Iterable[BenchRecord], key: Callable[[BenchRecord], tuple], metric: str) -> dict:
    groups: dict[tuple, list[float]] = defaultdict(list)
    for record in records:
        groups[key(record)].append(getattr(record, metric))
    return {k: median(v) for k, v in groups.items()}


def _ordered(name: str, values: list[tuple[str, float]], strict: bool = False) -> PropertyCheck:
    """Check that ``values`` is non-decreasing (or increasing) in list order."""
    offending = [
        f"{a}={va:.4g} > {b}={vb:.4g}" if not strict else f"{a}={va:.4g} >= {b}={vb:.4g}"
        for (a, va), (b, vb) in zip(values, values[1:], strict=False)
        if (va > vb if not strict else va >= vb)
    ]
    return PropertyCheck(name, not offending, "; ".join(offending))


def check_orderings(records: Sequence[BenchRecord]) -> list[PropertyCheck]:
    """Evaluate the ordering and trend properties the records support."""
    checks: list[PropertyCheck] = []
    by_suite: dict[str, list[BenchRecord]] = defaultdict(list)
    for record in records:
        by_suite[record.suite].append(record)

    recon = by_suite.get(Suite.RECONSTRUCTION, [])
    if recon:
        med = _medians(recon, lambda r: (r.volume, r.kind, r.scale), "full_mse")
        for volume, kind in sorted({(r.volume, r.kind) for r in recon}):
            present = [s for s in ("S1", "S4", "S16") if (volume, kind, s) in med]
            if len(present) >= 2:
                checks.append(
                    _ordered(
                        f"{volume} {kind}: MSE non-decreasing in scale",
                        [(s, med[(volume, kind, s)]) for s in present],
                    )
                )
            if (volume, kind, "S8") in med and (volume, kind, "S16") in med:
                s8, s16 = med[(volume, kind, "S8")], med[(volume, kind, "S16")]
                checks.append(
                    PropertyCheck(
                        f"{volume} {kind}: S8 (decimates r) worse than S16",
                        s8 > s16,
                        f"S8={s8:.4g} S16={s16:.4g}",
                    )
                )

    rate = by_suite.get(Suite.RATE_DISTORTION, [])
    if rate:
        med_mse = _medians(rate, lambda r: (r.volume, r.kind, r.width), "full_mse")
        med_ratio = _medians(rate, lambda r: (r.volume, r.kind, r.width), "compression_ratio")
        for volume, kind in sorted({(r.volume, r.kind) for r in rate}):
            widths = sorted({r.width for r in rate if (r.volume, r.kind) == (volume, kind)})
            if len(widths) < 2:
                continue
            checks.append(
                _ordered(
                    f"{volume} {kind}: ratio increases as width decreases",
                    [(f"w{w}", med_ratio[(volume, kind, w)]) for w in reversed(widths)],
                    strict=True,
                )
            )
            checks.append(
                _ordered(
                    f"{volume} {kind}: MSE non-increasing in model bytes",
                    [(f"w{w}", med_mse[(volume, kind, w)]) for w in reversed(widths)],
                )
            )
        for volume, width in sorted({(v, w) for v, _, w in med_mse}):
            siren = med_mse.get((volume, ModelKind.SIREN, width))
            mlp = med_mse.get((volume, ModelKind.MLP, width))
            if siren is not None and mlp is not None:
                checks.append(
                    PropertyCheck(
                        f"{volume} w{width}: SIREN MSE <= MLP MSE",
                        siren <= mlp,
                        f"siren={siren:.4g} mlp={mlp:.4g}",
                    )
                )

    sampling = by_suite.get(Suite.SAMPLING, [])
    if sampling:
        med = _medians(sampling, lambda r: (r.volume, r.method, r.rho), "full_mse")
        for volume, rho in sorted({(r.volume, r.rho) for r in sampling}):
            imp = med.get((volume, SamplingMethod.IMPORTANCE, rho))
            rnd = med.get((volume, SamplingMethod.RANDOM, rho))
            if imp is not None and rnd is not None:
                checks.append(
                    PropertyCheck(
                        f"{volume} rho={rho:g}: IMPORTANCE MSE <= RANDOM MSE",
                        imp <= rnd,
                        f"importance={imp:.4g} random={rnd:.4g}",
                    )
                )
        epoch_ms = _medians(sampling, lambda r: (r.volume, r.method, r.rho), "per_epoch_wall_ms")
        for volume in sorted({r.volume for r in sampling}):
            for method in (SamplingMethod.IMPORTANCE, SamplingMethod.RANDOM):
                rhos = sorted(rho for (v, m, rho) in epoch_ms if (v, m) == (volume, method))
                if len(rhos) < 3:
                    continue
                *_, r2 = linear_fit_r2(rhos, [epoch_ms[(volume, method, rho)] for rho in rhos])
                checks.append(
                    PropertyCheck(
                        f"{volume} {method}: epoch time linear in rho",
                        r2 > R2_THRESHOLD,
                        f"R2={r2:.4f}",
                    )
                )
            setup = _medians(sampling, lambda r: (r.volume, r.method, r.rho), "setup_ms")
            rhos = sorted(rho for (v, m, rho) in setup if v == volume and m == SamplingMethod.ENTROPY)
            if rhos and (volume, SamplingMethod.IMPORTANCE, rhos[0]) in setup:
                ent = setup[(volume, SamplingMethod.ENTROPY, rhos[0])]
                imp = setup[(volume, SamplingMethod.IMPORTANCE, rhos[0])]
                checks.append(
                    PropertyCheck(
                        f"{volume} rho={rhos[0]:g}: ENTROPY setup exceeds IMPORTANCE setup",
                        ent > imp,
                        f"entropy={ent:.3f} ms importance={imp:.3f} ms",
                    )
                )
    return checks


def summarize(records: Sequence[BenchRecord], baselines: Sequence[BaselineRow] = ()) -> str:
    """Markdown summary: median tables per suite followed by PASS/FAIL checks."""
    if not records:
        raise ValueError("Cannot summarize an empty record list")
    lines = ["# Benchmark summary", ""]
    key = lambda r: (r.suite, r.volume, r.kind, r.width, r.method, r.rho, r.scale)  # noqa: E731
    mse = _medians(records, key, "full_mse")
    ratio = _medians(records, key, "compression_ratio")
    epoch_ms = _medians(records, key, "per_epoch_wall_ms")
    setup_ms = _medians(records, key, "setup_ms")
    counts: dict[tuple, int] = defaultdict(int)
    for record in records:
        counts[key(record)] += 1

    lines += [
        "| suite | volume | kind | width | method | rho | scale | seeds "
        "| median MSE | median raw MSE | ratio | epoch ms | setup ms |",
        "|---|---|---|---|---|---|---|---|---|---|---|---|---|",
    ]
    for k in sorted(mse):
        suite, volume, kind, width, method, rho, scale = k
        lines.append(
            f"| {suite} | {volume} | {kind} | {width} | {method} | {rho:g} | {scale or '-'} "
            f"| {counts[k]} | {mse[k]:.4e} | {mse[k] * ADC_MAX**2:.2f} | {ratio[k]:.2f} "
            f"| {epoch_ms[k]:.2f} | {setup_ms[k]:.3f} |"
        )

    if baselines:
        lines += ["", "## External baselines", "", "| codec | ratio | MSE |", "|---|---|---|"]
        lines += [f"| {b.codec} | {b.compression_ratio:.2f} | {b.mse:.4e} |" for b in baselines]

    lines += ["", "## Checks", ""]
    checks = check_orderings(records)
    if not checks:
        lines.append("No ordering checks apply to these records.")
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        detail = f" ({check.detail})" if check.detail else ""
        lines.append(f"- {status}: {check.name}{detail}")
    return "\n".join(lines) + "\n"


# ============================================================================
# CSV I/O
# ============================================================================

RECORD_COLUMNS = tuple(f.name for f in fields(BenchRecord))
BASELINE_COLUMNS = ("codec", "compression_ratio", "mse")


def _format_cell(value: object) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_records(records: Sequence[BenchRecord], path: str | PathLike) -> None:
    with open(path, mode="w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow(RECORD_COLUMNS)
        for record in records:
            writer.writerow([_format_cell(v) for v in asdict(record).values()])


def read_records(path: str | PathLike) -> list[BenchRecord]:
    """Parse a CSV written by ``emit_report`` back into records, bit-exact."""
    casts = {f.name: f.type for f in fields(BenchRecord)}
    with open(path, encoding="utf-8", newline="") as file:
        reader = csv.DictReader(file)
        if tuple(reader.fieldnames or ()) != RECORD_COLUMNS:
            raise ValueError(f"Unexpected bench CSV header {reader.fieldnames}")
        return [BenchRecord(**{k: casts[k](v) for k, v in row.items()}) for row in reader]  # type: ignore[operator]


def read_baselines(path: str | PathLike) -> list[BaselineRow]:
    """Read an external codec table with columns ``codec,compression_ratio,mse``."""
    path = Path(path)
    if not path.exists():
        logger.error(f"Baseline file not found: {path}")
        raise FileNotFoundError(f"Baseline file not found: {path}")
    with open(path, encoding="utf-8", newline="") as file:
        reader = csv.DictReader(file)
        if tuple(reader.fieldnames or ()) != BASELINE_COLUMNS:
            logger.error(f"Unexpected baseline header {reader.fieldnames} in {path}")
            raise ValueError(
                f"Baseline CSV {path} must have columns {','.join(BASELINE_COLUMNS)}"
            )
        return [
            BaselineRow(row["codec"], float(row["compression_ratio"]), float(row["mse"]))
            for row in reader
        ]


def emit_report(
    records: Sequence[BenchRecord],
    path: str | PathLike,
    baselines: Sequence[BaselineRow] = (),
) -> Path:
    """Write the records as CSV at ``path`` and the markdown summary next to it.

    Returns:
        Path of the summary (``path`` with a ``.md`` suffix)

    Raises:
        ValueError: If ``records`` is empty
        OSError: If either file cannot be written
    """
    if not records:
        logger.error("No bench records to report")
        raise ValueError("No bench records to report")
    path = Path(path)
    summary_path = path.with_suffix(".md")
    try:
        write_records(records, path)
        summary_path.write_text(summarize(records, baselines), encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write report {path}: {e}")
        raise
    failed = [c.name for c in check_orderings(records) if not c.passed]
    if failed:
        logger.warning(f"{len(failed)} check(s) failed: {'; '.join(failed)}")
    logger.info(f"Wrote {len(records)} records to {path} and summary to {summary_path}")
    return summary_path

