"""Command-line entry point: ``tpcinr {synth,info,compress,decompress,eval,bench}``.

Exit codes: 0 success, 1 usage or validation error, 2 I/O error, 3 numerical
failure. Errors are printed to stderr as ``error: <message>``.
"""

import argparse
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

from dotenv import load_dotenv

from tpcinr.bench import (
    SUITE_RUNNERS,
    Suite,
    emit_report,
    plan_cells,
    read_baselines,
    volume_label,
)
from tpcinr.codec import (
    INRC_MAGIC,
    compress,
    compression_ratio,
    decompress,
    deserialize,
    error_map,
    serialize,
)
from tpcinr.config import CliConfig, resolve_seed
from tpcinr.errors import UsageError
from tpcinr.logger import configure_logging
from tpcinr.models import ModelKind
from tpcinr.sampling import SamplingMethod
from tpcinr.utils import format_dims, parse_dims
from tpcinr.volume import (
    downsample,
    is_zero_suppressed,
    load_volume,
    occupancy,
    save_volume,
    synth_tracks,
)

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "TPCINR_LOG_LEVEL"
LOG_FILE_ENV = "TPCINR_LOG_FILE"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


class _ArgumentParser(argparse.ArgumentParser):
    """Parser that raises UsageError instead of exiting, so main() owns the exit code."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _dims_arg(text: str):
    try:
        return parse_dims(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _load_config(args: argparse.Namespace) -> CliConfig:
    return CliConfig.from_yaml(args.config) if args.config else CliConfig()


# ============================================================================
# SUBCOMMANDS
# ============================================================================


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load_config(args).with_overrides(
        "synth", dims=args.dims, tracks=args.tracks, occupancy=args.occupancy
    )
    seed = resolve_seed(args.seed, cfg.get("synth", "seed"))
    print(f"master seed: {seed}")
    volume = synth_tracks(cfg.synth_config(seed=seed))
    save_volume(volume, args.output)
    print(f"wrote {args.output}: dims {format_dims(volume.dims)}, occupancy {occupancy(volume):.6f}")
    return EXIT_OK


def cmd_info(args: argparse.Namespace) -> int:
    path = Path(args.input)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, "rb") as file:
        magic = file.read(4)

    if magic == INRC_MAGIC:
        a = deserialize(path)
        print(f"artifact: {a.spec.kind} {list(a.spec.hidden_dims)}")
        print(f"precision: {a.precision}")
        print(f"weights: {a.weight_count}")
        print(f"source dims: {format_dims(a.source_dims)}")
        print(f"downsample factors: {format_dims(a.downsample_factors)}")
        print(f"compression ratio: {compression_ratio(a):.4f}")
        return EXIT_OK

    volume = load_volume(path)
    print(f"dims: {format_dims(volume.dims)}")
    print(f"cells: {volume.size}")
    print(f"occupancy: {occupancy(volume):.6f}")
    print(f"range: {int(volume.values.min())}..{int(volume.values.max())}")
    print(f"zero suppressed: {'yes' if is_zero_suppressed(volume) else 'no'}")
    return EXIT_OK


def cmd_compress(args: argparse.Namespace) -> int:
    cfg = (
        _load_config(args)
        .with_overrides("model", kind=args.model, width=args.width, depth=args.depth)
        .with_overrides(
            "sampler", method=args.sampler, rho=args.rho, epsilon=args.epsilon, bins=args.bins
        )
        .with_overrides(
            "train",
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr=args.lr,
            precision=args.precision,
        )
    )
    seed = resolve_seed(args.seed, cfg.get("train", "seed"))
    print(f"master seed: {seed}")
    train_cfg = cfg.train_config(seed=seed)
    spec = cfg.model_spec(init_seed=seed)

    source = load_volume(args.input)
    factors = args.downsample or (1, 1, 1)
    volume = downsample(source, factors) if factors != (1, 1, 1) else source
    artifact, log = compress(
        volume,
        spec,
        train_cfg,
        precision=cfg.get("train", "precision", "fp32"),
        source_dims=source.dims,
        downsample_factors=factors,
    )
    serialize(artifact, args.output)
    log_path = Path(args.log_csv) if args.log_csv else Path(args.output).with_suffix(".csv")
    log.to_csv(log_path)

    print(f"wrote {args.output} ({Path(args.output).stat().st_size} bytes) and {log_path}")
    print(f"final full mse: {log.final_full_mse:.6e}")
    print(f"compression ratio: {compression_ratio(artifact):.4f}")
    return EXIT_OK


def cmd_decompress(args: argparse.Namespace) -> int:
    artifact = deserialize(args.input)
    volume = decompress(
        artifact, args.dims, resuppress=args.resuppress, max_workers=args.jobs
    )
    save_volume(volume, args.output)
    print(f"wrote {args.output}: dims {format_dims(volume.dims)}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    report = error_map(load_volume(args.decoded), load_volume(args.reference))
    print(f"mse: {report.mse:.6f}")
    print(f"normalized mse: {report.normalized_mse:.6e}")
    print(f"l1 mean: {report.l1_mean:.6f}")
    print(f"psnr: {report.psnr:.4f}")
    if args.error_map:
        save_volume(report.abs_error, args.error_map)
        print(f"wrote error map {args.error_map}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        suite = Suite(args.suite)
    except ValueError as e:
        raise UsageError(
            f"Unknown suite {args.suite!r}; valid suites: {', '.join(s.value for s in Suite)}"
        ) from e
    cfg = _load_config(args)
    spec = cfg.sweep_spec(seed=resolve_seed(args.seed, cfg.get("train", "seed")))

    if args.dry_run:
        labels = [volume_label(source) for source in spec.volumes]
        cells = plan_cells(spec, suite)
        for cell in cells:
            print(cell.describe(labels[cell.volume_index]))
        print(f"{len(cells)} cells")
        return EXIT_OK

    records = SUITE_RUNNERS[suite](spec, args.jobs)
    baselines = [row for path in spec.baselines for row in read_baselines(path)]
    output = Path(args.output or f"bench-{suite}.csv")
    summary = emit_report(records, output, baselines)
    print(f"wrote {output} and {summary}")
    return EXIT_OK


# ============================================================================
# PARSER
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config document; flags override its values")
    common.add_argument("--seed", type=int, help="Master seed (default: config, TPCINR_SEED, or fresh)")
    common.add_argument("--log-level", help=f"Logging level (default: ${LOG_LEVEL_ENV} or INFO)")
    common.add_argument("--log-file", help=f"Also log to this file (default: ${LOG_FILE_ENV})")

    parser = _ArgumentParser(prog="tpcinr", description="Neural compression of sparse TPC volumes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic track volume")
    p.add_argument("--dims", type=_dims_arg, help="Volume dims CxZxR (default 96x125x16)")
    p.add_argument("--tracks", type=int, help="Number of tracks (default 20)")
    p.add_argument("--occupancy", type=float, help="Target occupancy (default 0.01)")
    p.add_argument("-o", "--output", required=True, help="Output INRV file")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("info", parents=[common], help="Describe an INRV volume or INRC artifact")
    p.add_argument("input")
    p.set_defaults(handler=cmd_info)

    p = sub.add_parser("compress", parents=[common], help="Fit a network to a volume")
    p.add_argument("input", help="INRV volume")
    p.add_argument("--model", choices=[k.value for k in ModelKind])
    p.add_argument("--width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--sampler", choices=[m.value for m in SamplingMethod])
    p.add_argument("--rho", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--precision", choices=["fp32", "fp16"])
    p.add_argument("--downsample", type=_dims_arg, help="Train on a volume decimated by CxZxR")
    p.add_argument("--log-csv", help="Training log CSV (default: output with .csv suffix)")
    p.add_argument("-o", "--output", required=True, help="Output INRC file")
    p.set_defaults(handler=cmd_compress)

    p = sub.add_parser("decompress", parents=[common], help="Decode an artifact to a volume")
    p.add_argument("input", help="INRC artifact")
    p.add_argument("--dims", type=_dims_arg, help="Output dims (default: source dims)")
    p.add_argument("--resuppress", action="store_true", help="Zero decoded values below 64")
    p.add_argument("--jobs", type=int, default=1, help="Decode threads")
    p.add_argument("-o", "--output", required=True, help="Output INRV file")
    p.set_defaults(handler=cmd_decompress)

    p = sub.add_parser("eval", parents=[common], help="Compare a decoded volume to a reference")
    p.add_argument("decoded")
    p.add_argument("reference")
    p.add_argument("--error-map", help="Write the |decoded - reference| volume here")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="Run an experiment suite")
    p.add_argument("--suite", required=True, help=f"One of: {', '.join(s.value for s in Suite)}")
    p.add_argument("--jobs", type=int, default=1, help="Concurrent sweep cells")
    p.add_argument("--dry-run", action="store_true", help="Print the sweep grid and exit")
    p.add_argument("-o", "--output", help="Records CSV (default: bench-<suite>.csv)")
    p.set_defaults(handler=cmd_bench)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code."""
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
        configure_logging(
            args.log_level or os.getenv(LOG_LEVEL_ENV, "INFO"),
            args.log_file or os.getenv(LOG_FILE_ENV),
        )
        logger.debug(f"Running {args.command}")
        return args.handler(args)
    except FloatingPointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
