"""Training loop binding a coordinate network, a sampler and the Adam optimizer.

Each epoch draws the flat indices of the cells it visits, gathers their
coordinates and targets, and runs Adam steps over consecutive mini-batches.
The run is a pure function of ``(volume, spec, cfg)`` apart from the timing
columns of the log.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from os import PathLike

import numpy as np

from tpcinr.errors import NumericalError
from tpcinr.models import ModelParams, ModelSpec, build_model, eval_model
from tpcinr.nncore import AdamHyper, AdamState, adam_step, backward, mse_loss
from tpcinr.sampling import SamplerSpec, SamplingMethod, build_sampler, gather, points_per_epoch
from tpcinr.utils import fixed_order_sum, split_rng
from tpcinr.volume import ADC_MAX, Volume3D, grid_coords, normalize_values

logger = logging.getLogger(__name__)

# Defaults
DEFAULT_EPOCHS = 500
DEFAULT_BATCH_SIZE = 4096
DEFAULT_EVAL_EVERY = 10
EVAL_CHUNK = 65536

LOG_COLUMNS = ("epoch", "train_loss", "full_mse", "wall_ms")


@dataclass(frozen=True)
class TrainConfig:
    """Training budget, optimizer and sampler settings.

    Attributes:
        epochs: Number of epochs
        batch_size: Points per optimizer step
        steps_per_epoch: Fixed number of steps per epoch; None derives
            ``ceil(rho * N / batch_size)`` so an epoch touches ``rho * N`` points
        optimizer: Adam hyperparameters
        sampler: Sampler choice and parameters
        seed: Seed of the sampler and shuffle streams
        loss_eval_every: Evaluate the full-grid MSE every this many epochs (and at the end)
        shuffle: Shuffle the cell order each epoch under FULL sampling
    """

    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    steps_per_epoch: int | None = None
    optimizer: AdamHyper = AdamHyper()
    sampler: SamplerSpec = SamplerSpec(method=SamplingMethod.FULL, rho=1.0)
    seed: int = 0
    loss_eval_every: int = DEFAULT_EVAL_EVERY
    shuffle: bool = False

    def __post_init__(self):
        for name in ("epochs", "batch_size", "loss_eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError(f"steps_per_epoch must be positive, got {self.steps_per_epoch}")

    def points_per_epoch(self, n_total: int) -> int:
        if self.steps_per_epoch is not None and self.sampler.method is not SamplingMethod.FULL:
            return self.steps_per_epoch * self.batch_size
        return points_per_epoch(self.sampler, n_total)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    full_mse: float | None
    wall_ms: float
    sample_ms: float = 0.0

    @property
    def raw_mse(self) -> float | None:
        """Full-grid MSE in ADC counts squared."""
        return None if self.full_mse is None else self.full_mse * ADC_MAX**2


@dataclass
class TrainLog:
    """Per-epoch training record plus the one-off sampler setup cost."""

    records: list[EpochRecord] = field(default_factory=list)
    setup_ms: float = 0.0
    method: SamplingMethod = SamplingMethod.FULL

    @property
    def final_full_mse(self) -> float:
        for record in reversed(self.records):
            if record.full_mse is not None:
                return record.full_mse
        return math.nan

    @property
    def total_wall_ms(self) -> float:
        return self.setup_ms + sum(r.wall_ms for r in self.records)

    @property
    def mean_epoch_ms(self) -> float:
        return float(np.mean([r.wall_ms for r in self.records])) if self.records else math.nan

    @property
    def mean_sample_ms(self) -> float:
        return float(np.mean([r.sample_ms for r in self.records])) if self.records else math.nan

    def to_csv(self, path: str | PathLike) -> None:
        """Write ``epoch,train_loss,full_mse,wall_ms``; unevaluated epochs leave ``full_mse`` empty."""
        with open(path, mode="w", encoding="utf-8", newline="") as file:
            writer = csv.writer(file)
            writer.writerow(LOG_COLUMNS)
            for r in self.records:
                full = "" if r.full_mse is None else repr(r.full_mse)
                writer.writerow([r.epoch, repr(r.train_loss), full, repr(r.wall_ms)])

    @classmethod
    def from_csv(cls, path: str | PathLike) -> "TrainLog":
        with open(path, encoding="utf-8", newline="") as file:
            reader = csv.DictReader(file)
            if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
                raise ValueError(f"Unexpected training log header {reader.fieldnames}")
            records = [
                EpochRecord(
                    epoch=int(row["epoch"]),
                    train_loss=float(row["train_loss"]),
                    full_mse=float(row["full_mse"]) if row["full_mse"] else None,
                    wall_ms=float(row["wall_ms"]),
                )
                for row in reader
            ]
        return cls(records=records)


def evaluate_full(model: ModelParams, volume: Volume3D, chunk_size: int = EVAL_CHUNK) -> float:
    """MSE between the model over every normalized grid cell and the normalized volume."""
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be positive, got {chunk_size}")
    coords = grid_coords(volume.dims)
    predictions = np.concatenate(
        [eval_model(model, coords[i : i + chunk_size]) for i in range(0, len(coords), chunk_size)]
    )
    return mse_loss(predictions, normalize_values(volume.values))


def train(volume: Volume3D, spec: ModelSpec, cfg: TrainConfig) -> tuple[ModelParams, TrainLog]:
    """Fit a coordinate network to a volume.

    Args:
        volume: Target volume
        spec: Architecture to build (initialized from ``spec.init_seed``)
        cfg: Training configuration

    Returns:
        Tuple of (trained model, training log)

    Raises:
        NumericalError: If a loss, activation or gradient becomes non-finite; the
            error carries the epoch, step and layer

    Example:
        >>> model, log = train(volume, ModelSpec.default("siren", width=64), TrainConfig(epochs=50))
        >>> log.final_full_mse
    """
    model = build_model(spec)
    values = normalize_values(volume.values)
    sampler_rng, shuffle_rng = split_rng(cfg.seed, 2)

    start = time.perf_counter()
    sampler = build_sampler(
        cfg.sampler, values, n=cfg.points_per_epoch(volume.size), shuffle=cfg.shuffle
    )
    log = TrainLog(setup_ms=(time.perf_counter() - start) * 1e3, method=cfg.sampler.method)
    logger.debug(f"{cfg.sampler.method} sampler ready in {log.setup_ms:.2f} ms")
    draw_rng = shuffle_rng if cfg.sampler.method is SamplingMethod.FULL else sampler_rng

    layers = model.layers
    state = AdamState.zeros_like(layers, cfg.optimizer)
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        samples = gather(volume, sampler.draw(draw_rng))
        sample_ms = (time.perf_counter() - start) * 1e3

        weighted_losses = []
        for step, lo in enumerate(range(0, len(samples), cfg.batch_size)):
            hi = lo + cfg.batch_size
            try:
                grads, loss = backward(
                    model.with_layers(layers), samples.coords[lo:hi], samples.targets[lo:hi]
                )
            except NumericalError as e:
                logger.error(f"Training diverged at epoch {epoch}, step {step}: {e}")
                raise NumericalError(
                    f"Training diverged at epoch {epoch}, step {step}: {e}",
                    layer=e.layer,
                    epoch=epoch,
                    step=step,
                ) from e
            layers, state = adam_step(layers, grads, state)
            weighted_losses.append(loss * len(samples.targets[lo:hi]))

        train_loss = fixed_order_sum(weighted_losses) / len(samples)
        wall_ms = (time.perf_counter() - start) * 1e3
        if not math.isfinite(train_loss):
            logger.error(f"Non-finite training loss at epoch {epoch}")
            raise NumericalError(f"Non-finite training loss at epoch {epoch}", epoch=epoch)

        full_mse = None
        if epoch % cfg.loss_eval_every == 0 or epoch == cfg.epochs:
            full_mse = evaluate_full(model.with_layers(layers), volume)
            logger.info(
                f"epoch {epoch}/{cfg.epochs}: train_loss={train_loss:.3e} "
                f"full_mse={full_mse:.3e} ({wall_ms:.1f} ms)"
            )
        else:
            logger.debug(f"epoch {epoch}/{cfg.epochs}: train_loss={train_loss:.3e}")
        log.records.append(EpochRecord(epoch, train_loss, full_mse, wall_ms, sample_ms))

    return model.with_layers(layers), log
