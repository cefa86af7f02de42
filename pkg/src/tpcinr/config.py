"""Declarative run configuration.

A config document is a YAML mapping with optional sections ``synth``, ``model``,
``train``, ``sampler`` and ``bench``. Every key is optional; unknown sections or
keys are rejected before any work starts. Command-line flags are layered on top
with ``with_overrides`` and always win.

Example:
    .. code-block:: yaml

        model:
          kind: siren
          width: 64
        train:
          epochs: 200
          seed: 7
        sampler:
          method: importance
          rho: 0.1
"""

import logging
import os
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from os import PathLike
from pathlib import Path
from typing import Any, Self

import numpy as np
import yaml

from tpcinr.bench import DEFAULT_SCALES, SweepSpec
from tpcinr.errors import UsageError
from tpcinr.models import ModelKind, ModelSpec
from tpcinr.nncore import AdamHyper
from tpcinr.sampling import SamplerSpec, SamplingMethod
from tpcinr.train import TrainConfig
from tpcinr.utils import Dims, parse_dims
from tpcinr.volume import SynthConfig

logger = logging.getLogger(__name__)

SEED_ENV = "TPCINR_SEED"

SECTION_KEYS: dict[str, frozenset[str]] = {
    "synth": frozenset({"dims", "tracks", "occupancy", "intensity_range", "seed"}),
    "model": frozenset(
        {
            "kind",
            "width",
            "depth",
            "hidden_dims",
            "siren_omega0",
            "ffnet_features",
            "ffnet_sigma",
            "ffnet_seed",
            "wire_omega0",
            "wire_s0",
            "init_seed",
        }
    ),
    "train": frozenset(
        {
            "epochs",
            "batch_size",
            "steps_per_epoch",
            "lr",
            "beta1",
            "beta2",
            "eps",
            "seed",
            "loss_eval_every",
            "shuffle",
            "precision",
        }
    ),
    "sampler": frozenset({"method", "rho", "epsilon", "bins", "value_range"}),
    "bench": frozenset(
        {"volumes", "kinds", "widths", "depth", "methods", "rhos", "scales", "seeds", "baselines"}
    ),
}


def _dims(value: Any, key: str) -> Dims:
    try:
        if isinstance(value, str):
            return parse_dims(value)
        if len(value) != 3:
            raise ValueError(f"expected three values, got {value!r}")
        return (int(value[0]), int(value[1]), int(value[2]))
    except (TypeError, ValueError) as e:
        raise UsageError(f"Invalid {key}: {e}") from e


def _as_tuple(value: Any) -> tuple:
    return tuple(value) if isinstance(value, list | tuple) else (value,)


def resolve_seed(flag: int | None, file_seed: int | None = None) -> int:
    """Master seed: flag, else config file, else ``TPCINR_SEED``, else fresh OS entropy."""
    if flag is not None:
        return int(flag)
    if file_seed is not None:
        return int(file_seed)
    env_seed = os.getenv(SEED_ENV)
    if env_seed:
        try:
            return int(env_seed)
        except ValueError as e:
            logger.error(f"{SEED_ENV} must be an integer, got {env_seed!r}")
            raise UsageError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from e
    return int(np.random.SeedSequence().entropy % 2**32)


@dataclass(frozen=True)
class CliConfig:
    """Validated config document: one mapping of raw values per section."""

    sections: dict[str, dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any] | None) -> Self:
        """Validate section and key names.

        Raises:
            UsageError: On a non-mapping document, unknown section or unknown key
        """
        if data is None:
            return cls({})
        if not isinstance(data, Mapping):
            raise UsageError(f"Config must be a mapping of sections, got {type(data).__name__}")
        sections: dict[str, dict[str, Any]] = {}
        for name, body in data.items():
            if name not in SECTION_KEYS:
                logger.error(f"Unknown config section {name!r}")
                raise UsageError(
                    f"Unknown config section {name!r}; valid sections: {', '.join(SECTION_KEYS)}"
                )
            body = body or {}
            if not isinstance(body, Mapping):
                raise UsageError(f"Config section {name!r} must be a mapping")
            unknown = sorted(set(body) - SECTION_KEYS[name])
            if unknown:
                logger.error(f"Unknown key(s) {unknown} in config section {name!r}")
                raise UsageError(f"Unknown key {unknown[0]!r} in config section {name!r}")
            sections[name] = dict(body)
        return cls(sections)

    @classmethod
    def from_yaml(cls, path: str | PathLike) -> Self:
        path = Path(path)
        if not path.exists():
            logger.error(f"Config file not found: {path}")
            raise FileNotFoundError(f"Config file not found: {path}")
        try:
            with open(path, encoding="utf-8") as file:
                data = yaml.safe_load(file)
        except yaml.YAMLError as e:
            logger.error(f"Invalid YAML in {path}: {e}")
            raise UsageError(f"Invalid YAML in {path}: {e}") from e
        logger.debug(f"Loaded config from {path}")
        return cls.from_mapping(data)

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.sections.get(name, {}))

    def get(self, section: str, key: str, default: Any = None) -> Any:
        return self.sections.get(section, {}).get(key, default)

    def with_overrides(self, section: str, **values: Any) -> Self:
        """Copy with ``values`` applied to ``section``; ``None`` means the flag was not given."""
        given = {k: v for k, v in values.items() if v is not None}
        merged = {name: dict(body) for name, body in self.sections.items()}
        merged[section] = {**merged.get(section, {}), **given}
        return type(self).from_mapping(merged)

    # ------------------------------------------------------------------------
    # Typed builders
    # ------------------------------------------------------------------------

    def synth_config(self, seed: int | None = None) -> SynthConfig:
        s = self.section("synth")
        defaults = SynthConfig()
        try:
            return SynthConfig(
                dims=_dims(s["dims"], "synth.dims") if "dims" in s else defaults.dims,
                n_tracks=int(s.get("tracks", defaults.n_tracks)),
                target_occupancy=float(s.get("occupancy", defaults.target_occupancy)),
                intensity_range=tuple(s.get("intensity_range", defaults.intensity_range)),
                seed=resolve_seed(seed, s.get("seed")),
            )
        except (TypeError, ValueError) as e:
            raise UsageError(f"Invalid synth config: {e}") from e

    def model_spec(self, init_seed: int = 0) -> ModelSpec:
        """Model spec; ``init_seed`` applies unless the document sets one."""
        m = self.section("model")
        try:
            kind = ModelKind(m.pop("kind", ModelKind.SIREN))
            width = int(m.pop("width", ModelSpec().hidden_dims[0]))
            depth = int(m.pop("depth", len(ModelSpec().hidden_dims)))
            hidden = tuple(int(d) for d in m.pop("hidden_dims", (width,) * depth))
            m.setdefault("init_seed", init_seed)
            spec = ModelSpec(kind=kind, hidden_dims=hidden, **m)
            spec.validate()
        except (TypeError, ValueError) as e:
            raise UsageError(f"Invalid model config: {e}") from e
        return spec

    def sampler_spec(self) -> SamplerSpec:
        s = self.section("sampler")
        try:
            method = SamplingMethod(s.get("method", SamplingMethod.FULL))
            rho = float(s.get("rho", 1.0 if method is SamplingMethod.FULL else SamplerSpec().rho))
            value_range = s.get("value_range")
            return SamplerSpec(
                method=method,
                rho=rho,
                epsilon=None if s.get("epsilon") is None else float(s["epsilon"]),
                bins=int(s.get("bins", SamplerSpec().bins)),
                value_range=None if value_range is None else (float(value_range[0]), float(value_range[1])),
            )
        except (TypeError, ValueError, IndexError) as e:
            raise UsageError(f"Invalid sampler config: {e}") from e

    def train_config(self, seed: int | None = None) -> TrainConfig:
        t = self.section("train")
        defaults = TrainConfig()
        try:
            hyper = AdamHyper(
                lr=float(t.get("lr", defaults.optimizer.lr)),
                beta1=float(t.get("beta1", defaults.optimizer.beta1)),
                beta2=float(t.get("beta2", defaults.optimizer.beta2)),
                eps=float(t.get("eps", defaults.optimizer.eps)),
            )
            steps = t.get("steps_per_epoch")
            return TrainConfig(
                epochs=int(t.get("epochs", defaults.epochs)),
                batch_size=int(t.get("batch_size", defaults.batch_size)),
                steps_per_epoch=None if steps is None else int(steps),
                optimizer=hyper,
                sampler=self.sampler_spec(),
                seed=resolve_seed(seed, t.get("seed")),
                loss_eval_every=int(t.get("loss_eval_every", defaults.loss_eval_every)),
                shuffle=bool(t.get("shuffle", defaults.shuffle)),
            )
        except (TypeError, ValueError) as e:
            raise UsageError(f"Invalid train config: {e}") from e

    def sweep_spec(self, seed: int | None = None) -> SweepSpec:
        """Sweep grid; ``train``/``sampler``/``model`` sections supply the per-cell base settings."""
        b = self.section("bench")
        defaults = SweepSpec()
        try:
            volumes = tuple(
                SynthConfig(
                    dims=_dims(v.get("dims", SynthConfig().dims), "bench.volumes.dims"),
                    n_tracks=int(v.get("tracks", SynthConfig().n_tracks)),
                    target_occupancy=float(v.get("occupancy", SynthConfig().target_occupancy)),
                    seed=int(v.get("seed", 0)),
                )
                if isinstance(v, Mapping)
                else str(v)
                for v in _as_tuple(b.get("volumes", ()))
            ) or defaults.volumes
            scales = b.get("scales")
            model = self.section("model")
            train = self.train_config(seed=seed)
            if "epochs" not in self.section("train"):
                train = replace(train, epochs=defaults.train.epochs)
            return SweepSpec(
                volumes=volumes,
                kinds=_as_tuple(b.get("kinds", model.get("kind", defaults.kinds))),
                widths=tuple(int(w) for w in _as_tuple(b.get("widths", model.get("width", defaults.widths)))),
                depth=int(b.get("depth", model.get("depth", defaults.depth))),
                methods=_as_tuple(b.get("methods", defaults.methods)),
                rhos=tuple(float(r) for r in _as_tuple(b.get("rhos", defaults.rhos))),
                scales=(
                    {str(k): _dims(v, f"bench.scales.{k}") for k, v in scales.items()}
                    if scales
                    else dict(DEFAULT_SCALES)
                ),
                seeds=tuple(int(s) for s in _as_tuple(b.get("seeds", defaults.seeds))),
                train=train,
                baselines=tuple(str(p) for p in _as_tuple(b.get("baselines", ()))),
            )
        except (TypeError, ValueError) as e:
            raise UsageError(f"Invalid bench config: {e}") from e
