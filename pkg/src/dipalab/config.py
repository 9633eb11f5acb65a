"""Experiment specification and its TOML file format.

A config file looks like::

    schema = 1

    [experiment]
    regime = "scratch"              # or "pretrain-finetune"
    shots = [1, 5, 10, 20, "all"]
    losses = ["ce", "fl"]
    dipa = [false, true]
    seeds = [0, 1, 42, 123, 1234]

    [data]
    dir = "data"                    # optional: read a split written by `generate`

    [generator]
    total_samples = 15000

    [model]
    embed_dim = 32

    [train]
    learning_rate = [1e-3, 3e-3]    # lists here form the selection grid
    dipa_tau = 1.0

    [pretrain]
    total_samples = 15000

Every section is optional. Unknown sections or keys are errors.
"""

from __future__ import annotations

import itertools
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .augment import LOSS_KINDS, DipaConfig
from .data import GeneratorConfig
from .model import ModelConfig
from .results import ALL
from .trainer import DEFAULT_SEEDS, TrainConfig

SCHEMA_VERSION = 1
REGIMES = ("scratch", "pretrain-finetune")
DEFAULT_SHOTS = (1, 5, 10, 20, 100, 200, 500, ALL)

# train keys that may be given as lists and are then selected on validation accuracy
SEARCH_KEYS = ("learning_rate", "focal_gamma", "dipa_alpha", "dipa_tau")


class ConfigError(ValueError):
    """The config file is unreadable or describes an invalid experiment."""


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: tuple[float, ...] = (1e-3,)
    focal_gamma: tuple[float, ...] = (2.0,)
    dipa_alpha: tuple[float, ...] = (1.0,)
    dipa_tau: tuple[float, ...] = (1.0,)
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 15
    validation_subsample: int = 1000

    def candidates(self, loss_kind: str, dipa: bool, seed: int) -> list[TrainConfig]:
        """Every TrainConfig in the selection grid for one run.

        The focal exponent only varies for focal loss, and alpha/tau only
        when augmentation is on.
        """
        gammas = self.focal_gamma if loss_kind == "fl" else self.focal_gamma[:1]
        alphas = self.dipa_alpha if dipa else self.dipa_alpha[:1]
        taus = self.dipa_tau if dipa else self.dipa_tau[:1]
        out = []
        for lr, g, a, t in itertools.product(self.learning_rate, gammas, alphas, taus):
            out.append(
                TrainConfig(
                    loss_kind=loss_kind,
                    focal_gamma=g,
                    dipa=DipaConfig(alpha=a, tau=t, enabled=dipa),
                    learning_rate=lr,
                    batch_size=self.batch_size,
                    max_epochs=self.max_epochs,
                    patience=self.patience,
                    seed=seed,
                    validation_subsample=self.validation_subsample,
                )
            )
        return out


@dataclass(frozen=True)
class PretrainSettings:
    total_samples: int = 15000
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 15
    seed: int = 0
    source_dir: Path | None = None

    def train_config(self, batch_size: int, validation_subsample: int) -> TrainConfig:
        return TrainConfig(
            loss_kind="ce",
            learning_rate=self.learning_rate,
            batch_size=batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
            validation_subsample=validation_subsample,
        )


@dataclass(frozen=True)
class ExperimentSpec:
    regime: str = "scratch"
    shots: tuple = DEFAULT_SHOTS
    losses: tuple[str, ...] = LOSS_KINDS
    dipa: tuple[bool, ...] = (False, True)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    data_dir: Path | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        for name in ("shots", "losses", "dipa", "seeds"):
            values = getattr(self, name)
            if not values:
                raise ConfigError(f"experiment.{name} must not be empty")
            if len(set(values)) != len(values):
                raise ConfigError(f"experiment.{name} has duplicate entries")
        for k in self.shots:
            if not (k == ALL or (isinstance(k, int) and not isinstance(k, bool) and k >= 1)):
                raise ConfigError(f"shots must be positive integers or {ALL!r}, got {k!r}")
        for loss in self.losses:
            if loss not in LOSS_KINDS:
                raise ConfigError(f"unknown loss {loss!r}; expected one of {LOSS_KINDS}")
        if any(not isinstance(d, bool) for d in self.dipa):
            raise ConfigError("experiment.dipa entries must be booleans")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")

    def run_count(self) -> int:
        return len(self.shots) * len(self.losses) * len(self.dipa) * len(self.seeds)

    def with_seed(self, seed: int) -> "ExperimentSpec":
        """Same experiment on data generated from ``seed``."""
        return replace(self, generator=replace(self.generator, seed=seed))


_SECTIONS = {"experiment", "data", "generator", "model", "train", "pretrain"}
_EXPERIMENT_KEYS = {"regime", "shots", "losses", "dipa", "seeds"}
_MODEL_KEYS = {"embed_dim", "num_heads", "ffn_hidden", "num_blocks"}


def _check_keys(section: str, table: dict, allowed) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _tuple(value) -> tuple:
    return tuple(value) if isinstance(value, list) else (value,)


def _numbers(section: str, key: str, value) -> tuple[float, ...]:
    out = _tuple(value)
    if not out or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in out):
        raise ConfigError(f"{section}.{key} must be a number or a non-empty list of numbers")
    return tuple(float(v) for v in out)


def _section_fields(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def spec_from_dict(doc: dict, base_dir: Path | None = None) -> ExperimentSpec:
    """Build and validate a spec from a parsed config document."""
    base_dir = base_dir or Path(".")
    doc = dict(doc)
    schema = doc.pop("schema", None)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"config must declare schema = {SCHEMA_VERSION}, got {schema!r}")
    _check_keys("top level", doc, _SECTIONS)
    try:
        exp = doc.get("experiment", {})
        _check_keys("experiment", exp, _EXPERIMENT_KEYS)
        kw = {k: (_tuple(v) if k != "regime" else v) for k, v in exp.items()}

        data = doc.get("data", {})
        _check_keys("data", data, {"dir"})
        if "dir" in data:
            kw["data_dir"] = base_dir / data["dir"]

        gen = doc.get("generator", {})
        _check_keys("generator", gen, _section_fields(GeneratorConfig))
        gen = {k: tuple(v) if isinstance(v, list) else v for k, v in gen.items()}
        kw["generator"] = GeneratorConfig(**gen)

        model = doc.get("model", {})
        _check_keys("model", model, _MODEL_KEYS)
        kw["model"] = ModelConfig(**model)

        tr = doc.get("train", {})
        _check_keys("train", tr, _section_fields(TrainSettings))
        tr = {k: (_numbers("train", k, v) if k in SEARCH_KEYS else v) for k, v in tr.items()}
        settings = TrainSettings(**tr)
        settings.candidates("fl", True, 0)  # building them validates every combination
        kw["train"] = settings

        pre = doc.get("pretrain", {})
        _check_keys("pretrain", pre, _section_fields(PretrainSettings))
        if "source_dir" in pre:
            pre = {**pre, "source_dir": base_dir / pre["source_dir"]}
        pretrain = PretrainSettings(**pre)
        pretrain.train_config(settings.batch_size, settings.validation_subsample)
        kw["pretrain"] = pretrain

        return ExperimentSpec(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return spec_from_dict(doc, base_dir=path.parent)
