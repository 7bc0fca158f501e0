"""Experiment configuration: an INI file with one section per component.

Every field of the generator, model, training and optimizer settings can be
set; unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import types
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

from .datagen import GenSpec
from .losses import LossKind, LossSpec
from .optimizer import OptimSpec
from .trainer import BiasSource, ModelConfig, TrainSpec

DEFAULT_GAMMA_GRID = (0.0, 0.5, 1.0, 2.0, 5.0, 10.0)
DEFAULT_INJECTION_GRID = (0, 100, 1000)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "default"
    output_dir: str = "experiments"
    gen: GenSpec = field(default_factory=GenSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSpec = field(default_factory=lambda: TrainSpec(max_epochs=5))
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    injection_grid: tuple[int, ...] = DEFAULT_INJECTION_GRID
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    workers: int = 1

    def __post_init__(self):
        if not self.gamma_grid or not self.injection_grid or not self.seeds:
            raise ConfigError("gamma_grid, injection_grid and seeds must be nonempty")
        if any(g < 0 for g in self.gamma_grid):
            raise ConfigError("gamma values must be nonnegative")
        if any(n < 0 for n in self.injection_grid):
            raise ConfigError("injection counts must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def experiment_dir(self) -> Path:
        return Path(self.output_dir) / self.name

    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


_LOSS_KEYS = {"loss": "kind", "gamma": "gamma", "clamp_eps": "clamp_eps", "reduction": "reduction"}
_TRAIN_KEYS = ("early_stopping", "validation_split", "max_epochs", "bias_model_source", "bias_checkpoint")


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _parse_scalar(raw: str, typ, where: str):
    raw = raw.strip()
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if raw.lower() in ("", "none"):
            return None
        return _parse_scalar(raw, args[0], where)
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        if isinstance(typ, type) and issubclass(typ, str):
            return typ(raw.lower())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from exc
    raise ConfigError(f"{where}: unsupported field type {typ}")


def _parse_list(raw: str, conv) -> tuple:
    items = [x.strip() for x in raw.replace(";", ",").split(",") if x.strip()]
    return tuple(conv(x) for x in items)


def _build(cls, section: configparser.SectionProxy, skip=()):
    types_ = _field_types(cls)
    kwargs = {}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in types_:
            raise ConfigError(f"[{section.name}] unknown key {key!r}")
        kwargs[key] = _parse_scalar(raw, types_[key], f"[{section.name}] {key}")
    return kwargs


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    known = {"experiment", "gen", "model", "train", "optim"}
    for name in cp.sections():
        if name not in known:
            raise ConfigError(f"{source}: unknown section [{name}]")

    base = ExperimentConfig()
    exp_kwargs = {}
    if cp.has_section("experiment"):
        sec = cp["experiment"]
        for key, raw in sec.items():
            where = f"[experiment] {key}"
            try:
                if key in ("name", "output_dir"):
                    exp_kwargs[key] = raw.strip()
                elif key == "gamma_grid":
                    exp_kwargs[key] = _parse_list(raw, float)
                elif key == "injection_grid":
                    exp_kwargs[key] = _parse_list(raw, int)
                elif key == "seeds":
                    exp_kwargs[key] = _parse_list(raw, int)
                elif key == "workers":
                    exp_kwargs[key] = int(raw)
                else:
                    raise ConfigError(f"{where}: unknown key")
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"{where}: cannot parse {raw!r}") from exc

    gen = base.gen
    if cp.has_section("gen"):
        gen = _wrap(lambda: GenSpec(**{**dataclasses.asdict(base.gen), **_build(GenSpec, cp["gen"])}), "[gen]")
    model = base.model
    if cp.has_section("model"):
        model = _wrap(lambda: ModelConfig(**{**dataclasses.asdict(base.model), **_build(ModelConfig, cp["model"])}),
                      "[model]")
    optim = base.train.optim
    if cp.has_section("optim"):
        optim = _wrap(lambda: OptimSpec(**{**dataclasses.asdict(optim), **_build(OptimSpec, cp["optim"])}), "[optim]")

    loss_kwargs = dataclasses.asdict(base.train.loss)
    train_kwargs = {k: getattr(base.train, k) for k in _TRAIN_KEYS}
    train_kwargs["seed"] = base.train.seed
    if cp.has_section("train"):
        sec = cp["train"]
        loss_types = _field_types(LossSpec)
        train_types = _field_types(TrainSpec)
        for key, raw in sec.items():
            where = f"[train] {key}"
            if key in _LOSS_KEYS:
                target = _LOSS_KEYS[key]
                loss_kwargs[target] = _parse_scalar(raw, loss_types[target], where)
            elif key in _TRAIN_KEYS:
                train_kwargs[key] = _parse_scalar(raw, train_types[key], where)
            else:
                raise ConfigError(f"{where}: unknown key")
    loss = _wrap(lambda: LossSpec(**loss_kwargs), "[train]")
    train = _wrap(lambda: TrainSpec(loss=loss, optim=optim, **train_kwargs), "[train]")
    return _wrap(lambda: ExperimentConfig(gen=gen, model=model, train=train, **exp_kwargs), "[experiment]")


def _wrap(build, where: str):
    try:
        return build()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return getattr(value, "value", value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(dump_config(c)) == c``."""
    out = io.StringIO()
    out.write("[experiment]\n")
    out.write(f"name = {cfg.name}\noutput_dir = {cfg.output_dir}\n")
    out.write("gamma_grid = " + ", ".join(repr(float(g)) for g in cfg.gamma_grid) + "\n")
    out.write("injection_grid = " + ", ".join(str(n) for n in cfg.injection_grid) + "\n")
    out.write("seeds = " + ", ".join(str(s) for s in cfg.seeds) + "\n")
    out.write(f"workers = {cfg.workers}\n")
    for section, obj in (("gen", cfg.gen), ("model", cfg.model)):
        out.write(f"\n[{section}]\n")
        for f in dataclasses.fields(obj):
            out.write(f"{f.name} = {_fmt(getattr(obj, f.name))}\n")
    out.write("\n[train]\n")
    for key, target in _LOSS_KEYS.items():
        out.write(f"{key} = {_fmt(getattr(cfg.train.loss, target))}\n")
    for key in _TRAIN_KEYS:
        out.write(f"{key} = {_fmt(getattr(cfg.train, key))}\n")
    out.write("\n[optim]\n")
    for f in dataclasses.fields(cfg.train.optim):
        out.write(f"{f.name} = {_fmt(getattr(cfg.train.optim, f.name))}\n")
    return out.getvalue()


def with_overrides(cfg: ExperimentConfig, *, loss: str | None = None, early_stopping: bool | None = None,
                   workers: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    train = cfg.train
    if loss is not None:
        kind = LossKind(loss)
        source = train.bias_model_source
        if kind in (LossKind.DEBIASED_FOCAL, LossKind.PRODUCT_OF_EXPERTS):
            if source is BiasSource.NONE:
                source = BiasSource.TRAIN_SHORTCUT_ONLY_FIRST
        else:
            source = BiasSource.NONE
        train = replace(train, loss=replace(train.loss, kind=kind), bias_model_source=source,
                        bias_checkpoint=train.bias_checkpoint if source is BiasSource.CHECKPOINT else None)
    if early_stopping is not None:
        train = replace(train, early_stopping=early_stopping)
    changes = {"train": train}
    if workers is not None:
        changes["workers"] = workers
    if output_dir is not None:
        changes["output_dir"] = output_dir
    return replace(cfg, **changes)
