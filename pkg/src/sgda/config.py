"""Run configuration: one TOML file fully determines a run.

Sections map one-to-one onto dataclasses; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli
import tomli_w

from .bayesopt import BoConfig
from .errors import ConfigError
from .policy import TrainConfig
from .simenv import ExpertParams, ParamRanges, ScenarioGeometry
from .stp import Property, build_partition

STRATEGIES = ("sgda", "uniform", "single_spec", "individual_props")

DEFAULT_PROPERTIES = (
    ("no_collision", "G(ego_ado_distance >= 0)"),
    ("no_halt", "G(ego_speed >= 0.05)"),
    ("no_hard_brake", "G(brake_intensity <= 0.4)"),
)


@dataclass(frozen=True)
class PropertyConfig:
    name: str
    formula: str
    weight: float = 0.5


@dataclass(frozen=True)
class RunSection:
    strategy: str = "sgda"
    seed: int = 0
    rounds: int = 2
    initial_episodes: int = 40
    k: int = 40
    seed_samples: int = 10
    m: int = 20
    weighted: bool = False
    ucb_c: float = 1.0
    jobs: int = 0  # 0: all available cores


@dataclass(frozen=True)
class EvalSection:
    test_size: int = 500
    floor_frac: float = 0.04
    cap: int = 5000
    rare_threshold: float = 0.10
    brake_property: str = "no_hard_brake"
    brake_thresholds: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5)
    dtw_features: tuple[str, ...] = ("ego_x", "ego_y", "ego_speed")


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(hidden=32, lr=3e-3, epochs=400, batch_size=64))
    bo: BoConfig = field(default_factory=BoConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    geometry: ScenarioGeometry = field(default_factory=ScenarioGeometry)
    expert: ExpertParams = field(default_factory=ExpertParams)
    properties: tuple[PropertyConfig, ...] = tuple(PropertyConfig(n, f) for n, f in DEFAULT_PROPERTIES)

    def __post_init__(self):
        r = self.run
        if r.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {r.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if r.rounds < 0 or r.initial_episodes < 1:
            raise ConfigError("rounds must be >= 0 and initial_episodes >= 1")
        if r.k < 1 or r.m < 1 or r.m > r.k:
            raise ConfigError("need 1 <= m <= k")
        if not 0 <= r.seed_samples < r.k:
            raise ConfigError("seed_samples must lie in [0, k)")
        if r.jobs < 0:
            raise ConfigError("jobs must be >= 0")
        if self.train.hidden < 1 or self.train.depth < 1 or self.train.epochs < 0:
            raise ConfigError("invalid network or training size")
        if self.train.lr <= 0 or self.train.batch_size < 1:
            raise ConfigError("lr and batch_size must be positive")
        e = self.eval
        if e.test_size < 1 or e.cap < 0:
            raise ConfigError("test_size must be positive and cap non-negative")
        if e.brake_property not in [p.name for p in self.properties]:
            raise ConfigError(f"brake_property {e.brake_property!r} is not a declared property")
        self.partition()  # parses formulas and checks names / weights

    def property_list(self) -> list[Property]:
        return [Property.from_text(p.name, p.formula, p.weight) for p in self.properties]

    def partition(self):
        return build_partition(self.property_list(), weighted=self.run.weighted)

    def replace_run(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, **kw))


# --- dict <-> dataclass ------------------------------------------------------


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kw = {}
    for name, value in data.items():
        if name == "ranges" and cls is ScenarioGeometry:
            kw[name] = _build(ParamRanges, value, f"{where}.ranges")
        else:
            kw[name] = _tupled(value)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


_SECTIONS = {"run": RunSection, "train": TrainConfig, "bo": BoConfig, "eval": EvalSection,
             "geometry": ScenarioGeometry, "expert": ExpertParams}


def from_dict(data: dict) -> RunConfig:
    unknown = sorted(set(data) - set(_SECTIONS) - {"properties"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    kw = {name: _build(cls, data[name], name) for name, cls in _SECTIONS.items() if name in data}
    if "properties" in data:
        props = data["properties"]
        if not isinstance(props, list):
            raise ConfigError("[[properties]] must be an array of tables")
        kw["properties"] = tuple(_build(PropertyConfig, p, "properties") for p in props)
    try:
        return RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def to_dict(cfg: RunConfig) -> dict:
    d = _plain(cfg)
    d.pop("properties")
    d["properties"] = [_plain(p) for p in cfg.properties]
    return d


def loads(text: str) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    return from_dict(data)


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)


def dumps(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def default_config_path(name: str = "default") -> Path:
    return Path(__file__).parent / "configs" / f"{name}.toml"


def load_default(name: str = "default", overrides: Optional[dict] = None) -> RunConfig:
    cfg = load(default_config_path(name))
    return cfg.replace_run(**overrides) if overrides else cfg
