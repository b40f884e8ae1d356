"""Scenario adapters: the pieces of a simulator the sampling loop needs.

A scenario knows how to draw an environment from its prior, map it to and
from the unit cube, roll a policy out in it, and turn the result into a
signal table (for the STL monitors) and a feature matrix (for DTW).
:class:`DrivingScenario` wraps the intersection simulator;
:class:`SyntheticScenario` is a closed-form stand-in with known outcome
frequencies, handy for exercising the bandit in isolation.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol, Sequence

import numpy as np

from . import simenv
from .errors import InputError

DTW_FEATURES = ("ego_x", "ego_y", "ego_speed")


class Scenario(Protocol):
    dim: int

    def sample(self, rng: np.random.Generator) -> Any: ...
    def encode(self, env: Any) -> np.ndarray: ...
    def decode(self, x: np.ndarray) -> Any: ...
    def rollout(self, policy: Any, env: Any, seed: int) -> Any: ...
    def signals(self, traj: Any) -> dict[str, np.ndarray]: ...
    def features(self, traj: Any) -> np.ndarray: ...


# --- driving -----------------------------------------------------------------

CONTINUOUS = ("ego_init_distance", "ado_init_distance", "ado_min_speed", "ado_max_speed")
CATEGORICAL = {"ado_side": simenv.SIDES, "ado_maneuver": simenv.MANEUVERS}
# order of the encoded dimensions
ENCODED_FIELDS = ("ego_init_distance", "ado_side", "ado_maneuver",
                  "ado_init_distance", "ado_min_speed", "ado_max_speed")


@dataclass(frozen=True)
class ParamSpace:
    """Unit-cube encoding of :class:`~sgda.simenv.EnvCondition`.

    Continuous fields are min-max scaled.  A categorical field with ``c``
    levels takes one dimension; level ``i`` sits at the bin centre
    ``(2i + 1) / (2c)`` and decoding picks the nearest centre.
    """

    ranges: simenv.ParamRanges = field(default_factory=simenv.ParamRanges)

    @property
    def dim(self) -> int:
        return len(ENCODED_FIELDS)

    def encode(self, e: simenv.EnvCondition) -> np.ndarray:
        x = np.empty(self.dim)
        for i, name in enumerate(ENCODED_FIELDS):
            v = getattr(e, name)
            if name in CATEGORICAL:
                levels = CATEGORICAL[name]
                if v not in levels:
                    raise InputError(f"unknown {name} {v!r}")
                x[i] = (2 * levels.index(v) + 1) / (2 * len(levels))
            else:
                lo, hi = getattr(self.ranges, name)
                x[i] = (v - lo) / (hi - lo)
        return x

    def decode(self, x: Sequence[float]) -> simenv.EnvCondition:
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        if x.shape != (self.dim,):
            raise InputError(f"expected a point of dimension {self.dim}")
        kw = {}
        for i, name in enumerate(ENCODED_FIELDS):
            if name in CATEGORICAL:
                levels = CATEGORICAL[name]
                kw[name] = levels[min(int(x[i] * len(levels)), len(levels) - 1)]
            else:
                lo, hi = getattr(self.ranges, name)
                kw[name] = lo + float(x[i]) * (hi - lo)
        return simenv.EnvCondition(**kw)

    def sample(self, rng: np.random.Generator) -> simenv.EnvCondition:
        r = self.ranges
        return simenv.EnvCondition(
            ego_init_distance=float(rng.uniform(*r.ego_init_distance)),
            ado_side=simenv.SIDES[int(rng.integers(len(simenv.SIDES)))],
            ado_maneuver=simenv.MANEUVERS[int(rng.integers(len(simenv.MANEUVERS)))],
            ado_init_distance=float(rng.uniform(*r.ado_init_distance)),
            ado_min_speed=float(rng.uniform(*r.ado_min_speed)),
            ado_max_speed=float(rng.uniform(*r.ado_max_speed)),
        )


@dataclass
class DrivingScenario:
    geom: simenv.ScenarioGeometry = field(default_factory=simenv.ScenarioGeometry)
    dtw_features: tuple[str, ...] = DTW_FEATURES

    def __post_init__(self):
        self.space = ParamSpace(self.geom.ranges)

    @property
    def dim(self) -> int:
        return self.space.dim

    def sample(self, rng):
        return self.space.sample(rng)

    def encode(self, env):
        return self.space.encode(env)

    def decode(self, x):
        return self.space.decode(x)

    def rollout(self, policy, env, seed):
        return simenv.rollout(policy, env, self.geom, seed)

    def signals(self, traj):
        return simenv.extract_signals(traj, self.geom)

    def features(self, traj):
        return traj.features(self.dtw_features)


# --- synthetic ---------------------------------------------------------------


@dataclass
class SyntheticTrace:
    env: tuple[float, float]
    a: float
    b: float

    def __len__(self) -> int:
        return 1


@dataclass
class SyntheticScenario:
    """Two-parameter scenario with closed-form robustness of two properties.

    With ``x`` uniform on the unit square and properties ``G(a >= 0)`` and
    ``G(b >= 0)``, the four outcomes occur with probability
    ``A&B 0.8, A&!B 0.1, !A&B 0.05, !A&!B 0.05``.  Both margins are smooth
    in ``x`` so a surrogate can learn where each outcome lives.
    """

    split: float = 0.9

    dim: int = 2

    def sample(self, rng):
        return tuple(float(v) for v in rng.uniform(0.0, 1.0, 2))

    def encode(self, env):
        return np.asarray(env, dtype=float)

    def decode(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        return (float(x[0]), float(x[1]))

    def rollout(self, policy, env, seed):
        x0, x1 = env
        a = self.split - x0
        # B fails above the curve; its height sets P(!B) per A-region
        cut = 8.0 / 9.0 if x0 <= self.split else 0.5
        return SyntheticTrace(env, a, cut - x1)

    def signals(self, traj):
        return {"a": np.array([traj.a]), "b": np.array([traj.b])}

    def features(self, traj):
        return np.array([traj.env], dtype=float)


SYNTHETIC_PROPERTIES = (("A", "G(a >= 0)"), ("B", "G(b >= 0)"))


# --- parallel helper ---------------------------------------------------------


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def parallel_map(fn: Callable, items: Iterable, jobs: int = 1) -> list:
    """Ordered map; uses worker processes when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
