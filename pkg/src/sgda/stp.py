"""Semantic trajectory partition: every sign pattern over the property set.

Specification ``j`` asserts property ``i`` when bit ``i`` of ``j`` is set and
its negation otherwise, so index 0 is "every property violated" and
``2**l - 1`` is "every property holds".
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import stl
from .errors import ConfigError

MAX_PROPERTIES = 8


@dataclass(frozen=True)
class Property:
    name: str
    formula: stl.Formula
    weight: float = 0.5

    @classmethod
    def from_text(cls, name: str, text: str, weight: float = 0.5) -> "Property":
        return cls(name, stl.parse(text), weight)


@dataclass(frozen=True)
class Specification:
    index: int
    signs: tuple[bool, ...]

    def formula(self, properties: Sequence[Property]) -> stl.Formula:
        literals = [p.formula if s else stl.Not(p.formula) for p, s in zip(properties, self.signs)]
        return literals[0] if len(literals) == 1 else stl.And(tuple(literals))

    def label(self, names: Sequence[str]) -> str:
        return " & ".join(n if s else f"!{n}" for n, s in zip(names, self.signs))

    @property
    def pattern(self) -> str:
        """Sign pattern in property order, e.g. ``'+-+'``."""
        return "".join("+" if s else "-" for s in self.signs)


def signs_of(index: int, l: int) -> tuple[bool, ...]:
    return tuple(bool((index >> i) & 1) for i in range(l))


def index_of(signs: Sequence[bool]) -> int:
    return sum(1 << i for i, s in enumerate(signs) if s)


def spec_weight(signs: Sequence[bool], weights: Sequence[float]) -> float:
    w = 1.0
    for s, wi in zip(signs, weights):
        w *= wi if s else 1.0 - wi
    return w


@dataclass
class Partition:
    properties: list[Property]
    specs: list[Specification]
    spec_weights: np.ndarray
    landed: list[list[tuple[Any, Any]]] = field(default_factory=list)
    attempts: np.ndarray = None

    def __post_init__(self):
        if not self.landed:
            self.landed = [[] for _ in self.specs]
        if self.attempts is None:
            self.attempts = np.zeros(len(self.specs), dtype=int)

    @property
    def num_properties(self) -> int:
        return len(self.properties)

    @property
    def num_specs(self) -> int:
        return len(self.specs)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.properties]

    def counts(self) -> np.ndarray:
        """Landed-trajectory count per specification."""
        return np.array([len(s) for s in self.landed], dtype=int)

    def truth_vector(self, signals: stl.SignalTable) -> tuple[bool, ...]:
        return tuple(stl.eval_bool(p.formula, signals) for p in self.properties)

    def classify(self, signals: stl.SignalTable) -> int:
        """Index of the unique specification the signals satisfy."""
        return index_of(self.truth_vector(signals))

    def classify_exhaustive(self, signals: stl.SignalTable) -> list[int]:
        """Every spec whose literal conjunction holds; used as a cross-check."""
        return [s.index for s in self.specs
                if stl.eval_bool(s.formula(self.properties), signals)]

    def record(self, env: Any, traj: Any, signals: stl.SignalTable) -> int:
        j = self.classify(signals)
        self.landed[j].append((env, traj))
        return j

    def robustness_vector(self, signals: stl.SignalTable) -> np.ndarray:
        return np.array([stl.eval_quant(p.formula, signals) for p in self.properties])

    def spec_robustness(self, rho: Sequence[float], j: int) -> float:
        """Robustness of spec ``j`` given per-property robustness ``rho``."""
        signs = self.specs[j].signs
        return float(min(r if s else -r for r, s in zip(rho, signs)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["spec", "pattern", "label", "landed", "attempts", "weight"])
        counts = self.counts()
        for s in self.specs:
            w.writerow([s.index, s.pattern, s.label(self.names), counts[s.index],
                        self.attempts[s.index], repr(float(self.spec_weights[s.index]))])
        return buf.getvalue()


def build_partition(properties: Sequence[Property], cap: int = MAX_PROPERTIES,
                    weighted: bool = False) -> Partition:
    """All ``2**l`` specifications in canonical index order.

    Spec weights are products of property weights (or complements for
    negated properties).  With ``weighted=False`` the weights are still
    computed but property weights are not range-checked.
    """
    l = len(properties)
    if l == 0 or l > cap:
        raise ConfigError(f"need between 1 and {cap} properties, got {l}")
    names = [p.name for p in properties]
    if len(set(names)) != l:
        raise ConfigError("property names must be unique")
    if weighted:
        for p in properties:
            if not 0.0 < p.weight < 1.0:
                raise ConfigError(f"weight of {p.name!r} must lie in (0, 1)")
    ws = [p.weight for p in properties]
    specs = [Specification(j, signs_of(j, l)) for j in range(2 ** l)]
    weights = np.array([spec_weight(s.signs, ws) for s in specs])
    return Partition(list(properties), specs, weights)
