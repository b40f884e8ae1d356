"""Untimed signal temporal logic over finite, uniformly sampled traces.

Formulas are small immutable trees.  Both semantics are computed pointwise
over the whole trace and read off at the first sample, so ``G`` means
"for every remaining sample" and ``F`` means "for some remaining sample".

Text syntax (used by config files)::

    expr    := or
    or      := and ('|' and)*
    and     := unary ('&' unary)*
    unary   := '!' unary | 'G' '(' expr ')' | 'F' '(' expr ')' | '(' expr ')' | atom
    atom    := NAME ('>=' | '<=') NUMBER

Example: ``G(ego_ado_distance >= 0) & !F(brake_intensity >= 0.4)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import ConfigError, EvaluationError

SignalTable = Mapping[str, np.ndarray]


@dataclass(frozen=True)
class Atom:
    signal: str
    op: str  # ">=" or "<="
    threshold: float

    def __post_init__(self):
        if self.op not in (">=", "<="):
            raise ConfigError(f"unsupported comparator {self.op!r}")


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise ConfigError("And needs at least one child")


@dataclass(frozen=True)
class Or:
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise ConfigError("Or needs at least one child")


@dataclass(frozen=True)
class Globally:
    child: "Formula"


@dataclass(frozen=True)
class Eventually:
    child: "Formula"


Formula = Union[Atom, Not, And, Or, Globally, Eventually]


def _lookup(signals: SignalTable, name: str) -> np.ndarray:
    try:
        values = signals[name]
    except KeyError:
        raise EvaluationError(f"unknown signal {name!r}") from None
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise EvaluationError(f"signal {name!r} must be a non-empty 1-D trace")
    return values


def _suffix_min(x: np.ndarray) -> np.ndarray:
    return np.minimum.accumulate(x[::-1])[::-1]


def _suffix_max(x: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(x[::-1])[::-1]


def robustness_trace(f: Formula, signals: SignalTable) -> np.ndarray:
    """Pointwise robustness of ``f`` at every sample of the trace."""
    if isinstance(f, Atom):
        s = _lookup(signals, f.signal)
        return s - f.threshold if f.op == ">=" else f.threshold - s
    if isinstance(f, Not):
        return -robustness_trace(f.child, signals)
    if isinstance(f, And):
        return np.minimum.reduce([robustness_trace(c, signals) for c in f.children])
    if isinstance(f, Or):
        return np.maximum.reduce([robustness_trace(c, signals) for c in f.children])
    if isinstance(f, Globally):
        return _suffix_min(robustness_trace(f.child, signals))
    if isinstance(f, Eventually):
        return _suffix_max(robustness_trace(f.child, signals))
    raise TypeError(f"not a formula: {f!r}")


def satisfaction_trace(f: Formula, signals: SignalTable) -> np.ndarray:
    """Pointwise Boolean semantics; comparisons are closed (``>=``, ``<=``)."""
    if isinstance(f, Atom):
        s = _lookup(signals, f.signal)
        return s >= f.threshold if f.op == ">=" else s <= f.threshold
    if isinstance(f, Not):
        return ~satisfaction_trace(f.child, signals)
    if isinstance(f, And):
        return np.logical_and.reduce([satisfaction_trace(c, signals) for c in f.children])
    if isinstance(f, Or):
        return np.logical_or.reduce([satisfaction_trace(c, signals) for c in f.children])
    if isinstance(f, Globally):
        return np.logical_and.accumulate(satisfaction_trace(f.child, signals)[::-1])[::-1]
    if isinstance(f, Eventually):
        return np.logical_or.accumulate(satisfaction_trace(f.child, signals)[::-1])[::-1]
    raise TypeError(f"not a formula: {f!r}")


def eval_quant(f: Formula, signals: SignalTable) -> float:
    """Robustness of ``f`` over the whole trace (value at the first sample)."""
    return float(robustness_trace(f, signals)[0])


def eval_bool(f: Formula, signals: SignalTable) -> bool:
    return bool(satisfaction_trace(f, signals)[0])


def signal_names(f: Formula) -> set[str]:
    if isinstance(f, Atom):
        return {f.signal}
    if isinstance(f, (And, Or)):
        return set().union(*(signal_names(c) for c in f.children))
    return signal_names(f.child)


# --- text syntax -----------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<cmp>>=|<=)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<sym>[()!&|]))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ConfigError(f"cannot parse formula at {text[pos:]!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self, value=None, kind=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value) or (
            kind is not None and tok[0] != kind
        ):
            want = value or kind
            raise ConfigError(f"expected {want!r} in formula {self.text!r}, got {tok[1]!r}")
        self.i += 1
        return tok[1]

    def parse(self) -> Formula:
        f = self.disjunction()
        if self.i != len(self.tokens):
            raise ConfigError(f"trailing input in formula {self.text!r}")
        return f

    def disjunction(self):
        parts = [self.conjunction()]
        while self.peek() == ("sym", "|"):
            self.take("|")
            parts.append(self.conjunction())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def conjunction(self):
        parts = [self.unary()]
        while self.peek() == ("sym", "&"):
            self.take("&")
            parts.append(self.unary())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def unary(self):
        kind, value = self.peek()
        if (kind, value) == ("sym", "!"):
            self.take("!")
            return Not(self.unary())
        if (kind, value) == ("sym", "("):
            self.take("(")
            f = self.disjunction()
            self.take(")")
            return f
        if kind == "name" and value in ("G", "F") and self.i + 1 < len(self.tokens) \
                and self.tokens[self.i + 1] == ("sym", "("):
            self.take()
            self.take("(")
            child = self.disjunction()
            self.take(")")
            return Globally(child) if value == "G" else Eventually(child)
        name = self.take(kind="name")
        op = self.take(kind="cmp")
        return Atom(name, op, float(self.take(kind="num")))


def parse(text: str) -> Formula:
    """Parse the text syntax described in the module docstring."""
    return _Parser(text).parse()


def to_text(f: Formula) -> str:
    """Inverse of :func:`parse` (fully parenthesised where needed)."""
    if isinstance(f, Atom):
        return f"{f.signal} {f.op} {f.threshold!r}"
    if isinstance(f, Not):
        inner = to_text(f.child)
        if isinstance(f.child, (Globally, Eventually, Not)):
            return f"!{inner}"
        return f"!({inner})"
    if isinstance(f, And):
        return " & ".join(_wrap(c) for c in f.children)
    if isinstance(f, Or):
        return " | ".join(_wrap(c) for c in f.children)
    if isinstance(f, Globally):
        return f"G({to_text(f.child)})"
    return f"F({to_text(f.child)})"


def _wrap(f: Formula) -> str:
    text = to_text(f)
    return f"({text})" if isinstance(f, (And, Or)) else text
