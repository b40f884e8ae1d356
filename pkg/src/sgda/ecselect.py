"""Mismatch-weighted selection of environments for expert labelling.

Specs on which the learner often failed to reproduce the expert's outcome
in the previous round get high weight; the next round's environments are
drawn preferentially from pool members whose learner rollout landed there.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional, Sequence

import numpy as np

from .errors import InputError


@dataclass
class OutcomePairTable:
    """Per-spec counts over (expert spec, learner spec) pairs.

    ``N[j]`` counts environments where either policy landed in spec ``j``
    (once even if both did); ``M[j]`` counts those where both did.
    """

    num_specs: int
    pairs: list[tuple[int, int]] = field(default_factory=list)

    def add(self, expert_spec: int, il_spec: int) -> None:
        for j in (expert_spec, il_spec):
            if not 0 <= j < self.num_specs:
                raise InputError(f"spec index {j} out of range")
        self.pairs.append((int(expert_spec), int(il_spec)))

    @classmethod
    def from_pairs(cls, num_specs: int, pairs) -> "OutcomePairTable":
        t = cls(num_specs)
        for a, b in pairs:
            t.add(a, b)
        return t

    def counts(self) -> tuple[np.ndarray, np.ndarray]:
        N = np.zeros(self.num_specs, dtype=int)
        M = np.zeros(self.num_specs, dtype=int)
        for ex, il in self.pairs:
            N[ex] += 1
            if il == ex:
                M[ex] += 1
            else:
                N[il] += 1
        return N, M


def selection_weights(table: OutcomePairTable) -> list[Fraction]:
    """``1 - M/N`` per spec, or 1 when the spec was never seen; exact."""
    N, M = table.counts()
    return [Fraction(1) - Fraction(int(m), int(n)) if n > 0 else Fraction(1)
            for n, m in zip(N, M)]


def ec_select(pool_specs: Sequence[int], weights: Optional[Sequence[float]], m: int,
              rng: np.random.Generator) -> list[int]:
    """Indices of ``m`` distinct pool members.

    ``pool_specs[i]`` is the spec the learner's rollout of member ``i``
    landed in.  Without weights (first round) members are drawn uniformly.
    Otherwise each draw picks a spec from the weights renormalised over
    specs that still have members, then a member of that spec uniformly.
    If every remaining weight is zero the rest is drawn uniformly.
    """
    n = len(pool_specs)
    if m > n:
        raise InputError(f"cannot select {m} from a pool of {n}")
    if m < 0:
        raise InputError("m must be non-negative")
    if weights is None:
        return sorted(int(i) for i in rng.choice(n, size=m, replace=False))
    w = np.array([float(x) for x in weights])
    buckets: dict[int, list[int]] = {}
    for i, j in enumerate(pool_specs):
        if not 0 <= j < len(w):
            raise InputError(f"pool spec {j} has no weight")
        buckets.setdefault(int(j), []).append(i)
    chosen: list[int] = []
    while len(chosen) < m:
        specs = sorted(j for j, b in buckets.items() if b)
        p = w[specs]
        if p.sum() <= 0:
            rest = [i for j in specs for i in buckets[j]]
            rest.sort()
            extra = rng.choice(len(rest), size=m - len(chosen), replace=False)
            chosen.extend(rest[int(k)] for k in extra)
            break
        c = np.cumsum(p)
        k = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
        j = specs[min(k, len(specs) - 1)]
        b = buckets[j]
        chosen.append(b.pop(int(rng.integers(len(b)))))
    return sorted(chosen)


def selection_report(table: OutcomePairTable, weights: Sequence[Any],
                     pool_specs: Sequence[int], selected: Sequence[int],
                     labels: Optional[Sequence[str]] = None) -> str:
    N, M = table.counts()
    pool = np.bincount(np.asarray(pool_specs, dtype=int), minlength=table.num_specs)
    sel = np.bincount(np.asarray([pool_specs[i] for i in selected], dtype=int),
                      minlength=table.num_specs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["spec", "label", "N", "M", "weight", "pool", "selected"])
    for j in range(table.num_specs):
        w.writerow([j, labels[j] if labels else "", N[j], M[j], str(weights[j]),
                    pool[j], sel[j]])
    return buf.getvalue()
