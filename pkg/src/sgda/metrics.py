"""Evaluation: test-set construction, outcome matching, DTW and L1 loss."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numba
import numpy as np

from . import stl
from .errors import InputError
from .scenario import parallel_map
from .simenv import EnvCondition
from .stp import Partition, Property

log = logging.getLogger(__name__)

DEFAULT_CAP = 5000


# --- DTW ---------------------------------------------------------------------


@numba.njit(cache=False)
def _dtw(a, b):
    n, m = a.shape[0], b.shape[0]
    inf = np.inf
    prev = np.full(m + 1, inf)
    cur = np.full(m + 1, inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = inf
        for j in range(1, m + 1):
            d = 0.0
            for k in range(a.shape[1]):
                diff = a[i - 1, k] - b[j - 1, k]
                d += diff * diff
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = math.sqrt(d) + best
        prev, cur = cur, prev
    return prev[m]


def dtw(a: np.ndarray, b: np.ndarray) -> float:
    """Classic DTW with Euclidean local cost, both endpoints matched.

    ``a`` and ``b`` are ``(length, features)`` arrays (1-D input is read as a
    single feature).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if len(a) == 0 or len(b) == 0:
        raise InputError("DTW needs non-empty sequences")
    if a.shape[1] != b.shape[1]:
        raise InputError("sequences must share a feature dimension")
    return float(_dtw(np.ascontiguousarray(a), np.ascontiguousarray(b)))


def dtw_distance(a, b, features: Sequence[str] = ("ego_x", "ego_y", "ego_speed")) -> float:
    """DTW between two trajectories over the named per-step features."""
    if len(a) == 0 or len(b) == 0:
        raise InputError("DTW needs non-empty trajectories")
    return dtw(a.features(features), b.features(features))


# --- test set ----------------------------------------------------------------


@dataclass
class TestEntry:
    env: Any
    seed: int
    traj: Any
    spec: int


@dataclass
class TestSet:
    entries: list[TestEntry]
    uniform_count: int
    topups: dict[int, int] = field(default_factory=dict)
    shortfalls: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def histogram(self, num_specs: int) -> np.ndarray:
        h = np.zeros(num_specs, dtype=int)
        for e in self.entries:
            h[e.spec] += 1
        return h


def _classified_rollout(args):
    scenario, part, policy, env, seed = args
    traj = scenario.rollout(policy, env, seed)
    return traj, part.classify(scenario.signals(traj))


def build_test_set(expert, scenario, part: Partition, size: int = 500,
                   floor_frac: float = 0.04, seed: int = 0, cap: int = DEFAULT_CAP,
                   jobs: int = 1) -> TestSet:
    """Uniform test set topped up by per-spec rejection sampling.

    Each spec must hold at least ``ceil(floor_frac * size)`` entries; an
    under-represented spec gets extra uniform draws, keeping only those
    that land in it, until the floor is met or ``cap`` draws were spent.
    Draws that land elsewhere are discarded.
    """
    if size < 1:
        raise InputError("test set size must be positive")
    if floor_frac < 0 or floor_frac * part.num_specs > 1.0:
        raise InputError("floor fraction times the number of specs must be at most 1")
    rng = np.random.default_rng([seed, 7])
    draws = [(scenario.sample(rng), int(rng.integers(2**31))) for _ in range(size)]
    results = parallel_map(_classified_rollout,
                           [(scenario, part, expert, e, s) for e, s in draws], jobs)
    entries = [TestEntry(e, s, tr, j) for (e, s), (tr, j) in zip(draws, results)]
    floor = math.ceil(floor_frac * size - 1e-12)
    ts = TestSet(entries, size)
    counts = ts.histogram(part.num_specs)
    for j in range(part.num_specs):
        if counts[j] >= floor:
            continue
        srng = np.random.default_rng([seed, 8, j])
        added = 0
        for _ in range(cap):
            e = scenario.sample(srng)
            s = int(srng.integers(2**31))
            tr, k = _classified_rollout((scenario, part, expert, e, s))
            if k == j:
                entries.append(TestEntry(e, s, tr, j))
                added += 1
                if counts[j] + added >= floor:
                    break
        ts.topups[j] = added
        if counts[j] + added < floor:
            ts.shortfalls[j] = floor - counts[j] - added
            log.warning("spec %d short by %d test entries after %d draws",
                        j, ts.shortfalls[j], cap)
    return ts


def env_to_json(env):
    return env.as_dict() if hasattr(env, "as_dict") else [float(v) for v in env]


def env_from_json(d):
    return EnvCondition(**d) if isinstance(d, dict) else np.asarray(d, dtype=float)


def test_set_jsonl(test: TestSet) -> str:
    """One line per entry: environment, seed and expert spec.

    Trajectories are not stored; they are reproduced by re-running the
    expert under the same seed.
    """
    lines = [json.dumps({"env": env_to_json(t.env), "seed": t.seed, "spec": t.spec},
                        sort_keys=True) for t in test.entries]
    return "\n".join(lines) + "\n"


def load_test_set(path, expert, scenario, part: Partition, jobs: int = 1) -> TestSet:
    try:
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read test set {path}: {exc}") from None
    if not rows:
        raise InputError(f"test set {path} is empty")
    draws = [(env_from_json(r["env"]), int(r["seed"])) for r in rows]
    results = parallel_map(_classified_rollout,
                           [(scenario, part, expert, e, s) for e, s in draws], jobs)
    entries = []
    for r, (e, s), (tr, j) in zip(rows, draws, results):
        if j != r["spec"]:
            raise InputError(f"test entry with seed {s} now lands in spec {j}, "
                             f"stored as {r['spec']}; was the expert changed?")
        entries.append(TestEntry(e, s, tr, j))
    return TestSet(entries, len(entries))


# --- outcome matching --------------------------------------------------------


@dataclass
class MatchReport:
    per_spec_total: np.ndarray
    per_spec_matched: np.ndarray
    dtw: np.ndarray  # per test entry
    il_specs: list[int]

    @property
    def overall(self) -> float:
        total = self.per_spec_total.sum()
        return float(self.per_spec_matched.sum() / total) if total else float("nan")

    def rate(self, j: int) -> float:
        t = self.per_spec_total[j]
        return float(self.per_spec_matched[j] / t) if t else float("nan")

    @property
    def mean_dtw(self) -> float:
        return float(np.mean(self.dtw))

    @property
    def median_dtw(self) -> float:
        return float(np.median(self.dtw))


def _match_one(args):
    scenario, part, policy, entry = args
    traj = scenario.rollout(policy, entry.env, entry.seed)
    j = part.classify(scenario.signals(traj))
    d = dtw(scenario.features(traj), scenario.features(entry.traj))
    return j, d


def outcome_matching(policy, test: TestSet, part: Partition, scenario, jobs: int = 1) -> MatchReport:
    """Roll ``policy`` out on every test environment (same noise seed as the
    expert) and compare outcome specs; rates are grouped by the expert's spec."""
    if len(test) == 0:
        raise InputError("empty test set")
    res = parallel_map(_match_one, [(scenario, part, policy, t) for t in test.entries], jobs)
    total = np.zeros(part.num_specs, dtype=int)
    matched = np.zeros(part.num_specs, dtype=int)
    for t, (j, _) in zip(test.entries, res):
        total[t.spec] += 1
        matched[t.spec] += int(j == t.spec)
    return MatchReport(total, matched, np.array([d for _, d in res]), [j for j, _ in res])


def l1_test_loss(policy, test: TestSet) -> float:
    """Open-loop mean absolute action error over all expert test states."""
    if len(test) == 0:
        raise InputError("empty test set")
    total, n = 0.0, 0
    for t in test.entries:
        for s, a in zip(t.traj.states, t.traj.actions):
            pa = min(1.0, max(-1.0, float(policy.act(s))))
            total += abs(pa - float(a))
            n += 1
    return total / n


# --- reports -----------------------------------------------------------------


def rare_specs(test: TestSet, num_specs: int, threshold: float = 0.10) -> list[int]:
    """Specs below ``threshold`` of the uniform (pre-top-up) portion."""
    h = np.zeros(num_specs, dtype=int)
    for t in test.entries[:test.uniform_count]:
        h[t.spec] += 1
    return [j for j in range(num_specs) if h[j] < threshold * test.uniform_count]


def metrics_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    fields = list(rows[0].keys()) if rows else []
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def per_outcome_rows(part: Partition, reports: Mapping[str, MatchReport]) -> list[dict]:
    rows = []
    first = next(iter(reports.values()))
    for s in part.specs:
        row = {"spec": s.index, "pattern": s.pattern, "label": s.label(part.names),
               "outcomes": int(first.per_spec_total[s.index])}
        for name, rep in reports.items():
            row[f"match_{name}"] = rep.rate(s.index)
        rows.append(row)
    return rows


# --- brake-threshold sweep ---------------------------------------------------


def with_threshold(prop: Property, threshold: float) -> Property:
    """Copy of a single-atom ``G``/``F`` property with a new threshold."""
    f = prop.formula
    if isinstance(f, (stl.Globally, stl.Eventually)) and isinstance(f.child, stl.Atom):
        return replace(prop, formula=type(f)(replace(f.child, threshold=float(threshold))))
    if isinstance(f, stl.Atom):
        return replace(prop, formula=replace(f, threshold=float(threshold)))
    raise InputError(f"property {prop.name!r} is not a thresholded atom")


@dataclass
class SweepRow:
    threshold: float
    expert_violation_freq: float
    violation_match: dict[str, float]


def brake_threshold_sweep(test: TestSet, policies: Mapping[str, Any], scenario,
                          prop: Property, thresholds: Sequence[float] = (0.2, 0.3, 0.4, 0.5),
                          jobs: int = 1) -> list[SweepRow]:
    """Violation frequency of one property under the expert across thresholds,
    and how often each policy reproduces the expert's violations.

    Policies are rolled out once per test entry; only the monitor changes
    with the threshold.
    """
    if len(test) == 0:
        raise InputError("empty test set")
    traces = {}
    for name, pol in policies.items():
        traces[name] = parallel_map(_signals_of, [(scenario, pol, t) for t in test.entries], jobs)
    expert_sig = [scenario.signals(t.traj) for t in test.entries]
    rows = []
    for thr in thresholds:
        p = with_threshold(prop, thr)
        ev = np.array([not stl.eval_bool(p.formula, s) for s in expert_sig])
        match = {}
        for name, sigs in traces.items():
            pv = np.array([not stl.eval_bool(p.formula, s) for s in sigs])
            match[name] = float((pv & ev).sum() / ev.sum()) if ev.any() else float("nan")
        rows.append(SweepRow(float(thr), float(ev.mean()), match))
    return rows


def _signals_of(args):
    scenario, policy, entry = args
    return scenario.signals(scenario.rollout(policy, entry.env, entry.seed))
