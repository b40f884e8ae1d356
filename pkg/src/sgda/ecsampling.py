"""Environment-condition sampling: a UCB bandit over partition elements.

Each iteration asks the surrogate of the current target specification for
an environment, rolls the learner out in it, files the trajectory under the
specification it actually satisfied, and moves the target to whichever
specification the UCB score now favours.  Specifications with few landed
trajectories score high on exploitation; rarely attempted ones score high
on exploration.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .bayesopt import Sampler, target_value
from .errors import InputError
from .stp import Partition

EPS = 1e-9


def ucb_pick(Q: Sequence[float], N: Sequence[int], t: int,
             weights: Optional[Sequence[float]] = None, c: float = 1.0) -> int:
    """``argmax_j w_j Q_j / (max Q + eps) + c sqrt(2 ln(t + 2) / (N_j + 1))``.

    Ties go to the lowest index.
    """
    Q = np.asarray(Q, dtype=float)
    N = np.asarray(N, dtype=float)
    if Q.size == 0 or Q.shape != N.shape:
        raise InputError("Q and N must be non-empty and of equal length")
    if t < 0:
        raise InputError("t must be non-negative")
    w = np.ones_like(Q) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != Q.shape:
        raise InputError("weights must match Q in length")
    score = w * Q / (Q.max() + EPS) + c * np.sqrt(2.0 * math.log(t + 2) / (N + 1.0))
    return int(np.argmax(score))


def q_values(counts: Sequence[int]) -> np.ndarray:
    """``Q_j = max_i |phi_i| - |phi_j|``."""
    counts = np.asarray(counts, dtype=float)
    return counts.max() - counts


@dataclass
class Sample:
    env: Any
    seed: int
    traj: Any
    spec: int                 # spec the trajectory landed in
    phase: str                # "seed", "guided" or "uniform"
    target_spec: int = -1     # spec the proposal aimed for (-1: none)
    target: float = float("nan")


@dataclass
class SamplingContext:
    """State that persists across rounds: the partition, the surrogates and
    the per-spec DTW feature stores used by the diversity bonus."""

    part: Partition
    sampler: Sampler
    scenario: Any
    stores: list[list[np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if not self.stores:
            self.stores = [[] for _ in range(self.part.num_specs)]

    def run(self, policy, env, seed: int):
        traj = self.scenario.rollout(policy, env, seed)
        signals = self.scenario.signals(traj)
        rho = self.part.robustness_vector(signals)
        j = self.part.classify(signals)
        return traj, signals, rho, j

    def spec_target(self, rho, landed: int, j: int, feats) -> float:
        c = self.sampler.config
        return target_value(self.part.spec_robustness(rho, j), landed == j, feats,
                            self.stores[j], c.bonus_a, c.d_cap)

    def land(self, env, traj, j: int, feats) -> None:
        self.part.landed[j].append((env, traj))
        self.stores[j].append(feats)


def seed_phase(ctx: SamplingContext, policy, n: int, rng: np.random.Generator) -> list[Sample]:
    """Uniform samples that warm up every surrogate and the landed stores.

    They do not count as bandit attempts.
    """
    out = []
    for _ in range(n):
        env = ctx.scenario.sample(rng)
        seed = int(rng.integers(2**31))
        traj, _, rho, landed = ctx.run(policy, env, seed)
        feats = ctx.scenario.features(traj)
        x = ctx.scenario.encode(env)
        for j in range(ctx.part.num_specs):
            ctx.sampler.observe(j, x, ctx.spec_target(rho, landed, j, feats))
        ctx.land(env, traj, landed, feats)
        out.append(Sample(env, seed, traj, landed, "seed"))
    return out


@dataclass
class BanditTrace:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "target_spec", "env", "landed_spec", "target_value", "Q", "N"])
        for r in self.rows:
            w.writerow([r["t"], r["target_spec"], json.dumps(r["env"], sort_keys=True),
                        r["landed_spec"], repr(r["target_value"]),
                        " ".join(repr(float(q)) for q in r["Q"]),
                        " ".join(str(int(n)) for n in r["N"])])
        return buf.getvalue()


def _env_dict(env):
    return env.as_dict() if hasattr(env, "as_dict") else list(env)


def ec_sampling(ctx: SamplingContext, policy, k: int, rng: np.random.Generator,
                seed_samples: int = 0, weighted: bool = False, c: float = 1.0,
                trace: Optional[BanditTrace] = None) -> list[Sample]:
    """Run ``seed_samples`` uniform warm-up draws, then ``k`` bandit iterations.

    Returns every sample in order.  ``weighted`` multiplies the exploitation
    term by the partition's spec weights.
    """
    if k < 1:
        raise InputError("k must be at least 1")
    part = ctx.part
    out = seed_phase(ctx, policy, seed_samples, rng)
    weights = part.spec_weights if weighted else None
    live = [j for j in range(part.num_specs) if not weighted or part.spec_weights[j] > 0]
    N = np.zeros(part.num_specs, dtype=int)
    current = live[int(rng.integers(len(live)))]
    for t in range(k):
        x = ctx.sampler.propose(current, rng)
        env = ctx.scenario.decode(x)
        x = ctx.scenario.encode(env)
        seed = int(rng.integers(2**31))
        N[current] += 1
        part.attempts[current] += 1
        traj, _, rho, landed = ctx.run(policy, env, seed)
        feats = ctx.scenario.features(traj)
        value = ctx.spec_target(rho, landed, current, feats)
        ctx.land(env, traj, landed, feats)
        ctx.sampler.observe(current, x, value)
        out.append(Sample(env, seed, traj, landed, "guided", current, value))
        Q = q_values(part.counts())
        if trace is not None:
            trace.rows.append({"t": t, "target_spec": current, "env": _env_dict(env),
                               "landed_spec": landed, "target_value": value,
                               "Q": Q.copy(), "N": N.copy()})
        current = ucb_pick(Q, N, t, weights, c)
    return out


def uniform_sampling(ctx: SamplingContext, policy, k: int, rng: np.random.Generator) -> list[Sample]:
    """``k`` draws from the prior, filed into the partition."""
    out = []
    for _ in range(k):
        env = ctx.scenario.sample(rng)
        seed = int(rng.integers(2**31))
        traj, _, _, landed = ctx.run(policy, env, seed)
        ctx.land(env, traj, landed, ctx.scenario.features(traj))
        out.append(Sample(env, seed, traj, landed, "uniform"))
    return out
