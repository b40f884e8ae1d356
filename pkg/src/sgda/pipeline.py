"""Data-aggregation loop and the environment-sampling strategies it compares.

Every strategy shares the same skeleton and budgets: collect an initial
expert dataset from the prior, train, then for each round draw a pool of
``k`` environments, pick ``m`` of them, label those with expert rollouts,
aggregate and retrain from scratch.  Strategies differ only in how the
pool is drawn and how the ``m`` are picked:

``sgda``
    bandit-scheduled, spec-targeted pool; mismatch-weighted selection.
``uniform``
    ``m`` environments straight from the prior.
``single_spec``
    pool from one falsifier of the all-properties conjunction; uniform pick.
``individual_props``
    pool from one falsifier per property, budget split evenly; uniform pick.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import config as config_mod
from . import metrics, stl
from .bayesopt import Sampler, target_value
from .config import RunConfig
from .ecsampling import BanditTrace, Sample, SamplingContext, ec_sampling
from .ecselect import OutcomePairTable, ec_select, selection_report, selection_weights
from .errors import SgdaError
from .policy import Dataset, MlpPolicy, train_bc
from .scenario import DrivingScenario, default_jobs, parallel_map
from .simenv import ScriptedExpert
from .stp import Partition

log = logging.getLogger(__name__)


def split_budget(total: int, parts: int) -> list[int]:
    """Even split, remainder to the lowest indices: 100 / 3 -> [34, 33, 33]."""
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _seed(*key: int) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def _expert_rollout(args):
    scenario, part, expert, env, seed = args
    traj = scenario.rollout(expert, env, seed)
    return traj, part.classify(scenario.signals(traj))


@dataclass
class RoundRecord:
    index: int
    policy: MlpPolicy
    pool: list[Sample]
    selected: list[int]
    expert_specs: list[int]
    weights: Optional[list] = None
    report: str = ""
    trace: str = ""
    pairs_added: int = 0


@dataclass
class RunResult:
    config: RunConfig
    policy: MlpPolicy
    dataset: Dataset
    rounds: list[RoundRecord] = field(default_factory=list)
    partition: Optional[Partition] = None


# --- falsification pools -----------------------------------------------------


@dataclass
class Falsifier:
    """Maximises ``-robustness`` of one formula, with the diversity bonus
    once the formula is violated."""

    key: str
    formula: Any
    store: list = field(default_factory=list)

    def value(self, signals, feats, bo) -> float:
        rho = stl.eval_quant(self.formula, signals)
        violated = not stl.eval_bool(self.formula, signals)
        v = target_value(-rho, violated, feats, self.store, bo.bonus_a, bo.d_cap)
        if violated:
            self.store.append(feats)
        return v


def falsification_pool(falsifiers: Sequence[Falsifier], budgets: Sequence[int], seed_samples: int,
                       scenario, part: Partition, policy, sampler: Sampler,
                       rng: np.random.Generator) -> list[Sample]:
    """Uniform warm-up draws seen by every falsifier, then each falsifier's
    guided budget in turn."""
    out = []
    bo = sampler.config

    def run(env, seed):
        traj = scenario.rollout(policy, env, seed)
        sig = scenario.signals(traj)
        return traj, sig, part.classify(sig), scenario.features(traj)

    for _ in range(seed_samples):
        env = scenario.sample(rng)
        seed = int(rng.integers(2**31))
        traj, sig, j, feats = run(env, seed)
        x = scenario.encode(env)
        for f in falsifiers:
            sampler.observe(f.key, x, f.value(sig, feats, bo))
        part.landed[j].append((env, traj))
        out.append(Sample(env, seed, traj, j, "seed"))
    for f, budget in zip(falsifiers, budgets):
        for _ in range(budget):
            env = scenario.decode(sampler.propose(f.key, rng))
            seed = int(rng.integers(2**31))
            traj, sig, j, feats = run(env, seed)
            v = f.value(sig, feats, bo)
            sampler.observe(f.key, scenario.encode(env), v)
            part.landed[j].append((env, traj))
            out.append(Sample(env, seed, traj, j, "guided", target=v))
    return out


def conjunction(part: Partition):
    fs = [p.formula for p in part.properties]
    return fs[0] if len(fs) == 1 else stl.And(tuple(fs))


# --- main loop ---------------------------------------------------------------


class Runner:
    def __init__(self, cfg: RunConfig, expert=None, scenario=None, out_dir=None):
        self.cfg = cfg
        self.scenario = scenario or DrivingScenario(cfg.geometry, tuple(cfg.eval.dtw_features))
        self.expert = expert or ScriptedExpert(cfg.expert, cfg.geometry)
        self.part = cfg.partition()
        self.jobs = cfg.run.jobs or default_jobs()
        self.out = Path(out_dir) if out_dir else None
        self.sampler = Sampler(self.scenario.dim, cfg.bo)
        self.ctx = SamplingContext(self.part, self.sampler, self.scenario)
        self.falsifiers = self._make_falsifiers()

    def _make_falsifiers(self) -> list[Falsifier]:
        s = self.cfg.run.strategy
        if s == "single_spec":
            return [Falsifier("conjunction", conjunction(self.part))]
        if s == "individual_props":
            return [Falsifier(p.name, p.formula) for p in self.part.properties]
        return []

    # rollouts
    def expert_episodes(self, envs_seeds):
        return parallel_map(_expert_rollout, [(self.scenario, self.part, self.expert, e, s)
                                              for e, s in envs_seeds], self.jobs)

    def train(self, data: Dataset, i: int) -> MlpPolicy:
        return train_bc(data, self.cfg.train, seed=_seed(self.cfg.run.seed, 2, i))

    def initial_dataset(self) -> Dataset:
        rng = np.random.default_rng([self.cfg.run.seed, 1])
        draws = [(self.scenario.sample(rng), int(rng.integers(2**31)))
                 for _ in range(self.cfg.run.initial_episodes)]
        data = Dataset()
        for n, ((e, s), (traj, _)) in enumerate(zip(draws, self.expert_episodes(draws))):
            data.add_episode(traj.states, traj.actions, f"init-{n}", -1)
        return data

    def pool(self, policy, i: int, rng, trace: BanditTrace) -> list[Sample]:
        r = self.cfg.run
        s = r.strategy
        if s == "sgda":
            return ec_sampling(self.ctx, policy, r.k - r.seed_samples, rng,
                               seed_samples=r.seed_samples, weighted=r.weighted, c=r.ucb_c,
                               trace=trace)
        if s == "uniform":
            out = []
            for _ in range(r.m):
                env = self.scenario.sample(rng)
                out.append(Sample(env, int(rng.integers(2**31)), None, -1, "uniform"))
            return out
        budgets = split_budget(r.k - r.seed_samples, len(self.falsifiers))
        return falsification_pool(self.falsifiers, budgets, r.seed_samples, self.scenario,
                                  self.part, policy, self.sampler, rng)

    def select(self, pool: list[Sample], prev: Optional[OutcomePairTable], rng):
        r = self.cfg.run
        if r.strategy == "uniform":
            return list(range(len(pool))), None
        if r.strategy == "sgda" and prev is not None:
            w = selection_weights(prev)
            return ec_select([p.spec for p in pool], w, r.m, rng), w
        return ec_select([p.spec for p in pool], None, r.m, rng), None

    def run(self) -> RunResult:
        cfg = self.cfg
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / "config.snapshot").write_text(config_mod.dumps(cfg))
        data = self.initial_dataset()
        log.info("%s seed %d: initial dataset %d pairs", cfg.run.strategy, cfg.run.seed, len(data))
        policy = self.train(data, 0)
        result = RunResult(cfg, policy, data, partition=self.part)
        prev: Optional[OutcomePairTable] = None
        for i in range(cfg.run.rounds):
            try:
                rec, prev, data_new = self.round(i, policy, prev)
            except SgdaError as exc:
                self._failure(i, exc)
                raise
            data.extend(data_new)
            log.info("round %d: %d pool, %d selected, expert specs %s, %d pairs total",
                     i, len(rec.pool), len(rec.selected), rec.expert_specs, len(data))
            policy = self.train(data, i + 1)
            result.rounds.append(rec)
            if self.out:
                self.persist_round(rec, data_new)
        result.policy = policy
        result.dataset = data
        return result

    def round(self, i: int, policy, prev):
        rng = np.random.default_rng([self.cfg.run.seed, 3, i])
        trace = BanditTrace()
        pool = self.pool(policy, i, rng, trace)
        selected, weights = self.select(pool, prev, rng)
        labelled = self.expert_episodes([(pool[j].env, pool[j].seed) for j in selected])
        table = OutcomePairTable(self.part.num_specs)
        data_new = Dataset()
        expert_specs = []
        for j, (traj, spec) in zip(selected, labelled):
            data_new.add_episode(traj.states, traj.actions, f"r{i}-{j}", i)
            expert_specs.append(spec)
            if pool[j].traj is not None:
                table.add(spec, pool[j].spec)
        report = ""
        if self.cfg.run.strategy != "uniform":
            report = selection_report(prev or OutcomePairTable(self.part.num_specs),
                                      weights or [1] * self.part.num_specs,
                                      [p.spec for p in pool], selected,
                                      [s.label(self.part.names) for s in self.part.specs])
        rec = RoundRecord(i, policy, pool, selected, expert_specs, weights, report,
                          trace.to_csv() if trace.rows else self.sampler.log_csv(),
                          len(data_new))
        return rec, table, data_new

    # --- artifacts -----------------------------------------------------------

    def _failure(self, i: int, exc: Exception) -> None:
        if not self.out:
            return
        d = self.out / f"round_{i}"
        d.mkdir(parents=True, exist_ok=True)
        (d / "failure.json").write_text(json.dumps(
            {"round": i, "error": type(exc).__name__, "message": str(exc),
             "traceback": traceback.format_exc()}, indent=1) + "\n")

    def persist_round(self, rec: RoundRecord, data_new: Dataset) -> None:
        d = self.out / f"round_{rec.index}"
        d.mkdir(parents=True, exist_ok=True)
        rec.policy.save(d / "policy.ckpt")
        with open(d / "pool.jsonl", "w") as fh:
            for n, p in enumerate(rec.pool):
                fh.write(json.dumps({"index": n, "env": metrics.env_to_json(p.env), "seed": p.seed,
                                     "phase": p.phase, "target_spec": p.target_spec,
                                     "landed_spec": p.spec,
                                     "target": None if p.target != p.target else p.target},
                                    sort_keys=True) + "\n")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pool_index", "seed", "il_spec", "expert_spec", "env"])
        for j, spec in zip(rec.selected, rec.expert_specs):
            w.writerow([j, rec.pool[j].seed, rec.pool[j].spec, spec,
                        json.dumps(metrics.env_to_json(rec.pool[j].env), sort_keys=True)])
        (d / "selected.csv").write_text(buf.getvalue())
        with open(d / "dataset_delta.jsonl", "w") as fh:
            for j, spec in zip(rec.selected, rec.expert_specs):
                p = rec.pool[j]
                fh.write(json.dumps({"episode": f"r{rec.index}-{j}", "env": metrics.env_to_json(p.env),
                                     "seed": p.seed, "expert_spec": spec}, sort_keys=True) + "\n")
        (d / "partition.csv").write_text(self.part.to_csv())
        (d / "bandit_trace.csv").write_text(rec.trace)
        if rec.report:
            (d / "selection.csv").write_text(rec.report)


def run_strategy(cfg: RunConfig, expert=None, scenario=None, out_dir=None) -> RunResult:
    return Runner(cfg, expert, scenario, out_dir).run()


def run_sgda(cfg, expert=None, scenario=None, out_dir=None):
    return run_strategy(cfg.replace_run(strategy="sgda"), expert, scenario, out_dir)


def run_baseline_uniform(cfg, expert=None, scenario=None, out_dir=None):
    return run_strategy(cfg.replace_run(strategy="uniform"), expert, scenario, out_dir)


def run_baseline_single_spec(cfg, expert=None, scenario=None, out_dir=None):
    return run_strategy(cfg.replace_run(strategy="single_spec"), expert, scenario, out_dir)


def run_baseline_individual_props(cfg, expert=None, scenario=None, out_dir=None):
    return run_strategy(cfg.replace_run(strategy="individual_props"), expert, scenario, out_dir)


# --- evaluation --------------------------------------------------------------


@dataclass
class Evaluation:
    report: metrics.MatchReport
    l1: float
    rare: list[int]

    def rare_rate(self) -> float:
        t = sum(self.report.per_spec_total[j] for j in self.rare)
        m = sum(self.report.per_spec_matched[j] for j in self.rare)
        return float(m / t) if t else float("nan")

    def rare_mean_rate(self) -> float:
        """Unweighted mean of per-spec match rates over the rare specs."""
        rates = [self.report.rate(j) for j in self.rare if self.report.per_spec_total[j]]
        return float(np.mean(rates)) if rates else float("nan")


def build_test_set(cfg: RunConfig, expert=None, scenario=None) -> metrics.TestSet:
    scenario = scenario or DrivingScenario(cfg.geometry, tuple(cfg.eval.dtw_features))
    expert = expert or ScriptedExpert(cfg.expert, cfg.geometry)
    return metrics.build_test_set(expert, scenario, cfg.partition(), cfg.eval.test_size,
                                  cfg.eval.floor_frac, seed=cfg.run.seed, cap=cfg.eval.cap,
                                  jobs=cfg.run.jobs or default_jobs())


def evaluate(cfg: RunConfig, policy, test: metrics.TestSet, scenario=None) -> Evaluation:
    scenario = scenario or DrivingScenario(cfg.geometry, tuple(cfg.eval.dtw_features))
    part = cfg.partition()
    rep = metrics.outcome_matching(policy, test, part, scenario, jobs=cfg.run.jobs or default_jobs())
    rare = metrics.rare_specs(test, part.num_specs, cfg.eval.rare_threshold)
    return Evaluation(rep, metrics.l1_test_loss(policy, test), rare)


def metrics_row(cfg: RunConfig, ev: Evaluation, pairs: Optional[int] = None) -> dict:
    return {"strategy": cfg.run.strategy, "seed": cfg.run.seed,
            "match_rate": ev.report.overall, "rare_match_rate": ev.rare_mean_rate(),
            "mean_dtw": ev.report.mean_dtw, "median_dtw": ev.report.median_dtw,
            "l1_loss": ev.l1, "test_size": int(ev.report.per_spec_total.sum()),
            "dataset_pairs": "" if pairs is None else pairs}


def write_final(out_dir, cfg: RunConfig, result: RunResult, ev: Evaluation,
                test: metrics.TestSet) -> None:
    d = Path(out_dir) / "final"
    d.mkdir(parents=True, exist_ok=True)
    result.policy.save(d / "policy.ckpt")
    (d / "metrics.csv").write_text(metrics.metrics_csv([metrics_row(cfg, ev, len(result.dataset))]))
    part = cfg.partition()
    (d / "per_outcome.csv").write_text(
        metrics.metrics_csv(metrics.per_outcome_rows(part, {cfg.run.strategy: ev.report})))
    rows = [{"entry": n, "expert_spec": t.spec, "policy_spec": ev.report.il_specs[n],
             "dtw": float(ev.report.dtw[n])} for n, t in enumerate(test.entries)]
    (d / "dtw.csv").write_text(metrics.metrics_csv(rows))
