"""Command-line entry point.

Subcommands: ``run``, ``evaluate``, ``report``, ``sweep-brake-threshold``
and ``validate-config``.  Exit codes: 0 success, 1 configuration error,
2 runtime failure.  ``SGDA_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import config as config_mod
from . import metrics, pipeline
from .errors import ConfigError, SgdaError
from .policy import MlpPolicy
from .scenario import DrivingScenario, default_jobs
from .simenv import ScriptedExpert

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("sgda")

REPORT_METRICS = ("match_rate", "mean_dtw", "l1_loss", "rare_match_rate")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; bad usage is a configuration error here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _load_config(path: Optional[str]) -> config_mod.RunConfig:
    return config_mod.load(path) if path else config_mod.load_default()


def _override(cfg, args) -> config_mod.RunConfig:
    kw = {}
    for name in ("strategy", "seed", "jobs"):
        value = getattr(args, name, None)
        if value is not None:
            kw[name] = value
    return cfg.replace_run(**kw) if kw else cfg


def _fresh_dir(path: str) -> Path:
    """Outputs are append-only: refuse to write into a non-empty directory."""
    p = Path(path)
    if p.exists() and any(p.iterdir()):
        raise SgdaError(f"output directory {p} is not empty")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _thresholds(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


# --- commands ----------------------------------------------------------------


def cmd_validate_config(args) -> int:
    cfg = config_mod.load(args.path)
    print(f"ok: strategy={cfg.run.strategy} seed={cfg.run.seed} "
          f"specs={cfg.partition().num_specs}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _override(_load_config(args.config), args)
    out = _fresh_dir(args.out)
    result = pipeline.run_strategy(cfg, out_dir=out)
    test = pipeline.build_test_set(cfg)
    ev = pipeline.evaluate(cfg, result.policy, test)
    pipeline.write_final(out, cfg, result, ev, test)
    (out / "final" / "test_set.jsonl").write_text(metrics.test_set_jsonl(test))
    print(metrics.metrics_csv([pipeline.metrics_row(cfg, ev, len(result.dataset))]), end="")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = Path(args.run)
    cfg = config_mod.load(run / "config.snapshot")
    cfg = _override(cfg, args)
    policy = MlpPolicy.load(run / "final" / "policy.ckpt")
    if args.test:
        scenario = DrivingScenario(cfg.geometry, tuple(cfg.eval.dtw_features))
        test = metrics.load_test_set(args.test, ScriptedExpert(cfg.expert, cfg.geometry),
                                     scenario, cfg.partition(), cfg.run.jobs or default_jobs())
    else:
        test = pipeline.build_test_set(cfg)
    ev = pipeline.evaluate(cfg, policy, test)
    text = metrics.metrics_csv([pipeline.metrics_row(cfg, ev)])
    if args.out:
        out = _fresh_dir(args.out)
        (out / "metrics.csv").write_text(text)
        (out / "per_outcome.csv").write_text(metrics.metrics_csv(
            metrics.per_outcome_rows(cfg.partition(), {cfg.run.strategy: ev.report})))
    print(text, end="")
    return EXIT_OK


def _read_csv(path: Path) -> list[dict]:
    try:
        return list(csv.DictReader(io.StringIO(path.read_text())))
    except OSError as exc:
        raise SgdaError(f"cannot read {path}: {exc}") from None


def merge_reports(run_dirs: Sequence[Path]) -> tuple[list[dict], list[dict], list[dict]]:
    """Comparison table, merged per-outcome table and tidy plot data.

    Columns of the per-outcome table are keyed by run directory name so
    that several seeds of one strategy can sit side by side.
    """
    summary, plot = [], []
    outcomes: dict[int, dict] = {}
    for d in run_dirs:
        rows = _read_csv(d / "final" / "metrics.csv")
        if len(rows) != 1:
            raise SgdaError(f"{d}: expected one metrics row, found {len(rows)}")
        r = rows[0]
        strategy, seed = r["strategy"], r["seed"]
        summary.append({"run": d.name, "strategy": strategy, "seed": seed,
                        **{m: r[m] for m in REPORT_METRICS}})
        for m in REPORT_METRICS:
            plot.append({"run": d.name, "strategy": strategy, "seed": seed,
                         "spec": "all", "metric": m, "value": r[m]})
        for o in _read_csv(d / "final" / "per_outcome.csv"):
            j = int(o["spec"])
            row = outcomes.setdefault(j, {"spec": j, "pattern": o["pattern"],
                                          "label": o["label"]})
            row[f"outcomes_{d.name}"] = o["outcomes"]
            row[f"match_{d.name}"] = o[f"match_{strategy}"]
            plot.append({"run": d.name, "strategy": strategy, "seed": seed, "spec": j,
                         "metric": "match_rate", "value": o[f"match_{strategy}"]})
    return summary, [outcomes[j] for j in sorted(outcomes)], plot


def cmd_report(args) -> int:
    dirs = [Path(d) for d in args.runs]
    summary, per_outcome, plot = merge_reports(dirs)
    out = _fresh_dir(args.out)
    (out / "comparison.csv").write_text(metrics.metrics_csv(summary))
    (out / "per_outcome.csv").write_text(metrics.metrics_csv(per_outcome))
    (out / "plot_data.csv").write_text(metrics.metrics_csv(plot))
    print(metrics.metrics_csv(summary), end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _override(_load_config(args.config), args)
    thresholds = args.thresholds or cfg.eval.brake_thresholds
    scenario = DrivingScenario(cfg.geometry, tuple(cfg.eval.dtw_features))
    policies = {}
    if args.runs:
        for d in map(Path, args.runs):
            snap = config_mod.load(d / "config.snapshot")
            policies[snap.run.strategy] = MlpPolicy.load(d / "final" / "policy.ckpt")
    else:
        for strategy in ("sgda", "uniform"):
            policies[strategy] = pipeline.run_strategy(cfg.replace_run(strategy=strategy)).policy
    test = pipeline.build_test_set(cfg)
    prop = next(p for p in cfg.property_list() if p.name == cfg.eval.brake_property)
    rows = metrics.brake_threshold_sweep(test, policies, scenario, prop, thresholds,
                                         cfg.run.jobs or default_jobs())
    table = [{"threshold": r.threshold, "expert_violation_freq": r.expert_violation_freq,
              **{f"violation_match_{k}": v for k, v in r.violation_match.items()}}
             for r in rows]
    text = metrics.metrics_csv(table)
    if args.out:
        out = _fresh_dir(args.out)
        (out / "brake_sweep.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sgda", description="Specification-guided data aggregation for imitation learning.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, strategy=False):
        sp.add_argument("--config", help="TOML run config (default: shipped desk-scale config)")
        sp.add_argument("--seed", type=int, help="master seed; overrides the config")
        sp.add_argument("--jobs", type=int, help="rollout worker processes (default: all cores)")
        if strategy:
            sp.add_argument("--strategy", choices=config_mod.STRATEGIES,
                            help="overrides the config")

    sp = sub.add_parser("run", help="train with one strategy and evaluate")
    common(sp, strategy=True)
    sp.add_argument("--out", required=True, help="new run directory")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("evaluate", help="re-evaluate a finished run")
    sp.add_argument("run", help="run directory")
    sp.add_argument("--test", help="test set file (test_set.jsonl); built from the config if absent")
    sp.add_argument("--seed", type=int, help="seed for building a fresh test set")
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--out", help="new directory for the evaluation tables")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="merge run directories into comparison tables")
    sp.add_argument("runs", nargs="+", help="run directories")
    sp.add_argument("--out", required=True, help="new report directory")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("sweep-brake-threshold",
                        help="brake-property violation matching across thresholds")
    common(sp)
    sp.add_argument("--thresholds", type=_thresholds, help="comma-separated, e.g. 0.2,0.3,0.4,0.5")
    sp.add_argument("--runs", nargs="+", help="reuse the policies of these run directories")
    sp.add_argument("--out", help="new directory for brake_sweep.csv")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("validate-config", help="parse and check a config file")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_validate_config)
    return p


def _setup_logging() -> None:
    level = os.environ.get("SGDA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", None) is not None and args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SgdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001  anything else is a runtime failure
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
