"""Command-line front end: ``spikebeam {train,evaluate,sweep,energy-report,validate-config}``.

Exit codes: 0 success, 1 configuration error, 2 training divergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import snapshot
from .config import ConfigError, dbm_to_watt, watt_to_dbm
from .energy import COSTING_NOTE, REPORT_COLUMNS, format_report, report_rows
from .env import TRAJECTORY_COLUMNS
from .experiment import ExperimentSpec, load_spec, provenance_lines, version_string
from .rl import (METRIC_COLUMNS, AlignedPolicy, RandomPolicy, TrainingDiverged, evaluate, power_sweep,
                 train)

log = logging.getLogger("spikebeam")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3
DEFAULT_SWEEP_DBM = (20.0, 25.0, 30.0, 35.0, 40.0)
AGGREGATE_KEYS = ("mean_reward", "mean_sum_rate", "constraint_rate", "actor_rate_l1", "actor_rate_l2",
                  "train_energy_pj", "train_baseline_pj")


class MissingMetricsError(OSError):
    pass


def csv_text(header: Sequence[str], columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def read_csv(path: Path) -> tuple[list[str], list[dict[str, str]]]:
    """Rows of a CSV written by this tool; comment lines are returned separately."""
    comments, body = [], []
    for line in path.read_text().splitlines():
        (comments if line.startswith("#") else body).append(line)
    return comments, list(csv.DictReader(body))


# ----------------------------------------------------------------------------
# spec resolution

def resolve_spec(args: argparse.Namespace) -> ExperimentSpec:
    spec = load_spec(args.config) if args.config else ExperimentSpec()
    changes = {}
    if getattr(args, "seed", None):
        changes["seeds"] = tuple(args.seed)
    if getattr(args, "output", None):
        changes["output"] = args.output
    if getattr(args, "backend", None):
        changes["backend"] = args.backend
    if getattr(args, "iterations", None) is not None:
        changes["train"] = dataclasses.replace(spec.train, iterations=args.iterations)
    if getattr(args, "pmax_dbm", None) is not None:
        changes["scenario"] = spec.scenario.replace(max_power=dbm_to_watt(args.pmax_dbm))
    if getattr(args, "episodes", None) is not None:
        changes["evaluation"] = dataclasses.replace(spec.evaluation, episodes=args.episodes)
    if getattr(args, "sweep_dbm", None):
        changes["sweep_dbm"] = tuple(args.sweep_dbm)
    return spec.replace(**changes) if changes else spec


def _seed_dir(spec: ExperimentSpec, seed: int) -> Path:
    return Path(spec.output) / f"seed_{seed}"


def load_policy(spec: ExperimentSpec, seed: int, snapshot_path: str | None, kind: str | None):
    """Policy named by ``kind`` (aligned/random), an explicit snapshot, or the run's own snapshot."""
    if kind == "aligned":
        return AlignedPolicy(spec.scenario, spec.train.power_fill)
    if kind == "random" or (kind is None and snapshot_path is None and spec.backend == "random"):
        return RandomPolicy(spec.scenario, spec.train.power_fill, seed=seed)
    path = Path(snapshot_path) if snapshot_path else _seed_dir(spec, seed) / "policy.bin"
    policy, _ = snapshot.load(path, spec.scenario)
    return policy


# ----------------------------------------------------------------------------
# train

def metrics_rows(metrics: list[dict]) -> list[list]:
    return [[row[c] for c in METRIC_COLUMNS] for row in metrics]


def aggregate_rows(per_seed: list[list[dict]]) -> list[list]:
    """Per-iteration mean and population std across seeds."""
    rows = []
    for it in range(min(len(m) for m in per_seed)):
        row = [it]
        for key in AGGREGATE_KEYS:
            vals = np.array([m[it][key] for m in per_seed], dtype=float)
            row += [float(np.mean(vals)), float(np.std(vals))]
        rows.append(row)
    return rows


AGGREGATE_COLUMNS = ("iteration",) + tuple(f"{k}_{s}" for k in AGGREGATE_KEYS for s in ("mean", "std"))
SUMMARY_COLUMNS = ("seed", "eval_mean_episode_reward", "eval_mean_sum_rate", "eval_constraint_rate")


def cmd_train(args: argparse.Namespace) -> int:
    spec = resolve_spec(args)
    out = Path(spec.output)
    per_seed, summary = [], []
    for seed in spec.seeds:
        tcfg = dataclasses.replace(spec.train, seed=seed)
        log.info("training seed %d (%s, %d iterations)", seed, spec.backend, tcfg.iterations)
        result = train(tcfg, spec.scenario, spec.backend)
        header = provenance_lines(spec, seed=seed)
        d = _seed_dir(spec, seed)
        write_text(d / "metrics.csv", csv_text(header, METRIC_COLUMNS, metrics_rows(result.metrics)))
        # short inference run so the energy table has an inference phase
        report = evaluate(result.policy, spec.scenario, spec.evaluation.episodes, spec.evaluation.seed,
                          spec.evaluation.deterministic, ledger=result.ledger)
        rows = report_rows(result.ledger, network=spec.backend)
        write_text(d / "energy.csv", format_report(rows, header + [COSTING_NOTE]))
        if result.critic is not None:
            d.mkdir(parents=True, exist_ok=True)
            snapshot.save(d / "policy.bin", result.policy, result.critic)
        per_seed.append(result.metrics)
        summary.append([seed, report.mean_episode_reward, report.mean_sum_rate, report.constraint_rate])
    header = provenance_lines(spec)
    write_text(out / "aggregate.csv", csv_text(header, AGGREGATE_COLUMNS, aggregate_rows(per_seed)))
    vals = np.array([r[1:] for r in summary], dtype=float)
    summary.append(["mean"] + [float(v) for v in vals.mean(axis=0)])
    summary.append(["std"] + [float(v) for v in vals.std(axis=0)])
    write_text(out / "summary.csv", csv_text(header, SUMMARY_COLUMNS, summary))
    print(f"wrote {len(spec.seeds)} run(s) under {out}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# evaluate / sweep

RATE_COLUMNS = ("slot", "mean_sum_rate", "mean_reward", "mean_crlb_theta", "mean_crlb_d")
SWEEP_COLUMNS = ("p_max_dbm", "mean_sum_rate", "sem_sum_rate", "mean_episode_reward", "constraint_rate")


def sweep_rows(results) -> list[list]:
    return [[dbm, r.mean_sum_rate, r.sem_sum_rate, r.mean_episode_reward, r.constraint_rate]
            for dbm, r in results]


def _policy_label(args) -> str:
    return args.policy or (args.snapshot and f"snapshot:{args.snapshot}") or "run"


def cmd_evaluate(args: argparse.Namespace) -> int:
    spec = resolve_spec(args)
    ev = spec.evaluation
    for seed in spec.seeds:
        policy = load_policy(spec, seed, args.snapshot, args.policy)
        header = provenance_lines(spec, seed=seed, policy=_policy_label(args))
        d = _seed_dir(spec, seed)
        record = [] if args.trajectory else None
        report = evaluate(policy, spec.scenario, ev.episodes, ev.seed, ev.deterministic, record=record)
        rows = [[n, report.sum_rate_per_slot[n], report.reward_per_slot[n], report.crlb_theta_per_slot[n],
                 report.crlb_d_per_slot[n]] for n in range(spec.scenario.horizon)]
        write_text(d / "rate_vs_slot.csv", csv_text(header, RATE_COLUMNS, rows))
        if record is not None:
            write_text(d / "trajectory.csv", csv_text(header, ("episode",) + TRAJECTORY_COLUMNS, record))
        if args.sweep:
            grid = spec.sweep_dbm or DEFAULT_SWEEP_DBM
            res = power_sweep(policy, spec.scenario, grid, ev.episodes, ev.seed, ev.deterministic)
            write_text(d / "power_sweep.csv", csv_text(header, SWEEP_COLUMNS, sweep_rows(res)))
        print(f"seed {seed}: mean sum-rate {report.mean_sum_rate:.4f} bps/Hz, "
              f"mean episode reward {report.mean_episode_reward:.4f}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = resolve_spec(args)
    ev = spec.evaluation
    grid = spec.sweep_dbm or DEFAULT_SWEEP_DBM
    for seed in spec.seeds:
        policy = load_policy(spec, seed, args.snapshot, args.policy)
        header = provenance_lines(spec, seed=seed, policy=_policy_label(args), sweep_dbm=list(grid))
        res = power_sweep(policy, spec.scenario, grid, ev.episodes, ev.seed, ev.deterministic)
        write_text(_seed_dir(spec, seed) / "power_sweep.csv", csv_text(header, SWEEP_COLUMNS, sweep_rows(res)))
        for dbm, r in res:
            print(f"seed {seed} P_max {dbm:g} dBm: {r.mean_sum_rate:.4f} bps/Hz")
    return EXIT_OK


# ----------------------------------------------------------------------------
# energy report

ENERGY_REPORT_COLUMNS = ("run",) + REPORT_COLUMNS


def _energy_table(run: Path) -> list[dict[str, str]]:
    path = run / "energy.csv" if run.is_dir() else run
    if not path.is_file():
        raise MissingMetricsError(f"no energy.csv found for {run}")
    _, rows = read_csv(path)
    if not rows or set(REPORT_COLUMNS) - set(rows[0]):
        raise MissingMetricsError(f"{path} is not an energy table")
    return rows


def cmd_energy_report(args: argparse.Namespace) -> int:
    """Collect per-run energy tables and add dense-over-spiking ratios when both are present."""
    runs = [Path(r) for r in args.runs]
    out_rows: list[list] = []
    by_network: dict[tuple[str, str], float] = {}
    for run in runs:
        for row in _energy_table(run):
            out_rows.append([str(run)] + [row[c] for c in REPORT_COLUMNS])
            if not row["network"].startswith("ratio") and row["network"] != "baseline":
                by_network[(row["phase"], row["network"])] = float(row["energy_pj"])
    for phase in ("training", "inference"):
        spk, dense = by_network.get((phase, "spiking")), by_network.get((phase, "dense"))
        if spk is not None and dense is not None:
            ratio = dense / spk if spk > 0 else float("nan")
            out_rows.append(["*", phase, "ratio_dense_over_spiking", "", "", "", ratio])
    header = [f"spikebeam {version_string()}", "runs " + json.dumps([str(r) for r in runs]), COSTING_NOTE]
    text = csv_text(header, ENERGY_REPORT_COLUMNS, out_rows)
    if args.output:
        write_text(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ----------------------------------------------------------------------------
# validate-config

def cmd_validate_config(args: argparse.Namespace) -> int:
    spec = resolve_spec(args)
    info = spec.to_dict()
    info["scenario"]["max_power_dbm"] = watt_to_dbm(spec.scenario.max_power)
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


# ----------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("config", nargs=None if config_required else "?", help="experiment YAML file")
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable; overrides the file)")
    p.add_argument("--output", help="output directory")
    p.add_argument("--backend", choices=("spiking", "dense", "random"))
    p.add_argument("--pmax-dbm", type=float, help="override the power budget (dBm)")


def _policy_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--snapshot", help="policy snapshot (default: <output>/seed_<s>/policy.bin)")
    p.add_argument("--policy", choices=("aligned", "random"), help="use a fixed reference policy")
    p.add_argument("--episodes", type=int, help="evaluation episodes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikebeam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one policy per seed")
    _common(p)
    p.add_argument("--iterations", type=int, help="override train.iterations")
    p.add_argument("--episodes", type=int, help="evaluation episodes after training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-slot sum-rate of a policy")
    _common(p)
    _policy_args(p)
    p.add_argument("--sweep", action="store_true", help="also sweep P_max over the configured grid")
    p.add_argument("--sweep-dbm", type=float, nargs="+", help="sweep grid (dBm)")
    p.add_argument("--trajectory", action="store_true", help="write the per-slot trajectory log")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="mean sum-rate versus P_max")
    _common(p)
    _policy_args(p)
    p.add_argument("--sweep-dbm", type=float, nargs="+", help="sweep grid (dBm)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("energy-report", help="combine energy tables of finished runs")
    p.add_argument("runs", nargs="+", help="run directories (seed_<s>) or energy.csv files")
    p.add_argument("--output", help="write the table here instead of stdout")
    p.set_defaults(func=cmd_energy_report)

    p = sub.add_parser("validate-config", help="check a config file and print the resolved values")
    _common(p, config_required=True)
    p.set_defaults(func=cmd_validate_config)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except snapshot.SnapshotMismatch as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, snapshot.SnapshotError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
