"""Command-line entry point: ``activeswarm <verb> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import yaml

from ..config import ABLATIONS, MODES, ConfigError, Scenario, load_scenario
from .benchmark import BENCHMARK_COLUMNS, gap_benchmark
from .runner import ESTIMATE_COLUMNS, dumps, replay, run_scenario, sweep, write_rows


def _ablations(text: str) -> tuple:
    items = tuple(sorted({a.strip() for a in text.split(",") if a.strip()}))
    bad = [a for a in items if a not in ABLATIONS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown ablation(s) {bad}; choose from {list(ABLATIONS)}")
    return items


def _scenario(args) -> Scenario:
    scen = load_scenario(args.config) if args.config else Scenario()
    if args.seed is not None:
        scen.seeds = tuple(args.seed)
    if args.mode is not None:
        scen.mode = args.mode
    if args.velocity is not None:
        scen.velocity = args.velocity
    if args.duration is not None:
        scen.duration = args.duration
    if args.ablate is not None:
        scen.ablations = args.ablate
    return scen.validate()


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario YAML file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, nargs="+", help="one or more seeds")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--velocity", type=float, help="formation speed, m/s")
    p.add_argument("--duration", type=float, help="flight duration, s")
    p.add_argument("--ablate", type=_ablations, help="comma list from: " + ",".join(ABLATIONS))
    p.add_argument("--out-dir", default="runs/latest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="activeswarm", description="Active-vision swarm localisation simulator")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run a scenario and write CSV logs plus JSON reports")
    _scenario_flags(p)
    p.add_argument("--no-logs", action="store_true", help="write only the JSON reports")

    p = sub.add_parser("sweep", help="velocity x mode grid, writes sweep.csv")
    _scenario_flags(p)
    p.add_argument("--velocities", type=float, nargs="+", default=[0.5, 1.0, 1.5, 2.0])
    p.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))

    p = sub.add_parser("benchmark-gap", help="time the planner for growing swarm sizes")
    p.add_argument("--sizes", type=int, nargs="+", default=[4, 5, 6, 7, 8, 9, 10])
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("replay", help="re-run the estimators from a run directory's measurement CSVs")
    p.add_argument("run_dir", help="a seed directory written by `run`")
    p.add_argument("--out", default=None, help="estimates CSV path (default <run_dir>/replay_estimates.csv)")

    p = sub.add_parser("validate-config", help="check a scenario file and print the resolved values")
    p.add_argument("config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            summary = run_scenario(_scenario(args), args.out_dir, logs=not args.no_logs)
            print(json.dumps(summary["aggregate"], indent=2, sort_keys=True))
            print(f"reports written to {args.out_dir}")
        elif args.verb == "sweep":
            scen = _scenario(args)
            sets = (scen.ablations,)
            rows = sweep(scen, args.velocities, args.modes, sets, args.out_dir)
            print(f"{len(rows)} rows written to {Path(args.out_dir) / 'sweep.csv'}")
        elif args.verb == "benchmark-gap":
            rows = gap_benchmark(args.sizes, args.repeats, args.seed)
            for r in rows:
                print(f"N={r['n_drones']:2d}  candidates {r['candidates_pruned']:>8d} / {r['candidates_unpruned']:>12d}"
                      f"  mean {r['mean_s'] * 1e3:9.3f} ms  max {r['max_s'] * 1e3:9.3f} ms")
            if args.out_dir:
                out = Path(args.out_dir)
                out.mkdir(parents=True, exist_ok=True)
                write_rows(out / "gap_benchmark.csv", BENCHMARK_COLUMNS, [[r[c] for c in BENCHMARK_COLUMNS]
                                                                          for r in rows])
        elif args.verb == "replay":
            rows = replay(args.run_dir)
            out = Path(args.out) if args.out else Path(args.run_dir) / "replay_estimates.csv"
            write_rows(out, ESTIMATE_COLUMNS, rows)
            print(f"{len(rows)} estimates written to {out}")
        elif args.verb == "validate-config":
            scen = load_scenario(args.config).validate()
            resolved = scen.to_dict()
            resolved["config"] = dataclasses.asdict(scen.config)
            sys.stdout.write(dumps(resolved))
            print("config OK")
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (FileNotFoundError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
