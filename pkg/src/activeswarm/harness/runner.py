"""Scenario execution, report writing and estimator-only replay."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..config import Scenario, SwarmConfig, scenario_from_dict
from ..estimator import RelativeEstimator
from ..sensors import BusMessage, MeasurementLog
from .simulation import RunRecord, run_once

AXES = ("x", "y", "z")
ESTIMATE_COLUMNS = ["tick", "owner", "target", "x", "y", "z", "stale", "iterations", "final_cost"]
TRUTH_COLUMNS = ["tick", "drone", "x", "y", "z", "vx", "vy", "vz", "camera_angle"]
CONTROL_COLUMNS = ["tick", "drone", "ux", "uy", "uz"]
SWEEP_COLUMNS = ["velocity", "mode", "ablations", "metric", "mean", "std", "n"]
SUMMARY_METRICS = ("rmse_x", "rmse_y", "rmse_z", "rmse_xy", "detection_duty", "angle_error_deg",
                   "position_error_m", "final_position_error_m", "mean_iterations", "converged_fraction")


@dataclass
class MetricsReport:
    """Deterministic per-run metrics. Wall-clock figures live in ``timing``."""

    seed: int
    mode: str
    ablations: tuple
    velocity: float
    metrics: dict
    diverged_at: float | None = None
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "ablations": list(self.ablations),
            "velocity": self.velocity,
            "diverged_at_s": self.diverged_at,
            "metrics": {k: _clean(v) for k, v in self.metrics.items()},
        }


def _clean(v):
    """JSON-safe float: NaN and infinities become ``None``."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _mean(values) -> float:
    a = np.asarray(values, dtype=float)
    return float(np.nanmean(a)) if a.size and not np.all(np.isnan(a)) else math.nan


def metrics_of(rec: RunRecord) -> dict:
    out = dict.fromkeys(SUMMARY_METRICS, math.nan)
    if rec.errors:
        err = np.asarray(rec.errors)
        per_axis = np.sqrt(np.nanmean(err**2, axis=(0, 1, 2)))
        out.update({f"rmse_{a}": float(v) for a, v in zip(AXES, per_axis)})
        out["rmse_xy"] = float(np.sqrt(np.nanmean(np.sum(err[..., :2] ** 2, axis=-1))))
        out["detection_duty"] = _mean(rec.detections)
    if rec.angle_errors:
        out["angle_error_deg"] = _mean(rec.angle_errors)
    if rec.position_errors:
        out["position_error_m"] = _mean(rec.position_errors)
        out["final_position_error_m"] = float(np.max(rec.position_errors[-1]))
    if rec.iterations:
        out["mean_iterations"] = _mean(rec.iterations)
        out["converged_fraction"] = _mean(rec.converged)
    return out


def report_of(rec: RunRecord) -> MetricsReport:
    cfg = rec.config
    diverged = None if rec.diverged_at is None else (rec.diverged_at - rec.init_tick) * cfg.dt
    times = np.asarray(rec.solve_times, dtype=float)
    timing = {"mean_solve_ms": float(times.mean() * 1e3) if times.size else None,
              "max_solve_ms": float(times.max() * 1e3) if times.size else None}
    return MetricsReport(cfg.seed, rec.mode, tuple(rec.ablations), cfg.formation.speed, metrics_of(rec),
                         diverged, timing)


def aggregate(reports: list[MetricsReport]) -> dict:
    agg = {}
    for name in SUMMARY_METRICS:
        vals = np.array([r.metrics[name] for r in reports], dtype=float)
        vals = vals[np.isfinite(vals)]
        agg[name] = {
            "mean": _clean(vals.mean()) if vals.size else None,
            "std": _clean(vals.std()) if vals.size else None,
            "n": int(vals.size),
        }
    agg["diverged_runs"] = sum(r.diverged_at is not None for r in reports)
    return agg


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_rows(path: Path, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def read_rows(path: Path) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[1:]


def write_run(rec: RunRecord, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.yaml").write_text(
        yaml.safe_dump({"config": rec.config.to_dict(), "mode": rec.mode, "ablations": list(rec.ablations),
                        "last_tick": int(rec.truth_log[-1][0]) if rec.truth_log else 0}, sort_keys=True)
    )
    write_rows(directory / "truth.csv", TRUTH_COLUMNS, rec.truth_log)
    write_rows(directory / "controls.csv", CONTROL_COLUMNS, rec.control_log)
    write_rows(directory / "estimates.csv", ESTIMATE_COLUMNS, rec.estimate_log)
    if rec.measurements is not None:
        rec.measurements.write_csv(directory / "measurements")
    (directory / "summary.json").write_text(dumps(report_of(rec).to_dict()))


def run_scenario(scenario: Scenario, out_dir: str | Path | None = None, logs: bool = True) -> dict:
    """Run every seed of ``scenario``; write reports under ``out_dir`` when given.

    Returns the deterministic summary (the content of ``summary.json``).
    """
    scenario.validate()
    out = Path(out_dir) if out_dir is not None else None
    record = logs and out is not None
    reports = []
    for seed in scenario.seeds:
        rec = run_once(scenario.for_seed(seed), scenario.mode, scenario.ablations, record=record)
        reports.append(report_of(rec))
        if record:
            write_run(rec, out / f"seed_{seed}")
    summary = {
        "scenario": scenario.to_dict(),
        "runs": [r.to_dict() for r in reports],
        "aggregate": aggregate(reports),
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(dumps(summary))
        (out / "timing.json").write_text(
            json.dumps({str(r.seed): r.timing for r in reports}, indent=2, sort_keys=True) + "\n"
        )
        diverged = [r for r in reports if r.diverged_at is not None]
        if diverged:
            (out / "divergence.json").write_text(
                dumps([{"seed": r.seed, "diverged_at_s": r.diverged_at} for r in diverged])
            )
    return summary


def sweep(
    scenario: Scenario,
    velocities,
    modes=("active", "fixed"),
    ablation_sets=((),),
    out_dir: str | Path | None = None,
) -> list[list]:
    """Velocity x mode x ablation grid; returns plot-ready rows of ``SWEEP_COLUMNS``."""
    rows = []
    for v in velocities:
        for mode in modes:
            for abl in ablation_sets:
                scen = Scenario(scenario.config, mode, tuple(abl), float(v), scenario.duration, scenario.seeds)
                agg = run_scenario(scen, logs=False)["aggregate"]
                for name in SUMMARY_METRICS:
                    a = agg[name]
                    rows.append([float(v), mode, "+".join(abl) or "none", name, a["mean"], a["std"], a["n"]])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return rows


def load_run_config(directory: str | Path) -> tuple[SwarmConfig, str, tuple, int]:
    data = yaml.safe_load((Path(directory) / "config.yaml").read_text())
    scen = scenario_from_dict(data["config"])
    return scen.config, data["mode"], tuple(data["ablations"]), int(data["last_tick"])


def replay(directory: str | Path) -> list[tuple]:
    """Re-run only the estimators from a run's measurement logs.

    Own measurements are fed at their tick, peer messages at the tick after
    they were sent (as recorded in ``deliveries.csv``), so the result matches
    the closed-loop estimates exactly.
    """
    directory = Path(directory)
    cfg, _, ablations, last = load_run_config(directory)
    log = MeasurementLog.read_csv(directory / "measurements")
    n = cfg.n_drones
    estimators = [RelativeEstimator(i, cfg, ablations) for i in range(n)]
    init_tick = int(round(cfg.init_duration / cfg.dt))
    p_est = cfg.period_ticks(cfg.estimator.rate_hz)

    vision = {(d.tick, d.observer, d.target): d for d in log.vision}
    vio = {(s.tick, s.drone): s for s in log.vio}
    by_tick: dict[int, dict] = {}
    for kind, seq in (("vio", log.vio), ("vision", log.vision), ("uwb", log.uwb)):
        for item in seq:
            by_tick.setdefault(item.tick, {"vio": [], "vision": [], "uwb": []})[kind].append(item)
    inbound: dict[int, list] = {}
    for tick_sent, sender, recipient, kind, ref in log.deliveries:
        payload = vision[(tick_sent, sender, ref)] if kind == "vision" else vio[(tick_sent, sender)]
        inbound.setdefault(tick_sent + 1, []).append((recipient, BusMessage(sender, payload, tick_sent)))

    rows = []
    for tick in range(last + 1):
        for recipient, message in inbound.get(tick, ()):
            estimators[recipient].receive(message)
        epoch = tick - 1
        if epoch >= init_tick and epoch % p_est == 0:
            if epoch == init_tick:
                for est in estimators:
                    est.initialize(epoch)
            else:
                for i, est in enumerate(estimators):
                    result, report = est.step(epoch)
                    for j, v in result.estimates.items():
                        rows.append((epoch, i, j, *map(float, v), int(j in result.stale), report.iterations,
                                     report.final_cost))
        batch = by_tick.get(tick)
        if batch:
            for s in batch["vio"]:
                estimators[s.drone].add_vio(s)
            for d in batch["vision"]:
                estimators[d.observer].add_detection(d)
            for r in batch["uwb"]:
                estimators[r.a].add_range(r)
                estimators[r.b].add_range(r)
    return rows
