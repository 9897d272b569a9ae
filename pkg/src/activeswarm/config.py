"""Swarm and scenario configuration.

Every tunable lives here with its default. Values marked ``hardware`` come from
the hardware description of the original experiments; everything else is an
invented simulation default and can be overridden from a YAML scenario file
(see ``configs/default.yaml`` for the annotated schema).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

MODES = ("active", "fixed")
ABLATIONS = ("no_uwb", "no_vision")
BLOCK_KINDS = ("vision_ij", "vision_ji", "uwb", "vio", "motion_prior")


class ConfigError(ValueError):
    """Raised when a configuration fails validation."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


@dataclass
class CameraParams:
    fov_deg: float = 150.0  # hardware
    max_range: float = 8.0
    sigma0: float = 0.02
    sigma1: float = 0.01
    detect_prob: float = 0.9
    rate_hz: float = 25.0
    servo_half_range_deg: float = 150.0  # hardware: 300 deg total travel
    slew_deg_s: float = 300.0

    @property
    def fov(self) -> float:
        return math.radians(self.fov_deg)

    @property
    def servo_half_range(self) -> float:
        return math.radians(self.servo_half_range_deg)

    @property
    def slew_rate(self) -> float:
        return math.radians(self.slew_deg_s)


@dataclass
class UwbParams:
    sigma: float = 0.1
    p_outlier: float = 0.02
    outlier_min: float = 0.5
    outlier_max: float = 2.0
    rate_hz: float = 25.0  # hardware
    sg_window: int = 51
    sg_order: int = 1


@dataclass
class VioParams:
    sigma_drift: float = 0.02
    sigma_white: float = 0.005
    sigma_velocity: float = 0.02
    rate_hz: float = 50.0


@dataclass
class BusParams:
    p_drop: float = 0.1


@dataclass
class PlannerParams:
    gamma1: float = 1.0
    gamma2: float = 1.0
    mode: str = "offline"  # offline: plan on the reference formation; online: on current truth
    period: float = 0.5


@dataclass
class ControlParams:
    kp: float = 4.0
    kd: float = 3.0
    c_laplacian: float = 1.0
    u_max: float = 6.0
    rate_hz: float = 50.0
    neighbors: str = "graph"  # graph | all
    feedforward: str = "discrete"  # discrete: finite differences matched to the integrator | analytic


@dataclass
class EstimatorParams:
    rate_hz: float = 25.0
    weights: dict = field(default_factory=lambda: {k: 1.0 for k in BLOCK_KINDS})
    norm_mode: str = "vector"  # vector | scalar
    stale_limit: int = 25
    max_iterations: int = 50
    initial_damping: float = 1e-3
    source: str = "fused"  # fused | truth (controller fed ground truth, for control-only studies)


@dataclass
class FormationParams:
    radius: float = 1.0  # hardware
    speed: float = 1.5
    ramp_time: float = 3.0
    center: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    placement_sigma: float = 0.0
    start_offset: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class SwarmConfig:
    n_drones: int = 4
    dt: float = 0.02
    seed: int = 0
    init_duration: float = 5.0
    flight_duration: float = 20.0
    divergence_radius: float = 50.0
    camera: CameraParams = field(default_factory=CameraParams)
    uwb: UwbParams = field(default_factory=UwbParams)
    vio: VioParams = field(default_factory=VioParams)
    bus: BusParams = field(default_factory=BusParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    control: ControlParams = field(default_factory=ControlParams)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    formation: FormationParams = field(default_factory=FormationParams)

    @property
    def gamma1(self) -> float:
        return self.planner.gamma1

    @property
    def gamma2(self) -> float:
        return self.planner.gamma2

    def period_ticks(self, rate_hz: float) -> int:
        """Ticks between firings of a component running at ``rate_hz``."""
        return int(round(1.0 / (rate_hz * self.dt)))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "SwarmConfig":
        problems = _problems(self)
        if problems:
            raise ConfigError(problems)
        return self

    def noiseless(self) -> "SwarmConfig":
        """Copy with every noise, dropout and loss source switched off."""
        cfg = dataclasses.replace(
            self,
            camera=dataclasses.replace(self.camera, sigma0=0.0, sigma1=0.0, detect_prob=1.0),
            uwb=dataclasses.replace(self.uwb, sigma=0.0, p_outlier=0.0),
            vio=dataclasses.replace(self.vio, sigma_drift=0.0, sigma_white=0.0, sigma_velocity=0.0),
            bus=dataclasses.replace(self.bus, p_drop=0.0),
            formation=dataclasses.replace(self.formation, placement_sigma=0.0),
        )
        return cfg


@dataclass
class Scenario:
    config: SwarmConfig = field(default_factory=SwarmConfig)
    mode: str = "active"
    ablations: tuple = ()
    velocity: float = 1.5
    duration: float = 20.0
    seeds: tuple = (0,)

    def for_seed(self, seed: int) -> SwarmConfig:
        cfg = dataclasses.replace(
            self.config,
            seed=int(seed),
            flight_duration=float(self.duration),
            formation=dataclasses.replace(self.config.formation, speed=float(self.velocity)),
        )
        return cfg

    def validate(self) -> "Scenario":
        problems = _problems(self.config)
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        for a in self.ablations:
            if a not in ABLATIONS:
                problems.append(f"unknown ablation {a!r}; expected a subset of {ABLATIONS}")
        if self.velocity < 0:
            problems.append("velocity must be >= 0")
        if not self.duration > 0:
            problems.append("duration must be > 0")
        if not self.seeds:
            problems.append("at least one seed is required")
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "ablations": sorted(self.ablations),
            "velocity": self.velocity,
            "duration": self.duration,
            "seeds": list(self.seeds),
            "config": self.config.to_dict(),
        }


def _problems(cfg: SwarmConfig) -> list[str]:
    p = []
    if cfg.n_drones < 2:
        p.append("n_drones must be >= 2")
    if not cfg.dt > 0:
        p.append("dt must be > 0")
        return p
    if cfg.planner.gamma1 <= 0:
        p.append("planner.gamma1 must be > 0")
    if cfg.planner.gamma2 < 0:
        p.append("planner.gamma2 must be >= 0")
    if cfg.planner.mode not in ("offline", "online"):
        p.append("planner.mode must be 'offline' or 'online'")
    if not 0 < cfg.camera.fov < 2 * math.pi:
        p.append("camera.fov_deg must lie in (0, 360)")
    for name, value in [
        ("camera.sigma0", cfg.camera.sigma0),
        ("camera.sigma1", cfg.camera.sigma1),
        ("camera.max_range", cfg.camera.max_range),
        ("camera.slew_deg_s", cfg.camera.slew_deg_s),
        ("uwb.sigma", cfg.uwb.sigma),
        ("vio.sigma_drift", cfg.vio.sigma_drift),
        ("vio.sigma_white", cfg.vio.sigma_white),
        ("vio.sigma_velocity", cfg.vio.sigma_velocity),
        ("formation.placement_sigma", cfg.formation.placement_sigma),
        ("formation.speed", cfg.formation.speed),
        ("formation.ramp_time", cfg.formation.ramp_time),
        ("init_duration", cfg.init_duration),
    ]:
        if value < 0:
            p.append(f"{name} must be >= 0")
    for name, value in [
        ("camera.detect_prob", cfg.camera.detect_prob),
        ("uwb.p_outlier", cfg.uwb.p_outlier),
        ("bus.p_drop", cfg.bus.p_drop),
    ]:
        if not 0.0 <= value <= 1.0:
            p.append(f"{name} must be a probability")
    if not 0 <= cfg.uwb.outlier_min <= cfg.uwb.outlier_max:
        p.append("uwb outlier band must satisfy 0 <= outlier_min <= outlier_max")
    if cfg.uwb.sg_window % 2 == 0 or cfg.uwb.sg_window < 1:
        p.append("uwb.sg_window must be a positive odd integer")
    if not 0 <= cfg.uwb.sg_order < cfg.uwb.sg_window:
        p.append("uwb.sg_order must satisfy 0 <= order < window")
    for name in ("kp", "kd", "u_max", "rate_hz"):
        if getattr(cfg.control, name) <= 0:
            p.append(f"control.{name} must be > 0")
    if cfg.control.c_laplacian < 0:
        p.append("control.c_laplacian must be >= 0")
    if cfg.control.neighbors not in ("graph", "all"):
        p.append("control.neighbors must be 'graph' or 'all'")
    if cfg.control.feedforward not in ("discrete", "analytic"):
        p.append("control.feedforward must be 'discrete' or 'analytic'")
    if cfg.formation.radius <= 0:
        p.append("formation.radius must be > 0")
    if len(cfg.formation.center) != 3 or len(cfg.formation.start_offset) != 3:
        p.append("formation.center and formation.start_offset must be 3-vectors")
    est = cfg.estimator
    if est.norm_mode not in ("vector", "scalar"):
        p.append("estimator.norm_mode must be 'vector' or 'scalar'")
    if est.source not in ("fused", "truth"):
        p.append("estimator.source must be 'fused' or 'truth'")
    unknown = set(est.weights) - set(BLOCK_KINDS)
    if unknown:
        p.append(f"estimator.weights has unknown kinds {sorted(unknown)}")
    if any(w < 0 for w in est.weights.values()):
        p.append("estimator.weights must be >= 0")
    if est.max_iterations < 1 or est.stale_limit < 1:
        p.append("estimator.max_iterations and stale_limit must be >= 1")
    # Every periodic component fires on whole ticks.
    rates = {
        "camera.rate_hz": cfg.camera.rate_hz,
        "uwb.rate_hz": cfg.uwb.rate_hz,
        "vio.rate_hz": cfg.vio.rate_hz,
        "control.rate_hz": cfg.control.rate_hz,
        "estimator.rate_hz": est.rate_hz,
    }
    for name, hz in rates.items():
        if hz <= 0:
            p.append(f"{name} must be > 0")
            continue
        ticks = 1.0 / (hz * cfg.dt)
        if ticks < 1 - 1e-9 or abs(ticks - round(ticks)) > 1e-6:
            p.append(f"{name}={hz} is not a whole number of {cfg.dt}s ticks")
    if not p:
        est_ticks = cfg.period_ticks(est.rate_hz)
        if est_ticks % cfg.period_ticks(cfg.vio.rate_hz):
            p.append("estimator period must be a multiple of the VIO period")
        plan_ticks = cfg.planner.period / cfg.dt
        if cfg.planner.period <= 0 or abs(plan_ticks - round(plan_ticks)) > 1e-6:
            p.append("planner.period must be a positive whole number of ticks")
        init_ticks = cfg.init_duration / cfg.dt
        if abs(init_ticks - round(init_ticks)) > 1e-6 or round(init_ticks) % est_ticks:
            p.append("init_duration must be a whole number of estimator periods")
    return p


def _merge(obj, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError([f"section {path or '<root>'} must be a mapping"])
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError([f"unknown key {path}{key}"])
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, f"{path}{key}.")
        elif key == "weights":
            merged = dict(current)
            merged.update(value)
            setattr(obj, key, merged)
        else:
            setattr(obj, key, value)


def scenario_from_dict(data: dict | None) -> Scenario:
    data = dict(data or {})
    scen = data.pop("scenario", {}) or {}
    cfg = SwarmConfig()
    _merge(cfg, data)
    known = {"mode", "ablations", "velocity", "duration", "seeds"}
    unknown = set(scen) - known
    if unknown:
        raise ConfigError([f"unknown key scenario.{k}" for k in sorted(unknown)])
    return Scenario(
        config=cfg,
        mode=scen.get("mode", "active"),
        ablations=tuple(scen.get("ablations", ()) or ()),
        velocity=float(scen.get("velocity", cfg.formation.speed)),
        duration=float(scen.get("duration", cfg.flight_duration)),
        seeds=tuple(int(s) for s in scen.get("seeds", (cfg.seed,))),
    )


def load_scenario(path: str | Path) -> Scenario:
    with open(path) as fh:
        data: Any = yaml.safe_load(fh)
    return scenario_from_dict(data)
