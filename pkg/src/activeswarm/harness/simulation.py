"""Seeded closed-loop swarm simulation.

One tick is ``config.dt`` seconds. Sensors, estimator, planner and
controller fire on whole multiples of it. Bus messages take one tick, so the
estimate for epoch ``k`` is computed at tick ``k + 1`` from measurements
stamped ``k`` and becomes available to the controller from then on.

The run has two phases. During the static window the drones sit at their
start positions and sweep their cameras across the servo range (both vision
modes share this). At the end of the window every drone initialises its
relative estimates, then the swarm flies the circular formation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..config import SwarmConfig
from ..control import ReferenceState, circular_reference, control_law, discrete_reference, step_dynamics
from ..core import DroneState, WorldState, relative_positions, seeded_rng
from ..estimator import RelativeEstimator
from ..gap import ObservationAssignment, camera_angle, plan
from ..sensors import (
    Bus,
    BusMessage,
    MeasurementLog,
    VioTrack,
    simulate_camera,
    simulate_uwb,
    simulate_vio,
)
from .metrics import formation_angle_errors


class DivergenceError(RuntimeError):
    pass


@dataclass
class RunRecord:
    """Everything a run produced; heavy per-tick logs only when ``record`` is set."""

    config: SwarmConfig
    mode: str
    ablations: tuple
    init_tick: int
    epochs: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # per epoch (N, N, 3) estimate - truth, NaN on the diagonal
    detections: list = field(default_factory=list)  # per epoch (N,) bool
    angle_errors: list = field(default_factory=list)  # per flight epoch (N,) degrees
    position_errors: list = field(default_factory=list)  # per flight epoch (N,) metres
    iterations: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    solve_times: list = field(default_factory=list)
    assignments: list = field(default_factory=list)  # (tick, targets)
    diverged_at: int | None = None
    truth_log: list = field(default_factory=list)
    control_log: list = field(default_factory=list)
    estimate_log: list = field(default_factory=list)
    measurements: MeasurementLog | None = None


def nominal_start(cfg: SwarmConfig) -> np.ndarray:
    f = cfg.formation
    return circular_reference(0.0, f.radius, f.speed, cfg.n_drones, f.ramp_time, f.center).positions


def scan_angle(t: float, half_range: float, slew: float) -> float:
    """Triangle-wave sweep across the servo range at full slew rate."""
    if slew <= 0 or half_range <= 0:
        return 0.0
    period = 4.0 * half_range / slew
    phase = (t % period) / period
    if phase < 0.25:
        return 4.0 * phase * half_range
    if phase < 0.75:
        return (2.0 - 4.0 * phase) * half_range
    return (4.0 * phase - 4.0) * half_range


class Simulation:
    def __init__(
        self,
        config: SwarmConfig,
        mode: str = "active",
        ablations=(),
        record: bool = False,
        initial_positions=None,
    ):
        self.cfg = config.validate()
        self.mode = mode
        self.ablations = tuple(sorted(ablations))
        self.record = record
        cfg = self.cfg
        n = cfg.n_drones
        self.n = n
        self.nominal = nominal_start(cfg)
        if initial_positions is None:
            start = self.nominal + np.asarray(cfg.formation.start_offset, dtype=float)
            if cfg.formation.placement_sigma > 0:
                jitter = seeded_rng(cfg.seed, "placement").standard_normal((n, 3))
                jitter[:, 2] = 0.0
                start = start + cfg.formation.placement_sigma * jitter
        else:
            start = np.array(initial_positions, dtype=float)
        self.world = WorldState.at_rest(start, cfg.dt)
        self.init_tick = int(round(cfg.init_duration / cfg.dt))
        self.total_ticks = self.init_tick + int(round(cfg.flight_duration / cfg.dt)) + 1
        self.p_vio = cfg.period_ticks(cfg.vio.rate_hz)
        self.p_cam = cfg.period_ticks(cfg.camera.rate_hz)
        self.p_uwb = cfg.period_ticks(cfg.uwb.rate_hz)
        self.p_est = cfg.period_ticks(cfg.estimator.rate_hz)
        self.p_ctl = cfg.period_ticks(cfg.control.rate_hz)
        self.p_plan = int(round(cfg.planner.period / cfg.dt))
        self.truth_estimates = cfg.estimator.source == "truth"

        self.rng_cam = [seeded_rng(cfg.seed, f"vision/{i}") for i in range(n)]
        self.rng_vio = [seeded_rng(cfg.seed, f"vio/{i}") for i in range(n)]
        self.pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
        self.rng_uwb = {p: seeded_rng(cfg.seed, f"uwb/{p[0]}-{p[1]}") for p in self.pairs}
        self.bus = Bus(n, cfg.bus.p_drop, seeded_rng(cfg.seed, "bus"), record=record)
        self.vio = [VioTrack.start(self.world, i) for i in range(n)]
        self.estimators = [RelativeEstimator(i, cfg, self.ablations) for i in range(n)]
        self.assignment: ObservationAssignment | None = None
        self.commands = np.zeros(n)
        self.u = np.zeros((n, 3))
        self.epoch_truth: dict = {}
        self.epoch_detect: dict = {}
        self.rec = RunRecord(cfg, mode, self.ablations, self.init_tick)
        if record:
            self.rec.measurements = MeasurementLog()

    # --- helpers --------------------------------------------------------

    def flight_time(self, tick: int) -> float:
        return max(tick - self.init_tick, 0) * self.cfg.dt

    def reference(self, tick: int) -> ReferenceState:
        f = self.cfg.formation
        return circular_reference(self.flight_time(tick), f.radius, f.speed, self.n, f.ramp_time, f.center)

    def control_reference(self, tick: int) -> ReferenceState:
        f = self.cfg.formation
        if self.cfg.control.feedforward == "analytic":
            return self.reference(tick)
        t = (tick - self.init_tick) * self.cfg.dt
        return discrete_reference(t, self.cfg.dt, f.radius, f.speed, self.n, f.ramp_time, f.center)

    def own_state(self, i: int):
        if self.truth_estimates:
            return self.world.positions[i], self.world.velocities[i]
        s = self.vio[i].sample
        return self.nominal[i] + s.displacement, s.velocity

    def relative_view(self, i: int) -> tuple[dict, frozenset, int | None]:
        """Relative estimates the controller of drone ``i`` can use now, with their epoch."""
        if self.truth_estimates:
            rel = self.world.positions - self.world.positions[i]
            return {j: rel[j] for j in range(self.n) if j != i}, frozenset(), self.world.tick
        est = self.estimators[i].estimate
        if est is None or est.tick <= self.init_tick:
            return {}, frozenset(), None
        return est.estimates, est.stale, est.tick

    # --- phases of one tick ---------------------------------------------

    def _deliver(self, tick: int) -> None:
        inbox = self.bus.deliver(tick)
        for r, messages in inbox.items():
            est = self.estimators[r]
            for m in messages:
                est.receive(m)

    def _estimate(self, tick: int) -> None:
        epoch = tick - 1
        if epoch < self.init_tick or epoch % self.p_est or self.truth_estimates:
            return
        if epoch == self.init_tick:
            for est in self.estimators:
                est.initialize(epoch)
            return
        truth = self.epoch_truth.pop(epoch)
        err = np.full((self.n, self.n, 3), np.nan)
        for i, est in enumerate(self.estimators):
            result, report = est.step(epoch)
            self.rec.iterations.append(report.iterations)
            self.rec.converged.append(report.converged)
            self.rec.solve_times.append(report.wall_time)
            for j, v in result.estimates.items():
                err[i, j] = v - truth[i, j]
                if self.record:
                    self.rec.estimate_log.append(
                        (epoch, i, j, *map(float, v), int(j in result.stale), report.iterations, report.final_cost)
                    )
        self.rec.epochs.append(epoch)
        self.rec.errors.append(err)
        self.rec.detections.append(self.epoch_detect.pop(epoch))

    def _sense(self, tick: int) -> None:
        cfg, world, n = self.cfg, self.world, self.n
        log = self.rec.measurements
        if tick % self.p_vio == 0:
            for i in range(n):
                self.vio[i] = simulate_vio(world, i, self.vio[i], cfg.vio, self.rng_vio[i])
                sample = self.vio[i].sample
                self.estimators[i].add_vio(sample)
                self.bus.broadcast(BusMessage(i, sample, tick))
                if log is not None:
                    log.vio.append(sample)
        if tick % self.p_est == 0 and tick > self.init_tick:
            self.epoch_truth[tick] = relative_positions(world.positions)
            self.epoch_detect[tick] = np.zeros(n, dtype=bool)
        if tick % self.p_cam == 0:
            scanning = tick <= self.init_tick
            for i in range(n):
                targets = [j for j in range(n) if j != i] if scanning else [self.assignment.targets[i]]
                for j in targets:
                    det = simulate_camera(world, i, j, cfg.camera, self.rng_cam[i])
                    if det is None:
                        continue
                    self.estimators[i].add_detection(det)
                    self.bus.broadcast(BusMessage(i, det, tick))
                    if log is not None:
                        log.vision.append(det)
                    if tick in self.epoch_detect:
                        self.epoch_detect[tick][i] = True
        if tick % self.p_uwb == 0:
            for p in self.pairs:
                r = simulate_uwb(world, p, cfg.uwb, self.rng_uwb[p])
                self.estimators[p[0]].add_range(r)
                self.estimators[p[1]].add_range(r)
                if log is not None:
                    log.uwb.append(r)

    def _plan(self, tick: int) -> None:
        if tick < self.init_tick or (tick - self.init_tick) % self.p_plan:
            return
        cfg = self.cfg
        if cfg.planner.mode == "offline":
            ref = self.reference(tick)
            x, v = ref.positions, ref.velocities
        else:
            x, v = self.world.positions, self.world.velocities
        self.assignment = plan(x, v, cfg.planner.gamma1, cfg.planner.gamma2)
        self.rec.assignments.append((tick, self.assignment.targets))

    def _point_cameras(self, tick: int) -> np.ndarray:
        cam = self.cfg.camera
        if tick < self.init_tick:
            cmd = np.full(self.n, scan_angle(tick * self.cfg.dt, cam.servo_half_range, cam.slew_rate))
        elif self.mode == "fixed":
            cmd = np.zeros(self.n)
        else:
            cmd = np.zeros(self.n)
            for i in range(self.n):
                j = self.assignment.targets[i]
                own, _ = self.own_state(i)
                rel, _, _ = self.relative_view(i)
                offset = rel.get(j)
                if offset is None:
                    offset = self.nominal[j] - self.nominal[i]
                observer = DroneState(i, own, yaw=float(self.world.yaw[i]))
                try:
                    cmd[i] = camera_angle(observer, own + offset, cam.servo_half_range).angle
                except ValueError:
                    cmd[i] = self.world.camera_angles[i]
        max_step = cam.slew_rate * self.cfg.dt
        current = self.world.camera_angles
        return current + np.clip(cmd - current, -max_step, max_step)

    def _control(self, tick: int) -> np.ndarray:
        if tick < self.init_tick:
            return np.zeros((self.n, 3))
        if (tick - self.init_tick) % self.p_ctl:
            return self.u
        cfg = self.cfg
        ctl = cfg.control
        ref = self.control_reference(tick)
        u = np.zeros((self.n, 3))
        for i in range(self.n):
            pos, vel = self.own_state(i)
            rel, stale, epoch = self.relative_view(i)
            if ctl.neighbors == "graph":
                nbrs = self.assignment.neighbors(i)
            else:
                nbrs = {j for j in range(self.n) if j != i}
            est_ref = self.reference(epoch) if epoch is not None else ref
            out = control_law(i, ref, pos, vel, rel, nbrs, ctl.kp, ctl.kd, ctl.c_laplacian, ctl.u_max,
                              stale, est_ref)
            u[i] = out.u
        self.u = u
        return u

    # --- main loop ------------------------------------------------------

    def run(self) -> RunRecord:
        rec = self.rec
        ref_radius = self.cfg.divergence_radius
        for tick in range(self.total_ticks):
            self._deliver(tick)
            self._estimate(tick)
            self._plan(tick)
            self._sense(tick)
            if tick > self.init_tick and tick % self.p_est == 0:
                self._score_formation(tick)
            angles = self._point_cameras(tick)
            u = self._control(tick)
            if self.record:
                w = self.world
                for i in range(self.n):
                    rec.truth_log.append((tick, i, *map(float, w.positions[i]), *map(float, w.velocities[i]),
                                          float(w.camera_angles[i])))
                    rec.control_log.append((tick, i, *map(float, u[i])))
            self.world = step_dynamics(self.world.with_camera_angles(angles), u)
            if np.any(np.linalg.norm(self.world.positions, axis=1) > ref_radius):
                rec.diverged_at = self.world.tick
                break
        if rec.measurements is not None:
            rec.measurements.deliveries = list(self.bus.deliveries)
        return rec

    def _score_formation(self, tick: int) -> None:
        ref = self.reference(tick)
        x = self.world.positions
        self.rec.position_errors.append(np.linalg.norm(x - ref.positions, axis=1))
        if self.n >= 3:
            self.rec.angle_errors.append(np.abs(formation_angle_errors(x, 0)))


def run_once(config: SwarmConfig, mode: str = "active", ablations=(), record: bool = False, **kwargs) -> RunRecord:
    return Simulation(config, mode, ablations, record, **kwargs).run()
