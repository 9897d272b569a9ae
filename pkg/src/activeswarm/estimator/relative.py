"""Distributed relative localisation for one drone.

Each drone estimates ``x_ij``, the position of every other drone ``j`` in its
own compass-aligned frame. A static window first pins the planar initial
offsets; afterwards every frame fuses own and received detections, filtered
UWB ranges, VIO displacements and a constant-velocity prior, warm-started
from the previous frame.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..config import BLOCK_KINDS, SwarmConfig
from . import residuals as rb
from .residuals import ResidualBlock
from .sgolay import CausalSavitzkyGolay, sg_filter
from .solver import SolverReport, nlls_solve

ABLATED_KINDS = {"no_uwb": {"uwb"}, "no_vision": {"vision_ij", "vision_ji"}}
MEASUREMENT_KINDS = {"vision_ij", "vision_ji", "uwb", "vio"}


class UnobservablePairError(ValueError):
    """Some pairs have no vision detection in the initialisation window."""

    def __init__(self, owner: int, pairs: list[int], partial: "InitialEstimate"):
        self.owner = owner
        self.pairs = pairs
        self.partial = partial
        super().__init__(
            f"drone {owner}: pairs {pairs} have no vision detection; range-only data leaves a circle of solutions"
        )


@dataclass(frozen=True)
class RelativeEstimate:
    owner: int
    estimates: dict  # target -> (3,) array in owner's local frame
    tick: int
    stale: frozenset = frozenset()

    def __post_init__(self):
        if self.owner in self.estimates:
            raise ValueError("an estimate never includes the owner itself")


@dataclass(frozen=True)
class InitialEstimate:
    owner: int
    estimates: dict  # target -> (3,) array, z fixed to 0
    tick: int = 0
    reports: dict = field(default_factory=dict)


@dataclass
class PairWindow:
    """Measurements of one pair gathered over the static initialisation window."""

    forward: list = field(default_factory=list)  # p_ij: owner's detections of j
    reverse: list = field(default_factory=list)  # p_ji: j's detections of owner
    ranges: list = field(default_factory=list)


@dataclass
class PairFrame:
    """What the owner knows about one pair at a single frame; ``None`` means absent."""

    p_ij: np.ndarray | None = None
    p_ji: np.ndarray | None = None
    ranges: tuple = ()  # raw UWB history ending with this frame's reading
    distance: float | None = None  # filtered range; filled from ``ranges`` if absent
    own_displacement: np.ndarray | None = None
    other_displacement: np.ndarray | None = None
    own_velocity: np.ndarray | None = None
    other_velocity: np.ndarray | None = None
    relative_velocity: np.ndarray | None = None  # last known, used only once a pair is stale


@dataclass
class FrameData:
    owner: int
    tick: int
    pairs: dict  # target -> PairFrame


def kind_weights(weights: dict | None = None, ablations=()) -> dict:
    w = {k: 1.0 for k in BLOCK_KINDS}
    if weights:
        w.update(weights)
    for a in ablations:
        for k in ABLATED_KINDS[a]:
            w[k] = 0.0
    return w


def initialize(
    windows: dict,
    owner: int = 0,
    weights: dict | None = None,
    tick: int = 0,
    norm_mode: str = "vector",
) -> InitialEstimate:
    """Planar initial offsets from a static window of detections and ranges."""
    w = kind_weights(weights)
    estimates, reports, unobservable = {}, {}, []
    for j in sorted(windows):
        win = windows[j]
        vision = [np.asarray(p, float)[:2] for p in win.forward] + [-np.asarray(p, float)[:2] for p in win.reverse]
        if not vision:
            unobservable.append(j)
            continue
        blocks = [rb.vision_ij(j, np.asarray(p, float)[:2], w["vision_ij"]) for p in win.forward]
        blocks += [rb.vision_ji(j, np.asarray(p, float)[:2], w["vision_ji"]) for p in win.reverse]
        if w["uwb"] > 0:
            blocks += [rb.uwb(j, d, w["uwb"]) for d in win.ranges]
        guess = np.mean(vision, axis=0)
        sol, report = nlls_solve(blocks, {j: guess}, norm_mode=norm_mode)
        estimates[j] = np.array([sol[j][0], sol[j][1], 0.0])
        reports[j] = report
    result = InitialEstimate(owner, estimates, tick, reports)
    if unobservable:
        raise UnobservablePairError(owner, unobservable, result)
    return result


def build_residuals(
    frame: FrameData,
    previous: RelativeEstimate,
    dt: float,
    initial: InitialEstimate | None = None,
    weights: dict | None = None,
    stale_targets=(),
) -> list[ResidualBlock]:
    """Residual blocks for every term whose data exists at this frame."""
    w = weights if weights is not None else kind_weights()
    blocks = []
    for j in sorted(frame.pairs):
        pf = frame.pairs[j]
        if pf.p_ij is not None and w["vision_ij"] > 0:
            blocks.append(rb.vision_ij(j, pf.p_ij, w["vision_ij"]))
        if pf.p_ji is not None and w["vision_ji"] > 0:
            blocks.append(rb.vision_ji(j, pf.p_ji, w["vision_ji"]))
        distance = pf.distance
        if distance is None and pf.ranges:
            distance = _filtered_newest(pf.ranges)
        if distance is not None and w["uwb"] > 0:
            blocks.append(rb.uwb(j, distance, w["uwb"]))
        if (
            initial is not None
            and pf.own_displacement is not None
            and pf.other_displacement is not None
            and w["vio"] > 0
        ):
            blocks.append(rb.vio(j, initial.estimates[j], pf.own_displacement, pf.other_displacement, w["vio"]))
        if w["motion_prior"] > 0 and j in previous.estimates:
            if pf.own_velocity is not None and pf.other_velocity is not None:
                blocks.append(rb.motion_prior(j, previous.estimates[j], pf.own_velocity, pf.other_velocity, dt,
                                              w["motion_prior"]))
            elif j in stale_targets and pf.relative_velocity is not None:
                blocks.append(rb.motion_prior(j, previous.estimates[j], np.zeros(3), pf.relative_velocity, dt,
                                              w["motion_prior"]))
    return blocks


def _filtered_newest(ranges, window: int = 9, order: int = 2) -> float:
    r = np.asarray(ranges, dtype=float)
    if r.size < window:
        return float(r[-1])
    return float(sg_filter(r[-window:], window, order, causal=True)[-1])


def estimate_step(
    owner: int,
    frame: FrameData,
    previous: RelativeEstimate,
    dt: float,
    initial: InitialEstimate | None = None,
    weights: dict | None = None,
    norm_mode: str = "vector",
    max_iterations: int = 50,
    damping: float = 1e-3,
    stale_targets=(),
) -> tuple[RelativeEstimate, SolverReport, list[ResidualBlock]]:
    """One fusion frame: build blocks and solve all pairs jointly, warm-started from ``previous``."""
    blocks = build_residuals(frame, previous, dt, initial, weights, stale_targets)
    guess = {j: previous.estimates[j] for j in previous.estimates}
    solution, report = nlls_solve(blocks, guess, norm_mode, max_iterations, damping)
    estimate = RelativeEstimate(owner, solution, frame.tick, frozenset(stale_targets))
    return estimate, report, blocks


class RelativeEstimator:
    """Stateful per-drone estimator fed by own sensors and bus deliveries."""

    def __init__(self, owner: int, config: SwarmConfig, ablations=()):
        self.owner = owner
        self.n = config.n_drones
        self.others = [j for j in range(self.n) if j != owner]
        self.cfg = config
        self.frame_ticks = config.period_ticks(config.estimator.rate_hz)
        self.dt = self.frame_ticks * config.dt
        self.weights = kind_weights(config.estimator.weights, ablations)
        self.ablations = tuple(ablations)
        self.window = {j: PairWindow() for j in self.others}
        self.collecting = True
        self.initial: InitialEstimate | None = None
        self.estimate: RelativeEstimate | None = None
        self.last_frame_tick: int | None = None
        self._sg = {j: CausalSavitzkyGolay(config.uwb.sg_window, config.uwb.sg_order) for j in self.others}
        self._range = {}  # j -> (tick, filtered)
        self._own_det = {}  # j -> (tick, p_ij)
        self._rev_det = {}  # j -> (tick, p_ji)
        self._own_vio = deque(maxlen=64)
        self._other_vio = {j: deque(maxlen=64) for j in self.others}
        self._silent = {j: 0 for j in self.others}
        self._rel_vel = {}

    # --- inputs ---------------------------------------------------------

    def add_detection(self, det) -> None:
        if det.observer == self.owner:
            self._own_det[det.target] = (det.tick, det.relative_position)
            if self.collecting:
                self.window[det.target].forward.append(det.relative_position)
        elif det.target == self.owner:
            self._rev_det[det.observer] = (det.tick, det.relative_position)
            if self.collecting:
                self.window[det.observer].reverse.append(det.relative_position)

    def add_range(self, r) -> None:
        if self.owner not in (r.a, r.b):
            return
        j = r.b if r.a == self.owner else r.a
        self._range[j] = (r.tick, self._sg[j].push(r.distance))
        if self.collecting:
            self.window[j].ranges.append(r.distance)

    def add_vio(self, sample) -> None:
        if sample.drone == self.owner:
            self._own_vio.append(sample)
        else:
            self._other_vio[sample.drone].append(sample)

    def receive(self, message) -> None:
        payload = message.payload
        if hasattr(payload, "relative_position"):
            self.add_detection(payload)
        elif hasattr(payload, "displacement"):
            self.add_vio(payload)

    # --- processing -----------------------------------------------------

    def initialize(self, tick: int) -> InitialEstimate:
        self.initial = initialize(
            self.window, self.owner, self.cfg.estimator.weights, tick, self.cfg.estimator.norm_mode
        )
        self.collecting = False
        self.estimate = RelativeEstimate(self.owner, dict(self.initial.estimates), tick)
        self.last_frame_tick = tick
        return self.initial

    def frame(self, tick: int) -> FrameData:
        lo = self.last_frame_tick if self.last_frame_tick is not None else -1
        own_now = _at(self._own_vio, tick)
        own_vel = _mean_velocity(self._own_vio, lo, tick)
        pairs = {}
        for j in self.others:
            pf = PairFrame()
            det = self._own_det.get(j)
            if det is not None and lo < det[0] <= tick:
                pf.p_ij = det[1]
            det = self._rev_det.get(j)
            if det is not None and lo < det[0] <= tick:
                pf.p_ji = det[1]
            rng = self._range.get(j)
            if rng is not None and lo < rng[0] <= tick:
                pf.distance = rng[1]
            other_now = _at(self._other_vio[j], tick)
            if own_now is not None and other_now is not None:
                pf.own_displacement = own_now.displacement
                pf.other_displacement = other_now.displacement
            other_vel = _mean_velocity(self._other_vio[j], lo, tick)
            if own_vel is not None and other_vel is not None:
                pf.own_velocity, pf.other_velocity = own_vel, other_vel
                self._rel_vel[j] = other_vel - own_vel
            pf.relative_velocity = self._rel_vel.get(j)
            pairs[j] = pf
        return FrameData(self.owner, tick, pairs)

    def step(self, tick: int) -> tuple[RelativeEstimate, SolverReport]:
        if self.initial is None:
            raise RuntimeError("estimator stepped before initialisation")
        fd = self.frame(tick)
        stale = {j for j in self.others if self._silent[j] >= self.cfg.estimator.stale_limit}
        est, report, blocks = estimate_step(
            self.owner,
            fd,
            self.estimate,
            (tick - self.last_frame_tick) * self.cfg.dt,
            self.initial,
            self.weights,
            self.cfg.estimator.norm_mode,
            self.cfg.estimator.max_iterations,
            self.cfg.estimator.initial_damping,
            stale,
        )
        measured = {b.target for b in blocks if b.kind in MEASUREMENT_KINDS}
        for j in self.others:
            self._silent[j] = 0 if j in measured else self._silent[j] + 1
        stale = frozenset(j for j in self.others if self._silent[j] >= self.cfg.estimator.stale_limit)
        self.estimate = RelativeEstimate(self.owner, est.estimates, tick, stale)
        self.last_frame_tick = tick
        return self.estimate, report


def _at(samples, tick: int):
    for s in reversed(samples):
        if s.tick == tick:
            return s
        if s.tick < tick:
            return None
    return None


def _mean_velocity(samples, lo: int, hi: int):
    vs = [s.velocity for s in samples if lo < s.tick <= hi]
    if not vs:
        return None
    return np.mean(vs, axis=0)
