"""Synthetic vision, UWB and VIO measurements plus the lossy broadcast bus.

Every sampling function draws a fixed number of variates per call whatever
the outcome, so two runs that differ only in camera pointing still consume
identical noise sequences from each labelled stream.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .config import CameraParams, UwbParams, VioParams
from .core import WorldState, global_to_local, wrap_angle

CSV_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class VisionDetection:
    observer: int
    target: int
    relative_position: np.ndarray  # observer's local frame
    tick: int


@dataclass(frozen=True)
class UwbRange:
    a: int
    b: int
    distance: float
    tick: int


@dataclass(frozen=True)
class VioSample:
    drone: int
    displacement: np.ndarray  # since initialisation, local frame
    velocity: np.ndarray
    tick: int


@dataclass(frozen=True)
class BusMessage:
    sender: int
    payload: Any
    tick: int


def camera_bearing(world: WorldState, observer: int, target: int) -> float:
    """Horizontal bearing of ``target`` relative to the observer's optical axis."""
    d = world.positions[target] - world.positions[observer]
    heading = world.yaw[observer] + world.camera_angles[observer]
    return wrap_angle(math.atan2(d[1], d[0]) - heading)


def in_view(world: WorldState, observer: int, target: int, params: CameraParams) -> bool:
    d = world.positions[target] - world.positions[observer]
    if float(np.linalg.norm(d)) > params.max_range:
        return False
    if d[0] == 0.0 and d[1] == 0.0:
        return False
    return abs(camera_bearing(world, observer, target)) <= params.fov / 2


def simulate_camera(
    world: WorldState,
    observer: int,
    target: int,
    params: CameraParams,
    rng: np.random.Generator,
) -> VisionDetection | None:
    """Detection of ``target`` by ``observer``'s camera, if it sees it this tick."""
    u = rng.random()
    noise = rng.standard_normal(3)
    if not in_view(world, observer, target, params) or u >= params.detect_prob:
        return None
    rel = global_to_local(world.positions[target], world.positions[observer], world.yaw[observer])
    sigma = params.sigma0 + params.sigma1 * float(np.linalg.norm(rel))
    return VisionDetection(observer, target, rel + sigma * noise, world.tick)


def simulate_uwb(
    world: WorldState,
    pair: tuple[int, int],
    params: UwbParams,
    rng: np.random.Generator,
) -> UwbRange:
    a, b = sorted(pair)
    gauss = rng.standard_normal()
    u_out, u_mag, u_sign = rng.random(3)
    dist = float(np.linalg.norm(world.positions[b] - world.positions[a])) + params.sigma * gauss
    if u_out < params.p_outlier:
        mag = params.outlier_min + (params.outlier_max - params.outlier_min) * u_mag
        dist += mag if u_sign < 0.5 else -mag
    return UwbRange(a, b, max(float(dist), 0.0), world.tick)


@dataclass(frozen=True)
class VioTrack:
    """Hidden state of one drone's odometry: origin, accumulated drift, last pose."""

    drone: int
    origin: np.ndarray
    drift: np.ndarray
    last_position: np.ndarray
    sample: VioSample

    @classmethod
    def start(cls, world: WorldState, drone: int) -> "VioTrack":
        p = world.positions[drone].copy()
        zero = np.zeros(3)
        return cls(drone, p, zero, p, VioSample(drone, zero, zero, world.tick))


def simulate_vio(
    world: WorldState,
    drone: int,
    previous: VioTrack,
    params: VioParams,
    rng: np.random.Generator,
) -> VioTrack:
    """Advance odometry to ``world.tick``.

    Velocity is the mean true velocity since the previous sample, so
    integrating reported velocities reproduces the true path.
    """
    pos = world.positions[drone]
    step = pos - previous.last_position
    elapsed = (world.tick - previous.sample.tick) * world.dt
    drift_n, white_n, vel_n = rng.standard_normal((3, 3))
    drift = previous.drift + params.sigma_drift * float(np.linalg.norm(step)) * drift_n
    displacement = (pos - previous.origin) + drift + params.sigma_white * white_n
    mean_vel = step / elapsed if elapsed > 0 else np.zeros(3)
    velocity = mean_vel + params.sigma_velocity * vel_n
    sample = VioSample(drone, displacement, velocity, world.tick)
    return VioTrack(drone, previous.origin, drift, pos.copy(), sample)


class Bus:
    """Broadcast channel with one-tick latency and independent per-recipient loss."""

    def __init__(self, n_drones: int, p_drop: float, rng: np.random.Generator, record: bool = False):
        self.n = n_drones
        self.p_drop = p_drop
        self.rng = rng
        self._pending: list[tuple[int, int, int, BusMessage]] = []
        self._seq = 0
        self.record = record
        self.deliveries: list[tuple[int, int, int, str, int]] = []  # tick_sent, sender, recipient, kind, ref

    def broadcast(self, message: BusMessage) -> None:
        self._pending.append((message.tick, message.sender, self._seq, message))
        self._seq += 1

    def deliver(self, tick: int) -> dict[int, list[BusMessage]]:
        """Messages sent before ``tick`` that survive the channel, per recipient."""
        due = sorted(p for p in self._pending if p[0] < tick)
        self._pending = [p for p in self._pending if p[0] >= tick]
        inbox: dict[int, list[BusMessage]] = {r: [] for r in range(self.n)}
        for _, sender, _, msg in due:
            for r in range(self.n):
                if r == sender:
                    continue
                if self.rng.random() < self.p_drop:
                    continue
                inbox[r].append(msg)
                if self.record:
                    self.deliveries.append((msg.tick, sender, r, payload_kind(msg.payload), payload_ref(msg.payload)))
        for r in inbox:
            inbox[r].sort(key=lambda m: (m.tick, m.sender))
        return inbox


def broadcast(bus: Bus, message: BusMessage) -> None:
    bus.broadcast(message)


def deliver(bus: Bus, tick: int) -> dict[int, list[BusMessage]]:
    return bus.deliver(tick)


def payload_kind(payload) -> str:
    if isinstance(payload, VisionDetection):
        return "vision"
    if isinstance(payload, VioSample):
        return "vio"
    return type(payload).__name__.lower()


def payload_ref(payload) -> int:
    """Second key that, with the sender and tick, identifies a payload."""
    if isinstance(payload, VisionDetection):
        return payload.target
    return -1


# --- measurement logs -------------------------------------------------------

VISION_COLUMNS = ["tick", "observer", "target", "px", "py", "pz"]
UWB_COLUMNS = ["tick", "a", "b", "distance"]
VIO_COLUMNS = ["tick", "drone", "dx", "dy", "dz", "vx", "vy", "vz"]
DELIVERY_COLUMNS = ["tick_sent", "sender", "recipient", "kind", "ref"]


@dataclass
class MeasurementLog:
    vision: list[VisionDetection] = field(default_factory=list)
    uwb: list[UwbRange] = field(default_factory=list)
    vio: list[VioSample] = field(default_factory=list)
    deliveries: list[tuple] = field(default_factory=list)

    def write_csv(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        _write(d / "vision.csv", VISION_COLUMNS,
               ([m.tick, m.observer, m.target, *map(float, m.relative_position)] for m in self.vision))
        _write(d / "uwb.csv", UWB_COLUMNS, ([m.tick, m.a, m.b, m.distance] for m in self.uwb))
        _write(d / "vio.csv", VIO_COLUMNS,
               ([m.tick, m.drone, *map(float, m.displacement), *map(float, m.velocity)] for m in self.vio))
        _write(d / "deliveries.csv", DELIVERY_COLUMNS, (list(r) for r in self.deliveries))

    @classmethod
    def read_csv(cls, directory: str | Path) -> "MeasurementLog":
        d = Path(directory)
        log = cls()
        for r in _read(d / "vision.csv", VISION_COLUMNS):
            log.vision.append(VisionDetection(int(r[1]), int(r[2]), _vec(r[3:6]), int(r[0])))
        for r in _read(d / "uwb.csv", UWB_COLUMNS):
            log.uwb.append(UwbRange(int(r[1]), int(r[2]), float(r[3]), int(r[0])))
        for r in _read(d / "vio.csv", VIO_COLUMNS):
            log.vio.append(VioSample(int(r[1]), _vec(r[2:5]), _vec(r[5:8]), int(r[0])))
        path = d / "deliveries.csv"
        if path.exists():
            for r in _read(path, DELIVERY_COLUMNS):
                log.deliveries.append((int(r[0]), int(r[1]), int(r[2]), r[3], int(r[4])))
        return log


def _vec(values: Iterable[str]) -> np.ndarray:
    return np.array([float(v) for v in values])


def _write(path: Path, columns: list[str], rows: Iterable[list]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={CSV_SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _read(path: Path, columns: list[str]) -> list[list[str]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows or rows[0] != columns:
        raise ValueError(f"{path}: expected header {columns}")
    return rows[1:]


def per_recipient(deliveries: Iterable[tuple]) -> dict:
    """Index delivery records as ``{(tick_sent, sender, kind, ref): {recipients}}``."""
    out: dict = defaultdict(set)
    for tick, sender, recipient, kind, ref in deliveries:
        out[(tick, sender, kind, ref)].add(recipient)
    return out
