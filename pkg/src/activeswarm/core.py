"""Shared domain types, frame conventions and seeded random streams.

Global frame is East-North-Up with yaw measured counterclockwise from +X.
Vectors are plain ``numpy`` arrays of shape ``(3,)``; per-swarm quantities are
stacked into ``(N, 3)`` arrays indexed by drone id.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    w = math.fmod(a, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    elif w > math.pi:
        w -= TWO_PI
    return w


def vec3(x: float = 0.0, y: float = 0.0, z: float = 0.0) -> np.ndarray:
    return np.array([x, y, z], dtype=float)


def _label_key(label: str) -> int:
    # Python's str hash is salted per process; use a stable digest instead.
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


def seeded_rng(seed: int, stream_label: str) -> np.random.Generator:
    """Independent deterministic generator for a (seed, label) pair."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), _label_key(stream_label)])))


@dataclass(frozen=True)
class Timestamp:
    tick: int
    dt: float

    def __post_init__(self):
        if self.tick < 0:
            raise ValueError("tick must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def seconds(self) -> float:
        return self.tick * self.dt


@dataclass(frozen=True)
class DroneState:
    id: int
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    camera_angle: float = 0.0


@dataclass(frozen=True)
class WorldState:
    """Ground truth for the whole swarm at one tick."""

    tick: int
    dt: float
    positions: np.ndarray  # (N, 3)
    velocities: np.ndarray  # (N, 3)
    yaw: np.ndarray  # (N,)
    camera_angles: np.ndarray  # (N,)

    @classmethod
    def at_rest(cls, positions, dt: float, tick: int = 0) -> "WorldState":
        positions = np.array(positions, dtype=float)
        n = positions.shape[0]
        if n < 2:
            raise ValueError("a swarm needs at least two drones")
        return cls(tick, dt, positions, np.zeros((n, 3)), np.zeros(n), np.zeros(n))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def time(self) -> float:
        return self.tick * self.dt

    def drone(self, i: int) -> DroneState:
        return DroneState(
            i,
            self.positions[i].copy(),
            self.velocities[i].copy(),
            float(self.yaw[i]),
            float(self.camera_angles[i]),
        )

    def with_camera_angles(self, angles) -> "WorldState":
        return replace(self, camera_angles=np.asarray(angles, dtype=float))


def rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def global_to_local(point: np.ndarray, origin: np.ndarray, yaw: float = 0.0) -> np.ndarray:
    """Express a global point in a drone's egocentric frame."""
    return rotation_z(yaw).T @ (np.asarray(point, dtype=float) - origin)


def local_to_global(point: np.ndarray, origin: np.ndarray, yaw: float = 0.0) -> np.ndarray:
    return rotation_z(yaw) @ np.asarray(point, dtype=float) + origin


def relative_positions(positions: np.ndarray) -> np.ndarray:
    """``out[i, j] = x_j - x_i`` for every ordered pair."""
    return positions[None, :, :] - positions[:, None, :]
