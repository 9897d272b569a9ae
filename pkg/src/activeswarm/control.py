"""Double-integrator dynamics, circular reference trajectories and the formation control law."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import WorldState


@dataclass(frozen=True)
class ReferenceState:
    positions: np.ndarray  # (N, 3)
    velocities: np.ndarray
    accelerations: np.ndarray


@dataclass(frozen=True)
class ControlOutput:
    u: np.ndarray  # (3,)
    pd_only: bool  # no usable neighbour estimates
    saturated: bool


def step_dynamics(world: WorldState, controls: np.ndarray, dt: float | None = None) -> WorldState:
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    dt = world.dt if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = world.velocities + np.asarray(controls, dtype=float) * dt
    x = world.positions + v * dt
    return replace(world, tick=world.tick + 1, positions=x, velocities=v, yaw=np.zeros(world.n))


def ramp_phase(t: float, radius: float, speed: float, ramp_time: float) -> tuple[float, float, float]:
    """Arc angle, angular rate and angular acceleration of a linear speed ramp."""
    if t <= 0:
        return 0.0, 0.0, 0.0
    if ramp_time > 0 and t < ramp_time:
        alpha = speed / (ramp_time * radius)
        return 0.5 * alpha * t * t, alpha * t, alpha
    omega = speed / radius
    theta_ramp = 0.5 * omega * ramp_time
    return theta_ramp + omega * (t - ramp_time), omega, 0.0


def circular_reference(
    t: float,
    radius: float,
    speed: float,
    n_drones: int,
    ramp_time: float = 3.0,
    center=(0.0, 0.0, 0.0),
) -> ReferenceState:
    """Evenly spaced drones on a circle, counterclockwise, tangential speed ramping from rest."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    theta, omega, alpha = ramp_phase(t, radius, speed, ramp_time)
    phases = 2.0 * math.pi * np.arange(n_drones) / n_drones + theta
    c, s = np.cos(phases), np.sin(phases)
    zeros = np.zeros(n_drones)
    pos = np.column_stack([radius * c, radius * s, zeros]) + np.asarray(center, dtype=float)
    vel = np.column_stack([-radius * omega * s, radius * omega * c, zeros])
    # tangential (alpha) plus centripetal (omega^2) parts
    acc = np.column_stack([
        -radius * alpha * s - radius * omega**2 * c,
        radius * alpha * c - radius * omega**2 * s,
        zeros,
    ])
    return ReferenceState(pos, vel, acc)


def discrete_reference(
    t: float,
    dt: float,
    radius: float,
    speed: float,
    n_drones: int,
    ramp_time: float = 3.0,
    center=(0.0, 0.0, 0.0),
) -> ReferenceState:
    """Reference whose derivatives are the finite differences semi-implicit Euler reproduces exactly.

    Velocity is the backward difference and acceleration the central second
    difference of sampled positions, so a drone starting on the reference and
    fed ``accelerations`` as feedforward stays on it at every tick.
    """
    prev, now, nxt = (circular_reference(s, radius, speed, n_drones, ramp_time, center).positions
                      for s in (t - dt, t, t + dt))
    return ReferenceState(now, (now - prev) / dt, (nxt - 2.0 * now + prev) / (dt * dt))


def formation_term(i: int, reference: ReferenceState, relative_estimates: dict, neighbors) -> tuple[np.ndarray, int]:
    """Sum of relative-position errors against the reference offsets over usable neighbours."""
    total = np.zeros(3)
    used = 0
    for j in sorted(neighbors):
        est = relative_estimates.get(j)
        if est is None:
            continue
        total += est - (reference.positions[j] - reference.positions[i])
        used += 1
    return total, used


def control_law(
    i: int,
    reference: ReferenceState,
    own_position: np.ndarray,
    own_velocity: np.ndarray,
    relative_estimates: dict,
    neighbors,
    kp: float = 4.0,
    kd: float = 3.0,
    c: float = 1.0,
    u_max: float = 6.0,
    stale=(),
    estimate_reference: ReferenceState | None = None,
) -> ControlOutput:
    """Feedforward + PD tracking + consensus on formation error, clamped per axis.

    ``estimate_reference`` is the reference at the epoch the relative estimates
    refer to; it defaults to ``reference``. Stale estimates are skipped.
    """
    usable = {j: v for j, v in relative_estimates.items() if j not in stale}
    ref_for_est = estimate_reference if estimate_reference is not None else reference
    consensus, used = formation_term(i, ref_for_est, usable, neighbors)
    u = (
        reference.accelerations[i]
        + kp * (reference.positions[i] - own_position)
        + kd * (reference.velocities[i] - own_velocity)
        + c * consensus
    )
    clamped = np.clip(u, -u_max, u_max)
    return ControlOutput(clamped, used == 0, bool(np.any(clamped != u)))
