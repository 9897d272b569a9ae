"""Graph-based attention planning.

Chooses who observes whom. With each drone observing exactly one neighbour
and being observed exactly once, the feasible observation graphs are the
directed Hamiltonian cycles over the swarm, so the planner enumerates the
``(n-1)!`` cycles through drone 0 and keeps the cheapest.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .core import DroneState, wrap_angle

DEFAULT_SERVO_HALF_RANGE = math.radians(150.0)
TIE_RTOL = 1e-9


class AssignmentError(ValueError):
    """The target map is not a single directed cycle over all drones."""


class BearingUndefined(ValueError):
    """Observer and target coincide in the horizontal plane."""


@dataclass(frozen=True)
class ObservationAssignment:
    """``targets[i]`` is the drone observed by drone ``i``."""

    targets: tuple

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if not is_single_cycle(self.targets):
            raise AssignmentError(f"{self.targets} is not a single cycle without fixed points")

    @classmethod
    def from_map(cls, mapping: Mapping[int, int]) -> "ObservationAssignment":
        n = len(mapping)
        if set(mapping) != set(range(n)):
            raise AssignmentError(f"observers must be 0..{n - 1}, got {sorted(mapping)}")
        return cls(tuple(mapping[i] for i in range(n)))

    @property
    def n(self) -> int:
        return len(self.targets)

    def as_dict(self) -> dict:
        return dict(enumerate(self.targets))

    def observer_of(self, j: int) -> int:
        return self.targets.index(j)

    def neighbors(self, i: int) -> set:
        """Drones adjacent to ``i`` in the undirected observation graph."""
        return {self.targets[i], self.observer_of(i)}


@dataclass(frozen=True)
class GapCost:
    value: float
    distance_term: float
    velocity_term: float


@dataclass(frozen=True)
class CameraCommand:
    drone: int
    angle: float
    reachable: bool


def is_single_cycle(targets: Sequence[int]) -> bool:
    n = len(targets)
    if n < 2 or sorted(targets) != list(range(n)):
        return False
    seen, i = 0, 0
    while True:
        i = targets[i]
        seen += 1
        if i == 0:
            return seen == n


def _as_assignment(assignment) -> ObservationAssignment:
    if isinstance(assignment, ObservationAssignment):
        return assignment
    if isinstance(assignment, Mapping):
        return ObservationAssignment.from_map(assignment)
    return ObservationAssignment(tuple(assignment))


def build_incidence(assignment) -> np.ndarray:
    """Incidence matrix with row ``i`` holding edge ``i -> targets[i]``."""
    a = _as_assignment(assignment)
    D = np.zeros((a.n, a.n), dtype=int)
    for i, j in enumerate(a.targets):
        D[i, i] = -1
        D[i, j] = 1
    return D


def laplacian(D: np.ndarray) -> np.ndarray:
    D = np.asarray(D)
    return D.T @ D


def algebraic_connectivity(D: np.ndarray) -> float:
    """Second-smallest eigenvalue of ``D^T D``."""
    eig = np.linalg.eigvalsh(laplacian(D).astype(float))
    return float(eig[1]) if eig.size > 1 else 0.0


def _connected(D: np.ndarray) -> bool:
    n = D.shape[1]
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for row in D:
        nz = np.flatnonzero(row)
        for a, b in zip(nz[:-1], nz[1:]):
            ra, rb = find(int(a)), find(int(b))
            if ra != rb:
                parent[ra] = rb
    root = find(0)
    return all(find(k) == root for k in range(n))


def check_constraints(D: np.ndarray) -> bool:
    """Zero row sums, connected undirected graph, every drone in >= 2 edges."""
    D = np.asarray(D)
    if D.ndim != 2 or D.shape[1] < 2 or D.shape[0] == 0:
        return False
    if np.any(D.sum(axis=1) != 0):
        return False
    if np.abs(D).sum(axis=0).min() < 2:
        return False
    return _connected(D)


def count_candidates(n: int, pruned: bool) -> int:
    if n < 2:
        raise ValueError("n must be >= 2")
    return math.factorial(n - 1) if pruned else (n - 1) ** n


def pair_costs(positions, velocities, gamma1: float, gamma2: float) -> np.ndarray:
    """``C[i, j]`` is the cost contribution of drone ``i`` observing ``j``."""
    x = np.asarray(positions, dtype=float)
    v = np.asarray(velocities, dtype=float)
    rel = x[None, :, :] - x[:, None, :]
    return gamma1 * np.einsum("ijk,ijk->ij", rel, rel) - gamma2 * np.einsum("ik,ijk->ij", v, rel)


def gap_cost(assignment, positions, velocities, gamma1: float, gamma2: float) -> GapCost:
    a = _as_assignment(assignment)
    x = np.asarray(positions, dtype=float)
    v = np.asarray(velocities, dtype=float)
    edges = x[list(a.targets)] - x
    dist = float(np.sum(edges * edges))
    vel = float(np.sum(v * edges))
    return GapCost(gamma1 * dist - gamma2 * vel, dist, vel)


@lru_cache(maxsize=None)
def _cycle_orders(n: int) -> np.ndarray:
    """All visiting orders ``0 -> p1 -> ... -> p_{n-1} -> 0`` as an int array."""
    body = np.array(list(itertools.permutations(range(1, n))), dtype=np.int8).reshape(-1, n - 1)
    zeros = np.zeros((body.shape[0], 1), dtype=np.int8)
    orders = np.hstack([zeros, body, zeros])
    orders.setflags(write=False)
    return orders


def _order_to_targets(order: np.ndarray) -> tuple:
    n = order.size - 1
    targets = [0] * n
    for a, b in zip(order[:-1], order[1:]):
        targets[int(a)] = int(b)
    return tuple(targets)


def plan(positions, velocities, gamma1: float = 1.0, gamma2: float = 1.0) -> ObservationAssignment:
    """Cheapest single-cycle observation graph.

    Ties (within a relative ``1e-9``) go to the lexicographically smallest
    target tuple so results never depend on enumeration order.
    """
    x = np.asarray(positions, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("planning needs at least two drones")
    C = pair_costs(x, velocities, gamma1, gamma2)
    orders = _cycle_orders(n)
    costs = C[orders[:, :-1], orders[:, 1:]].sum(axis=1)
    best = costs.min()
    tied = np.flatnonzero(costs <= best + TIE_RTOL * max(1.0, abs(best)))
    return ObservationAssignment(min(_order_to_targets(orders[k]) for k in tied))


def camera_angle(
    observer: DroneState,
    target_position_global,
    servo_half_range: float = DEFAULT_SERVO_HALF_RANGE,
) -> CameraCommand:
    """Servo angle (body frame) that centres the target horizontally."""
    target = np.asarray(target_position_global, dtype=float)
    dx = target[0] - observer.position[0]
    dy = target[1] - observer.position[1]
    if dx == 0.0 and dy == 0.0:
        raise BearingUndefined(f"drone {observer.id}: target coincides horizontally")
    angle = wrap_angle(math.atan2(dy, dx) - observer.yaw)
    if abs(angle) <= servo_half_range:
        return CameraCommand(observer.id, angle, True)
    return CameraCommand(observer.id, math.copysign(servo_half_range, angle), False)
