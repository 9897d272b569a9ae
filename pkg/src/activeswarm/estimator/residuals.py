"""Residual blocks of the relative-position fusion problem.

Each block touches the unknown relative position of a single pair. All vector
kinds are affine in the unknown (``r = sign * x + offset``); only the UWB
range term is nonlinear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VECTOR_KINDS = ("vision_ij", "vision_ji", "vio", "motion_prior")
KINDS = ("vision_ij", "vision_ji", "uwb", "vio", "motion_prior")

# vision_ji is the only kind where the unknown enters with a plus sign.
_SIGN = {"vision_ij": -1.0, "vision_ji": 1.0, "vio": -1.0, "motion_prior": -1.0}

# Smoothing for the unsquared-norm ("scalar") mode near zero residual.
SCALAR_EPS = 1e-6


@dataclass(frozen=True)
class ResidualBlock:
    """One measurement term for the pair (owner, ``target``).

    ``value`` is the vector the unknown is compared against (detection,
    VIO-implied or predicted relative position) or the filtered range for
    ``uwb`` blocks.
    """

    kind: str
    target: int
    value: np.ndarray | float
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown residual kind {self.kind!r}")
        if not self.weight > 0:
            raise ValueError("block weight must be positive")

    @property
    def dimension(self) -> int:
        return 1 if self.kind == "uwb" else np.size(self.value)

    def residual(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "uwb":
            return np.array([np.linalg.norm(x) - self.value])
        return _SIGN[self.kind] * x + self.value

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "uwb":
            return (x / np.linalg.norm(x))[None, :]
        return _SIGN[self.kind] * np.eye(x.size)

    def scalar_residual(self, x: np.ndarray) -> float:
        """Square root of the smoothed norm; squaring gives the unsquared cost term."""
        r = self.residual(x)
        return float((r @ r + SCALAR_EPS**2) ** 0.25)

    def scalar_jacobian(self, x: np.ndarray) -> np.ndarray:
        r = self.residual(x)
        q = r @ r + SCALAR_EPS**2
        return (r @ self.jacobian(x)) / (2.0 * q**0.75)


def vision_ij(target: int, detection, weight: float = 1.0) -> ResidualBlock:
    return ResidualBlock("vision_ij", target, np.asarray(detection, dtype=float), weight)


def vision_ji(target: int, reverse_detection, weight: float = 1.0) -> ResidualBlock:
    return ResidualBlock("vision_ji", target, np.asarray(reverse_detection, dtype=float), weight)


def uwb(target: int, distance: float, weight: float = 1.0) -> ResidualBlock:
    return ResidualBlock("uwb", target, float(distance), weight)


def vio(target: int, initial, own_displacement, other_displacement, weight: float = 1.0) -> ResidualBlock:
    expected = np.asarray(initial, dtype=float) + np.asarray(other_displacement) - np.asarray(own_displacement)
    return ResidualBlock("vio", target, expected, weight)


def motion_prior(target: int, previous, own_velocity, other_velocity, dt: float, weight: float = 1.0) -> ResidualBlock:
    predicted = np.asarray(previous, dtype=float) + (np.asarray(other_velocity) - np.asarray(own_velocity)) * dt
    return ResidualBlock("motion_prior", target, predicted, weight)
