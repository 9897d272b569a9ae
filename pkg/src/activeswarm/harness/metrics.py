"""Evaluation metrics: per-axis RMSE and formation angles about the centroid."""

from __future__ import annotations

import math

import numpy as np


def formation_angles(positions, reference_drone: int = 0) -> np.ndarray:
    """Angle of every drone about the horizontal centroid, relative to the reference drone's ray, in [0, 360)."""
    p = np.asarray(positions, dtype=float)[:, :2]
    n = p.shape[0]
    if n < 3:
        raise ValueError("formation angles need at least three drones")
    rays = p - p.mean(axis=0)
    if np.any(np.hypot(rays[:, 0], rays[:, 1]) < 1e-12):
        raise ValueError("a drone coincides with the swarm centroid")
    bearings = np.degrees(np.arctan2(rays[:, 1], rays[:, 0]))
    return np.mod(bearings - bearings[reference_drone], 360.0)


def formation_angle_errors(positions, reference_drone: int = 0) -> np.ndarray:
    """Signed deviation (degrees, in (-180, 180]) from even spacing ``360 k / N``."""
    angles = formation_angles(positions, reference_drone)
    n = angles.size
    ideal = 360.0 * np.mod(np.arange(n) - reference_drone, n) / n
    err = np.mod(angles - ideal + 180.0, 360.0) - 180.0
    err[err == -180.0] = 180.0
    return err


def rmse(estimate_log, truth_log) -> np.ndarray:
    """Per-axis root-mean-square error over every key present in both logs.

    Logs are mappings from a key such as ``(tick, owner, target)`` to a
    vector, or equally shaped arrays of vectors.
    """
    if isinstance(estimate_log, dict):
        keys = sorted(set(estimate_log) & set(truth_log))
        if not keys:
            raise ValueError("estimate and truth logs share no entries")
        err = np.array([np.asarray(estimate_log[k]) - np.asarray(truth_log[k]) for k in keys], dtype=float)
    else:
        est = np.asarray(estimate_log, dtype=float)
        tru = np.asarray(truth_log, dtype=float)
        if est.shape != tru.shape:
            raise ValueError(f"shape mismatch {est.shape} vs {tru.shape}")
        if est.size == 0:
            raise ValueError("empty logs")
        err = (est - tru).reshape(-1, est.shape[-1])
    return np.sqrt(np.mean(err**2, axis=0))


def summarize(values) -> dict:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return {"mean": math.nan, "std": math.nan, "max": math.nan}
    return {"mean": float(a.mean()), "std": float(a.std()), "max": float(a.max())}
