"""Timing of the observation planner against swarm size."""

from __future__ import annotations

import time

import numpy as np

from ..gap import count_candidates, plan

BENCHMARK_COLUMNS = ["n_drones", "candidates_unpruned", "candidates_pruned", "mean_s", "max_s", "repeats"]


def gap_benchmark(sizes=(4, 5, 6, 7, 8, 9, 10), repeats: int = 20, seed: int = 0) -> list[dict]:
    """Mean and worst ``plan`` wall time over random configurations per swarm size."""
    rng = np.random.default_rng(seed)
    plan(rng.uniform(-1, 1, (3, 3)), np.zeros((3, 3)))  # warm caches and imports
    rows = []
    for n in sizes:
        times = []
        for _ in range(repeats):
            x = rng.uniform(-3.0, 3.0, (n, 3))
            v = rng.uniform(-2.0, 2.0, (n, 3))
            t0 = time.perf_counter()
            plan(x, v)
            times.append(time.perf_counter() - t0)
        rows.append({
            "n_drones": n,
            "candidates_unpruned": count_candidates(n, False),
            "candidates_pruned": count_candidates(n, True),
            "mean_s": float(np.mean(times)),
            "max_s": float(np.max(times)),
            "repeats": repeats,
        })
    return rows
