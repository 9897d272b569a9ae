"""Levenberg-Marquardt over a set of per-pair residual blocks."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .residuals import _SIGN, SCALAR_EPS, ResidualBlock

MAX_ITERATIONS = 50
RELATIVE_DECREASE_TOL = 1e-8
GRADIENT_TOL = 1e-10
SINGULAR_NORM = 1e-9
SINGULAR_NUDGE = 1e-6
MAX_DAMPING = 1e12


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    wall_time: float


class PackedProblem:
    """Blocks flattened into arrays so the whole problem linearises in a few numpy ops."""

    def __init__(self, blocks: list[ResidualBlock], targets: list[int], dim: int, norm_mode: str = "vector"):
        if norm_mode not in ("vector", "scalar"):
            raise ValueError(f"unknown norm_mode {norm_mode!r}")
        self.targets = list(targets)
        self.dim = dim
        self.scalar = norm_mode == "scalar"
        slot = {t: k for k, t in enumerate(self.targets)}
        lin = [b for b in blocks if b.kind != "uwb"]
        rng = [b for b in blocks if b.kind == "uwb"]
        self.lin_idx = np.array([slot[b.target] for b in lin], dtype=int)
        self.lin_sign = np.array([_SIGN[b.kind] for b in lin])
        self.lin_off = np.array([b.value for b in lin], dtype=float).reshape(-1, dim)
        self.lin_sw = np.sqrt(np.array([b.weight for b in lin], dtype=float))
        self.uwb_idx = np.array([slot[b.target] for b in rng], dtype=int)
        self.uwb_d = np.array([b.value for b in rng], dtype=float)
        self.uwb_sw = np.sqrt(np.array([b.weight for b in rng], dtype=float))
        n_lin, n_uwb = len(lin), len(rng)
        self.n_unknowns = len(self.targets) * dim
        if self.scalar:
            self.n_rows = n_lin + n_uwb
        else:
            self.n_rows = n_lin * dim + n_uwb
        cols = self.lin_idx[:, None] * dim + np.arange(dim)[None, :]
        self._lin_cols = cols
        self._uwb_cols = self.uwb_idx[:, None] * dim + np.arange(dim)[None, :]
        self._n_lin = n_lin

    def _rows(self, x: np.ndarray, sw_lin: np.ndarray, sw_uwb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = self.dim
        J = np.zeros((self._n_lin * d + len(self.uwb_idx), self.n_unknowns))
        r_lin = self.lin_sign[:, None] * x[self.lin_idx] + self.lin_off
        xu = x[self.uwb_idx]
        norms = np.linalg.norm(xu, axis=1)
        ju = xu / norms[:, None] if xu.size else xu
        r = np.concatenate([(sw_lin[:, None] * r_lin).ravel(), sw_uwb * (norms - self.uwb_d)])
        rows = np.arange(self._n_lin * d).reshape(self._n_lin, d)
        J[rows, self._lin_cols] = (sw_lin * self.lin_sign)[:, None]
        urow = self._n_lin * d + np.arange(len(norms))
        J[urow[:, None], self._uwb_cols] = sw_uwb[:, None] * ju
        return r, J

    def _sq_norms(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r_lin = self.lin_sign[:, None] * x[self.lin_idx] + self.lin_off
        r_uwb = np.linalg.norm(x[self.uwb_idx], axis=1) - self.uwb_d
        return np.einsum("ij,ij->i", r_lin, r_lin) + SCALAR_EPS**2, r_uwb**2 + SCALAR_EPS**2

    def linearize(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Weighted residual vector and Jacobian at the stacked unknown ``x`` (P, dim).

        In scalar mode each block contributes one row, the square root of its
        smoothed norm, so the squared residual vector sums to the cost.
        """
        if not self.scalar:
            return self._rows(x, self.lin_sw, self.uwb_sw)
        n_lin = self._n_lin
        J = np.zeros((self.n_rows, self.n_unknowns))
        r_lin = self.lin_sign[:, None] * x[self.lin_idx] + self.lin_off
        xu = x[self.uwb_idx]
        norms = np.linalg.norm(xu, axis=1)
        r_uwb = norms - self.uwb_d
        ju = xu / norms[:, None] if xu.size else xu
        q_lin, q_uwb = self._sq_norms(x)
        r = np.concatenate([self.lin_sw * q_lin**0.25, self.uwb_sw * q_uwb**0.25])
        scale_lin = self.lin_sw * self.lin_sign / (2.0 * q_lin**0.75)
        J[np.arange(n_lin)[:, None], self._lin_cols] = scale_lin[:, None] * r_lin
        scale_uwb = self.uwb_sw * r_uwb / (2.0 * q_uwb**0.75)
        J[n_lin + np.arange(len(r_uwb))[:, None], self._uwb_cols] = scale_uwb[:, None] * ju
        return r, J

    def normal_equations(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Newton matrix and cost gradient (up to a factor 2 in vector mode).

        Scalar mode uses iteratively reweighted least squares: every block is
        a squared term reweighted by ``w / ||r||`` at the current iterate,
        whose gradient equals that of the sum of norms.
        """
        if self.scalar:
            q_lin, q_uwb = self._sq_norms(x)
            r, J = self._rows(x, self.lin_sw / q_lin**0.25, self.uwb_sw / q_uwb**0.25)
        else:
            r, J = self._rows(x, self.lin_sw, self.uwb_sw)
        return J.T @ J, J.T @ r

    def cost(self, x: np.ndarray) -> float:
        r_lin = self.lin_sign[:, None] * x[self.lin_idx] + self.lin_off
        r_uwb = np.linalg.norm(x[self.uwb_idx], axis=1) - self.uwb_d
        if not self.scalar:
            return float(np.sum(self.lin_sw[:, None] ** 2 * r_lin**2) + np.sum(self.uwb_sw**2 * r_uwb**2))
        q_lin = np.einsum("ij,ij->i", r_lin, r_lin) + SCALAR_EPS**2
        q_uwb = r_uwb**2 + SCALAR_EPS**2
        return float(np.sum(self.lin_sw**2 * q_lin**0.5) + np.sum(self.uwb_sw**2 * q_uwb**0.5))

    def guard_singular(self, x: np.ndarray) -> np.ndarray:
        """Nudge range-constrained unknowns away from the origin where the norm is not differentiable."""
        if not self.uwb_idx.size:
            return x
        norms = np.linalg.norm(x[self.uwb_idx], axis=1)
        bad = np.unique(self.uwb_idx[norms < SINGULAR_NORM])
        if bad.size:
            x = x.copy()
            x[bad, 0] += SINGULAR_NUDGE
        return x


def levenberg_marquardt(
    problem: PackedProblem,
    x0: np.ndarray,
    max_iterations: int = MAX_ITERATIONS,
    damping: float = 1e-3,
) -> tuple[np.ndarray, SolverReport]:
    start = time.perf_counter()
    x = problem.guard_singular(np.array(x0, dtype=float))
    initial_cost = cost = problem.cost(x)
    lam = damping
    converged = False
    it = 0
    eye = np.eye(problem.n_unknowns)
    while it < max_iterations:
        it += 1
        H, g = problem.normal_equations(x)
        if np.max(np.abs(g), initial=0.0) < GRADIENT_TOL:
            converged = True
            break
        accepted = False
        while lam < MAX_DAMPING:
            step = np.linalg.solve(H + lam * eye, -g)
            trial = problem.guard_singular(x + step.reshape(x.shape))
            trial_cost = problem.cost(trial)
            if trial_cost < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # No descent direction left at any damping: x is a stationary point to machine precision.
            converged = True
            break
        decrease = (cost - trial_cost) / max(cost, 1e-300)
        x, cost = trial, trial_cost
        lam *= 0.1
        if decrease < RELATIVE_DECREASE_TOL:
            converged = True
            break
    report = SolverReport(it, initial_cost, cost, converged, time.perf_counter() - start)
    return x, report


def nlls_solve(
    blocks: list[ResidualBlock],
    initial_guess: dict,
    norm_mode: str = "vector",
    max_iterations: int = MAX_ITERATIONS,
    damping: float = 1e-3,
) -> tuple[dict, SolverReport]:
    """Minimise the summed squared block residuals.

    ``initial_guess`` maps pair target id to its starting vector. Targets that
    no block references keep their initial value.
    """
    referenced = sorted({b.target for b in blocks})
    missing = [t for t in referenced if t not in initial_guess]
    if missing:
        raise KeyError(f"no initial guess for targets {missing}")
    solution = {t: np.array(v, dtype=float) for t, v in initial_guess.items()}
    if not referenced:
        return solution, SolverReport(0, 0.0, 0.0, True, 0.0)
    dim = np.size(next(iter(initial_guess.values())))
    problem = PackedProblem(blocks, referenced, dim, norm_mode)
    x0 = np.array([initial_guess[t] for t in referenced], dtype=float)
    x, report = levenberg_marquardt(problem, x0, max_iterations, damping)
    for k, t in enumerate(referenced):
        solution[t] = x[k]
    return solution, report
