import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activeswarm.config import SwarmConfig
from activeswarm.estimator import (
    CausalSavitzkyGolay,
    FrameData,
    PairFrame,
    PairWindow,
    RelativeEstimate,
    UnobservablePairError,
    build_residuals,
    estimate_step,
    initialize,
    nlls_solve,
    sg_coefficients,
    sg_filter,
)
from activeswarm.estimator import residuals as rb
from activeswarm.estimator.solver import PackedProblem, levenberg_marquardt

from oracles import grid_minimize, least_squares_poly_value

# --- Savitzky-Golay -------------------------------------------------------


def test_sg_constant_series():
    assert np.allclose(sg_filter(np.full(30, 2.5)), 2.5, atol=1e-12)


def test_sg_reproduces_quadratic_interior():
    t = np.arange(40.0)
    s = t**2
    assert np.max(np.abs(sg_filter(s, 9, 2)[4:-4] - s[4:-4])) < 1e-10


@pytest.mark.parametrize("window, order", [(5, 0), (7, 1), (9, 2), (11, 3), (51, 1)])
def test_sg_polynomials_up_to_order_exact(window, order):
    rng = np.random.default_rng(window * 10 + order)
    t = np.arange(80.0) / 10
    s = np.polyval(rng.uniform(-1, 1, order + 1), t)
    h = window // 2
    assert np.max(np.abs(sg_filter(s, window, order)[h:-h] - s[h:-h])) < 1e-10
    assert np.max(np.abs(sg_filter(s, window, order, causal=True)[window - 1:] - s[window - 1:])) < 1e-9


def test_sg_impulse_window5_order2():
    impulse = np.zeros(11)
    impulse[5] = 1.0
    out = sg_filter(impulse, 5, 2)
    assert out[5] == pytest.approx(17 / 35, abs=1e-12)
    # the response to an impulse is the coefficient vector, reversed in time
    expected = [least_squares_poly_value(np.eye(5)[k], 2, 2) for k in range(5)]
    assert np.allclose(out[3:8], expected[::-1], atol=1e-12)
    assert np.allclose(sg_coefficients(5, 2), np.array([-3, 12, 17, 12, -3]) / 35, atol=1e-12)


def test_sg_matches_scipy_oracle():
    signal = pytest.importorskip("scipy.signal")
    for window, order in [(5, 2), (9, 2), (51, 1), (11, 4)]:
        assert np.allclose(sg_coefficients(window, order), signal.savgol_coeffs(window, order)[::-1], atol=1e-12)
        assert np.allclose(sg_coefficients(window, order, window - 1),
                           signal.savgol_coeffs(window, order, pos=window - 1, use="dot"), atol=1e-10)


def test_sg_causal_matches_polyfit():
    rng = np.random.default_rng(3)
    series = rng.normal(size=30)
    out = sg_filter(series, 9, 2, causal=True)
    for end in range(8, 30):
        assert out[end] == pytest.approx(least_squares_poly_value(series[end - 8:end + 1], 2, 8), abs=1e-10)
    f = CausalSavitzkyGolay(9, 2)
    streamed = [f.push(v) for v in series]
    assert np.allclose(streamed, out, atol=1e-12)


def test_sg_short_series_passes_through():
    s = np.array([1.0, 5.0, 2.0])
    assert np.array_equal(sg_filter(s, 9, 2), s)


@pytest.mark.parametrize("window, order", [(4, 2), (0, 0), (5, 5), (5, -1)])
def test_sg_rejects_bad_parameters(window, order):
    with pytest.raises(ValueError):
        sg_filter(np.zeros(20), window, order)


# --- residual blocks ---------------------------------------------------------


def test_residual_definitions():
    x = np.array([1.0, 2.0, 0.5])
    assert np.allclose(rb.vision_ij(1, [1.5, 2.0, 0.0]).residual(x), [0.5, 0.0, -0.5])
    assert np.allclose(rb.vision_ji(1, [-1.0, -2.0, -0.5]).residual(x), 0.0)
    assert rb.uwb(1, 2.0).residual(x)[0] == pytest.approx(math.sqrt(5.25) - 2.0)
    vio = rb.vio(1, [1.0, 1.0, 0.0], own_displacement=[0.5, 0.0, 0.0], other_displacement=[0.5, 1.0, 0.5])
    assert np.allclose(vio.residual(x), 0.0)
    prior = rb.motion_prior(1, [1.0, 1.0, 0.5], own_velocity=[0.0, 0.0, 0.0], other_velocity=[0.0, 10.0, 0.0], dt=0.1)
    assert np.allclose(prior.residual(x), 0.0)


def test_block_validation():
    with pytest.raises(ValueError):
        rb.ResidualBlock("lidar", 1, np.zeros(3))
    with pytest.raises(ValueError):
        rb.uwb(1, 1.0, weight=0.0)


def _blocks_at(x, rng):
    return [
        rb.vision_ij(1, rng.normal(size=3)),
        rb.vision_ji(1, rng.normal(size=3)),
        rb.uwb(1, abs(rng.normal()) + 0.5),
        rb.vio(1, rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)),
        rb.motion_prior(1, rng.normal(size=3), rng.normal(size=3), rng.normal(size=3), 0.04),
    ]


def _central_difference(f, x, h=1e-6):
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = rng.uniform(-3, 3, 3)
        for block in _blocks_at(x, rng):
            for res, jac in [(block.residual, block.jacobian), (block.scalar_residual, block.scalar_jacobian)]:
                analytic = np.atleast_2d(jac(x))
                numeric = _central_difference(res, x)
                scale = max(np.max(np.abs(numeric)), 1e-8)
                assert np.max(np.abs(analytic - numeric)) / scale < 1e-5, block.kind


def test_packed_jacobian_matches_finite_differences():
    rng = np.random.default_rng(12)
    blocks = _blocks_at(None, rng) + [rb.uwb(2, 1.3), rb.vision_ij(2, [0.1, 1.0, 0.0])]
    for mode in ("vector", "scalar"):
        prob = PackedProblem(blocks, [1, 2], 3, mode)
        x = rng.uniform(-2, 2, (2, 3))
        _, J = prob.linearize(x)
        numeric = _central_difference(lambda v: prob.linearize(v.reshape(2, 3))[0], x.ravel())
        assert np.max(np.abs(J - numeric)) < 1e-5 * max(1.0, np.max(np.abs(numeric)))


# --- solver ---------------------------------------------------------------------


def independent_cost(candidates, terms):
    """Sum of squared residuals written from the block definitions, not the package."""
    x = np.atleast_2d(candidates)
    total = np.zeros(len(x))
    for kind, value in terms:
        if kind == "vision_ij":
            r = value - x
        elif kind == "vision_ji":
            r = value + x
        elif kind in ("vio", "motion_prior"):
            r = value - x
        else:
            r = (np.linalg.norm(x, axis=1) - value)[:, None]
        total += np.sum(r**2, axis=1)
    return total


def make_blocks(terms):
    out = []
    for kind, value in terms:
        if kind == "uwb":
            out.append(rb.uwb(1, value))
        else:
            out.append(rb.ResidualBlock(kind, 1, np.asarray(value, float)))
    return out


def test_consistent_blocks_zero_cost():
    truth = np.array([1.0, 2.0, 0.0])
    terms = [("vision_ij", truth), ("vision_ji", -truth), ("uwb", math.sqrt(5)), ("vio", truth),
            ("motion_prior", truth)]
    sol, report = nlls_solve(make_blocks(terms), {1: truth + 0.3})
    assert np.allclose(sol[1], truth, atol=1e-9)
    assert report.final_cost < 1e-12
    assert report.converged


def test_three_block_example_matches_grid():
    terms = [("vision_ij", np.array([1.05, 0.0, 0.0])), ("uwb", 0.95), ("vio", np.array([1.0, 0.0, 0.0]))]
    sol, _ = nlls_solve(make_blocks(terms), {1: np.array([1.0, 0.0, 0.0])})
    best = grid_minimize(lambda c: independent_cost(c, terms), [1.0, 0.0, 0.0], [1.0, 0.5, 0.1])
    assert np.max(np.abs(sol[1] - best)) <= 2e-3


def test_outlier_range_squared_matches_grid():
    truth = np.array([1.0, 0.0, 0.0])
    terms = [("vision_ij", truth), ("vision_ji", -truth), ("uwb", 3.0)]
    sol, _ = nlls_solve(make_blocks(terms), {1: truth})
    # radial balance 2 (r - 1) + (r - 3) = 0
    assert sol[1] == pytest.approx([5 / 3, 0.0, 0.0], abs=1e-6)
    best = grid_minimize(lambda c: independent_cost(c, terms), truth, [1.0, 0.5, 0.5])
    assert np.max(np.abs(sol[1] - best)) <= 2e-3


def test_outlier_range_bounded_by_vision_in_scalar_mode():
    truth = np.array([1.0, 0.0, 0.0])
    terms = [("vision_ij", truth), ("vision_ji", -truth), ("uwb", 3.0)]
    sol, _ = nlls_solve(make_blocks(terms), {1: truth}, norm_mode="scalar")
    assert np.linalg.norm(sol[1] - truth) < 0.15

    def unsquared(c):
        x = np.atleast_2d(c)
        return (np.linalg.norm(truth - x, axis=1) + np.linalg.norm(-truth + x, axis=1)
                + np.abs(np.linalg.norm(x, axis=1) - 3.0))

    best = grid_minimize(unsquared, truth, [0.5, 0.5, 0.5])
    assert np.linalg.norm(best - truth) < 0.15


def random_problem(rng):
    truth = rng.uniform(-2, 2, 3)
    truth[:2] += np.sign(truth[:2]) * 0.5
    terms = []
    for kind in rng.permutation(["vision_ij", "vision_ji", "uwb", "vio", "motion_prior"])[: rng.integers(2, 6)]:
        if kind == "uwb":
            terms.append(("uwb", float(np.linalg.norm(truth) + rng.normal(0, 0.1))))
        elif kind == "vision_ji":
            terms.append((kind, -truth + rng.normal(0, 0.05, 3)))
        else:
            terms.append((kind, truth + rng.normal(0, 0.05, 3)))
    if all(k == "uwb" for k, _ in terms):
        terms.append(("vision_ij", truth + rng.normal(0, 0.05, 3)))
    return truth, terms


def test_solver_matches_grid_oracle_on_random_problems():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        truth, terms = random_problem(rng)
        start = truth + rng.normal(0, 0.2, 3)
        sol, report = nlls_solve(make_blocks(terms), {1: start})
        assert report.final_cost <= report.initial_cost
        best = grid_minimize(lambda c: independent_cost(c, terms), truth, [0.5, 0.5, 0.5])
        assert np.max(np.abs(sol[1] - best)) <= 2e-3


def test_lm_cost_never_increases():
    rng = np.random.default_rng(5)
    for _ in range(20):
        truth, terms = random_problem(rng)
        prob = PackedProblem(make_blocks(terms), [1], 3)
        x = (truth + rng.normal(0, 1.0, 3))[None, :]
        costs = [prob.cost(x)]
        for _ in range(10):
            x, report = levenberg_marquardt(prob, x, max_iterations=1)
            costs.append(report.final_cost)
        assert all(b <= a + 1e-15 for a, b in zip(costs, costs[1:]))


def test_singular_range_start_is_nudged():
    sol, report = nlls_solve([rb.uwb(1, 1.0), rb.vision_ij(1, [1.0, 0.0, 0.0])], {1: np.zeros(3)})
    assert np.all(np.isfinite(sol[1]))
    assert np.allclose(sol[1], [1.0, 0.0, 0.0], atol=1e-6)


def test_unreferenced_targets_carry_forward():
    sol, _ = nlls_solve([rb.vision_ij(1, [1.0, 0.0, 0.0])], {1: np.zeros(3), 2: np.array([5.0, 5.0, 0.0])})
    assert np.array_equal(sol[2], [5.0, 5.0, 0.0])


def test_scalar_norm_mode_solves_consistent_problem():
    truth = np.array([0.5, -1.0, 0.2])
    terms = [("vision_ij", truth), ("uwb", float(np.linalg.norm(truth))), ("vio", truth)]
    sol, _ = nlls_solve(make_blocks(terms), {1: truth + 0.1}, norm_mode="scalar")
    assert np.allclose(sol[1], truth, atol=1e-4)


# --- initialisation -------------------------------------------------------------


def test_initialize_noiseless():
    win = {1: PairWindow(forward=[np.array([1.0, 2.0, 0.0])] * 10, ranges=[math.sqrt(5)] * 10)}
    init = initialize(win, owner=0)
    assert np.allclose(init.estimates[1], [1.0, 2.0, 0.0], atol=1e-9)
    assert init.reports[1].final_cost < 1e-12


def test_initialize_from_reciprocal_detections_only():
    win = {1: PairWindow(reverse=[np.array([-1.0, -2.0, 0.0])] * 5, ranges=[math.sqrt(5)] * 5)}
    assert np.allclose(initialize(win).estimates[1], [1.0, 2.0, 0.0], atol=1e-9)


def test_initialize_flags_range_only_pair():
    win = {1: PairWindow(forward=[np.array([1.0, 0.0, 0.0])], ranges=[1.0]), 2: PairWindow(ranges=[2.0] * 5)}
    with pytest.raises(UnobservablePairError) as exc:
        initialize(win)
    assert exc.value.pairs == [2]
    assert 1 in exc.value.partial.estimates


def test_initialize_noisy_window_matches_grid_oracle():
    rng = np.random.default_rng(77)
    truth = np.array([1.2, -0.7, 0.0])
    fwd = [truth + rng.normal(0, 0.05, 3) for _ in range(50)]
    rev = [-truth + rng.normal(0, 0.05, 3) for _ in range(50)]
    ranges = list(np.linalg.norm(truth) + rng.normal(0, 0.1, 50))
    est = initialize({1: PairWindow(fwd, rev, ranges)}).estimates[1]
    assert est[2] == 0.0
    assert np.linalg.norm(est - truth) < 0.03
    terms = [("vision_ij", p[:2]) for p in fwd] + [("vision_ji", p[:2]) for p in rev] + [("uwb", d) for d in ranges]
    best = grid_minimize(lambda c: independent_cost(c, terms), truth[:2], [0.5, 0.5])
    assert np.max(np.abs(est[:2] - best)) <= 2e-3


# --- frames ------------------------------------------------------------------


def full_frame(truth, own_disp=np.zeros(3), other_disp=np.zeros(3)):
    return PairFrame(p_ij=truth.copy(), p_ji=-truth, distance=float(np.linalg.norm(truth)),
                     own_displacement=own_disp, other_displacement=other_disp,
                     own_velocity=np.zeros(3), other_velocity=np.zeros(3))


def test_full_frame_has_five_blocks_dimension_13():
    truth = np.array([1.0, 2.0, 0.0])
    prev = RelativeEstimate(0, {1: truth}, 0)
    init = RelativeEstimate(0, {1: truth}, 0)
    blocks = build_residuals(FrameData(0, 2, {1: full_frame(truth)}), prev, 0.04, init)
    assert sorted(b.kind for b in blocks) == sorted(rb.KINDS)
    assert sum(b.dimension for b in blocks) == 13
    for b in blocks:
        assert np.allclose(b.residual(truth), 0.0)


def test_missing_peer_data_omits_blocks():
    truth = np.array([1.0, 2.0, 0.0])
    prev = RelativeEstimate(0, {1: truth}, 0)
    pf = PairFrame(p_ij=truth, distance=float(np.linalg.norm(truth)), own_displacement=np.zeros(3),
                   own_velocity=np.zeros(3))
    kinds = {b.kind for b in build_residuals(FrameData(0, 2, {1: pf}), prev, 0.04, prev)}
    assert kinds == {"vision_ij", "uwb"}


@pytest.mark.parametrize("dropped", list(rb.KINDS))
def test_omitting_any_kind_keeps_exact_solution(dropped):
    truth = np.array([1.0, -2.0, 0.3])
    prev = RelativeEstimate(0, {1: truth + [0.1, 0.0, 0.0]}, 0)
    init = RelativeEstimate(0, {1: truth}, 0)
    weights = {k: (0.0 if k == dropped else 1.0) for k in rb.KINDS}
    # the prior is built from the previous estimate; make it consistent when kept
    prev_exact = RelativeEstimate(0, {1: truth}, 0)
    est, report, _ = estimate_step(0, FrameData(0, 2, {1: full_frame(truth)}), prev_exact, 0.04, init, weights)
    assert np.allclose(est.estimates[1], truth, atol=1e-9)
    est, _, _ = estimate_step(0, FrameData(0, 2, {1: full_frame(truth)}), prev, 0.04, init,
                              {**weights, "motion_prior": 0.0})
    assert np.allclose(est.estimates[1], truth, atol=1e-9)


def test_estimate_antisymmetry_with_mirrored_data():
    rng = np.random.default_rng(8)
    x01 = np.array([1.3, 0.4, 0.1])
    p01 = x01 + rng.normal(0, 0.05, 3)
    p10 = -x01 + rng.normal(0, 0.05, 3)
    d = float(np.linalg.norm(x01) + 0.07)
    v0, v1 = rng.normal(size=3), rng.normal(size=3)
    s0, s1 = rng.normal(0, 0.1, 3), rng.normal(0, 0.1, 3)
    prev0, prev1 = RelativeEstimate(0, {1: x01 + 0.02}, 0), RelativeEstimate(1, {0: -x01 - 0.02}, 0)
    init0, init1 = RelativeEstimate(0, {1: x01}, 0), RelativeEstimate(1, {0: -x01}, 0)
    f0 = FrameData(0, 2, {1: PairFrame(p01, p10, (), d, s0, s1, v0, v1)})
    f1 = FrameData(1, 2, {0: PairFrame(p10, p01, (), d, s1, s0, v1, v0)})
    e0, _, _ = estimate_step(0, f0, prev0, 0.04, init0)
    e1, _, _ = estimate_step(1, f1, prev1, 0.04, init1)
    assert np.allclose(e0.estimates[1], -e1.estimates[0], atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v[:2]) > 0.2))
def test_noiseless_frame_recovers_truth_from_nearby_start(v):
    truth = np.array(v)
    init = RelativeEstimate(0, {1: truth}, 0)
    prev = RelativeEstimate(0, {1: truth + 0.05}, 0)
    est, _, _ = estimate_step(0, FrameData(0, 2, {1: full_frame(truth)}), prev, 0.04, init,
                              {k: 1.0 for k in rb.KINDS} | {"motion_prior": 0.0})
    assert np.allclose(est.estimates[1], truth, atol=1e-7)


def test_estimator_uses_configured_filter_window():
    cfg = SwarmConfig()
    from activeswarm.estimator import RelativeEstimator

    est = RelativeEstimator(0, cfg)
    assert all(f.window == cfg.uwb.sg_window for f in est._sg.values())
