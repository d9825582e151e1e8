import numpy as np
import pytest
from hypothesis import given, strategies as st

from autoscale_lab.estimator import CpuEstimator
from autoscale_lab.mpc import (
    ConfigurationError,
    MpcPlan,
    MpcProblem,
    ScalingLimits,
    brute_force_oracle,
    ceil_tol,
    compute_m,
    lower_bounds,
    normal_quantile,
    solve_mpc,
    round_first_action,
)

LIMITS = ScalingLimits(h=30, tau=5, s=4, x_min=80, x_max=400)


def _problem_for_L(L, x0, c_star=0.5):
    """Problem whose lower bounds equal ``L`` (single LRA, alpha 0.5, no noise)."""
    L = np.asarray(L, dtype=float)
    est = CpuEstimator(0.0, [1.0], 0.0, [0.0])
    # m^d = max(y^d, y^{d+1}); a non-increasing tail makes m^d = y^d
    peaks = np.concatenate([L, [0.0]])[:, None] * c_star
    prob = MpcProblem(x0, peaks, c_star, 0.5, est)
    prob_L = lower_bounds(compute_m(est, peaks, 0.5), c_star, est, 0.5)
    return prob, prob_L


def test_ramp_arithmetic():
    assert ScalingLimits(h=30, tau=5, s=4).ramp == 24
    assert ScalingLimits(h=32, tau=5, s=4).ramp == 24
    with pytest.raises(ConfigurationError):
        ScalingLimits(h=4, tau=5, s=4)
    with pytest.raises(ConfigurationError):
        ScalingLimits(x_min=10, x_max=5)


def test_compute_m_examples():
    est = CpuEstimator(0.1, [1.0], 0.0, [0.0])
    np.testing.assert_array_equal(compute_m(est, np.zeros((4, 1)), 0.9), 0.0)
    assert compute_m(est, [[3.0], [5.0]], 0.9)[0] == 5.0
    est = CpuEstimator(0.1, [0.001], 0.0, [0.0001])
    assert compute_m(est, [[100.0], [80.0]], 0.9)[0] == pytest.approx((1.2816 * 0.0001 + 0.001) * 100, abs=1e-6)
    assert compute_m(est, [[100.0], [80.0]], 0.9)[0] == pytest.approx(0.1128, abs=1e-4)
    with pytest.raises(ConfigurationError):
        compute_m(est, [[1.0]], 0.9)


def test_lower_bounds_examples():
    est = CpuEstimator(0.1, [0.001], 0.02, [0.0])
    den = 0.5 - 0.1 - normal_quantile(0.9) * 0.02
    assert den == pytest.approx(0.37437, abs=1e-5)
    assert lower_bounds([0.0], 0.5, est, 0.9)[0] == 0.0
    assert lower_bounds([37.437], 0.5, est, 0.9)[0] == pytest.approx(100.0, abs=1e-2)
    np.testing.assert_allclose(lower_bounds([2 * 7.3], 0.5, est, 0.9), 2 * lower_bounds([7.3], 0.5, est, 0.9))
    with pytest.raises(ConfigurationError):
        lower_bounds([1.0], 0.1, CpuEstimator(0.1, [0.001], 0.02, [0.0]), 0.9)


def test_softened_two_interval_example():
    prob, L = _problem_for_L([150, 120], 100)
    np.testing.assert_allclose(L, [150, 120])
    plan = solve_mpc(prob, LIMITS)
    np.testing.assert_allclose(plan.x, [124, 120])
    assert plan.softened_intervals == {1} and plan.feasible
    oracle = brute_force_oracle(prob, ScalingLimits(30, 5, 4, 80, 160))
    np.testing.assert_array_equal(oracle.x, [124, 120])
    assert oracle.softened_intervals == {1}


def test_single_interval_example():
    prob, _ = _problem_for_L([90], 100)
    plan = solve_mpc(prob, LIMITS)
    np.testing.assert_allclose(plan.x, [90])
    np.testing.assert_allclose(plan.u, [-10])
    assert round_first_action(plan, 100, LIMITS) == -10
    np.testing.assert_array_equal(brute_force_oracle(prob, ScalingLimits(30, 5, 4, 80, 160)).x, [90])


def test_already_minimal():
    prob, _ = _problem_for_L([10, 50, 79], 80)
    plan = solve_mpc(prob, LIMITS)
    np.testing.assert_array_equal(plan.x, 80)
    np.testing.assert_array_equal(plan.u, 0)
    assert not plan.softened_intervals


def test_infeasible_above_x_max():
    prob = MpcProblem(380, np.array([[390.0], [390.0], [500.0]]) * 0.5, 0.5, 0.5,
                      CpuEstimator(0.0, [1.0], 0.0, [0.0]))
    plan = solve_mpc(prob, LIMITS)
    assert not plan.feasible
    np.testing.assert_array_equal(plan.x, [390, 400])
    assert plan.softened_intervals == {2}


def test_plan_lookahead_pre_ramps():
    # a bound two intervals out keeps the first step above its own bound
    prob = MpcProblem(100, np.array([[80.0], [80.0], [0.0], [140.0]]) * 0.5, 0.5, 0.5,
                      CpuEstimator(0.0, [1.0], 0.0, [0.0]))
    plan = solve_mpc(prob, LIMITS)
    np.testing.assert_allclose(plan.L, [80, 80, 140])
    np.testing.assert_array_equal(plan.x, [92, 116, 140])
    assert round_first_action(plan, 100, LIMITS) == -8


def test_round_first_action_examples():
    plan = MpcPlan(x=np.array([123.2]), u=np.array([23.2]), m=np.zeros(1), L=np.zeros(1), x0=100)
    assert round_first_action(plan, 100, LIMITS) == 24
    plan.x = np.array([131.0])
    assert round_first_action(plan, 100, LIMITS) == 24
    plan.x = np.array([117.0])
    assert round_first_action(plan, 100, LIMITS) == 17
    plan.x = np.array([100.0])
    assert round_first_action(plan, 100, LIMITS) == 0
    plan.x = np.array([100.0 + 1e-12])
    assert round_first_action(plan, 100, LIMITS) == 0
    plan.x = np.array([60.0])
    assert round_first_action(plan, 90, LIMITS) == -10  # clamped to x_min


def test_ceil_tol():
    assert ceil_tol(3.0) == 3 and ceil_tol(3.0000000001) == 3 and ceil_tol(3.01) == 4 and ceil_tol(-0.5) == 0


def test_problem_validation():
    est = CpuEstimator(0.1, [0.001], 0.0, [0.0])
    with pytest.raises(ConfigurationError):
        MpcProblem(100, [[1.0]], 0.5, 0.9, est)
    with pytest.raises(ConfigurationError):
        MpcProblem(100, [[1.0], [-1.0]], 0.5, 0.9, est)
    with pytest.raises(ConfigurationError):
        solve_mpc(MpcProblem(10, [[1.0], [1.0]], 0.5, 0.9, est), LIMITS)


def test_oracle_guard():
    prob, _ = _problem_for_L([90], 100)
    with pytest.raises(ConfigurationError):
        brute_force_oracle(prob, LIMITS)
    prob, _ = _problem_for_L([90] * 5, 100)
    with pytest.raises(ConfigurationError):
        brute_force_oracle(prob, ScalingLimits(30, 5, 4, 80, 120))


def random_instance(rng):
    """Random problem within the oracle guards (D <= 4, node range <= 80)."""
    D = int(rng.integers(1, 5))
    x_min = int(rng.integers(1, 60))
    limits = ScalingLimits(h=int(rng.integers(5, 40)), tau=int(rng.integers(1, 6)), s=int(rng.integers(1, 5)),
                           x_min=x_min, x_max=x_min + int(rng.integers(0, 81)))
    n = int(rng.integers(1, 4))
    est = CpuEstimator(float(rng.uniform(0, 0.2)), rng.uniform(0, 0.01, n),
                       float(rng.uniform(0, 0.02)), rng.uniform(0, 0.001, n))
    alpha = float(rng.uniform(0.5, 0.99))
    c_star = float(rng.uniform(0.4, 0.8))
    # loads spread so bounds fall below, inside and above the node range
    target = rng.uniform(0, 1.3 * limits.x_max, D + 1)
    a = normal_quantile(alpha) * est.sigma_k + est.w_k
    den = c_star - est.w_b - normal_quantile(alpha) * est.sigma_b
    w = rng.dirichlet(np.ones(n))
    peaks = (target * den)[:, None] * w / np.maximum(a, 1e-12)
    x0 = int(rng.integers(limits.x_min, limits.x_max + 1))
    return MpcProblem(x0, peaks, c_star, alpha, est), limits


def test_solver_matches_oracle_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        prob, limits = random_instance(rng)
        plan = solve_mpc(prob, limits)
        oracle = brute_force_oracle(prob, limits)
        integer_x = np.array([ceil_tol(v) for v in plan.x], dtype=float)
        np.testing.assert_array_equal(integer_x, oracle.x)
        assert plan.softened_intervals == oracle.softened_intervals
        assert plan.feasible == oracle.feasible


@given(st.integers(0, 2**32 - 1))
def test_plan_satisfies_constraints(seed):
    prob, limits = random_instance(np.random.default_rng(seed))
    plan = solve_mpc(prob, limits)
    R = limits.ramp
    np.testing.assert_allclose(plan.x, prob.x0 + np.cumsum(plan.u), atol=1e-9)
    assert np.all(np.abs(plan.u) <= R + 1e-9)
    assert np.all(plan.x >= limits.x_min - 1e-9) and np.all(plan.x <= limits.x_max + 1e-9)
    hard = [d for d in range(prob.D) if d + 1 not in plan.softened_intervals]
    assert np.all(plan.x[hard] >= plan.L[hard] - 1e-9)
    first = round_first_action(plan, prob.x0, limits)
    assert abs(first) <= R and limits.x_min <= prob.x0 + first <= limits.x_max


@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.floats(0.0, 200.0))
def test_plan_monotone_in_load(seed, d, bump):
    prob, limits = random_instance(np.random.default_rng(seed))
    d = min(d, prob.D)
    peaks = prob.peaks.copy()
    peaks[d] += bump / max(1.0, prob.peaks.shape[1])
    bigger = MpcProblem(prob.x0, peaks, prob.c_star, prob.alpha, prob.estimator)
    assert np.all(solve_mpc(bigger, limits).x >= solve_mpc(prob, limits).x - 1e-9)


def test_plan_export():
    prob, _ = _problem_for_L([150, 120], 100)
    d = solve_mpc(prob, LIMITS).to_dict()
    assert d["x"] == [124.0, 120.0] and d["softened_intervals"] == [1] and d["feasible"] is True
