import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, strategies as st

from autoscale_lab.estimator import (
    SIGMA_FLOOR,
    CpuEstimator,
    DegenerateDesignError,
    FeedbackSample,
    init_mle,
    normal_quantile,
    olr_update,
    predict_mean,
    predict_std,
    upper_quantile,
)


def _samples(U, c, x=1):
    return [FeedbackSample(t, U[t] * x, x, float(c[t])) for t in range(len(c))]


# ---------------------------------------------------------------------------
# Normal quantile


def test_normal_quantile_anchors():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.9) == pytest.approx(1.2816, abs=1e-3)
    assert normal_quantile(0.95) == pytest.approx(1.6449, abs=1e-4)


@given(st.floats(1e-10, 1 - 1e-10))
def test_normal_quantile_matches_stdlib(alpha):
    assert normal_quantile(alpha) == pytest.approx(NormalDist().inv_cdf(alpha), rel=1e-9, abs=1e-9)


@given(st.floats(0.001, 0.998), st.floats(1e-4, 1e-3))
def test_normal_quantile_monotone(a, d):
    assert normal_quantile(a) < normal_quantile(min(a + d, 0.999))


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_normal_quantile_domain(alpha):
    with pytest.raises(ValueError):
        normal_quantile(alpha)


# ---------------------------------------------------------------------------
# Types and prediction


def test_feedback_sample_validation():
    with pytest.raises(ValueError):
        FeedbackSample(0, [1.0], 0, 0.5)
    with pytest.raises(ValueError):
        FeedbackSample(0, [1.0], 1, 1.2)
    np.testing.assert_array_equal(FeedbackSample(0, [4.0, 2.0], 2, 0.1).unit_workload, [2.0, 1.0])


def test_estimator_rejects_negative_parameters():
    with pytest.raises(ValueError):
        CpuEstimator(0.1, [-0.01], 0.01, [0.0])
    with pytest.raises(ValueError):
        CpuEstimator(0.1, [0.01], -0.01, [0.0])
    with pytest.raises(ValueError):
        CpuEstimator(0.1, [0.01, 0.0], 0.01, [0.0])


def test_predict_mean_examples():
    est = CpuEstimator(0.1, [0.001], 0.0, [0.0])
    assert predict_mean(est, [200], 2) == pytest.approx(0.2)
    assert predict_mean(est, [0], 5) == 0.1
    wl = predict_mean(est, [300], 3) - 0.1
    assert predict_mean(est, [300], 6) - 0.1 == pytest.approx(wl / 2, rel=1e-15)
    with pytest.raises(ValueError):
        predict_mean(est, [200], 0)


def test_predict_std_examples():
    est = CpuEstimator(0.1, [0.001], 0.02, [0.0001])
    assert predict_std(est, [100], 1) == pytest.approx(0.03)
    assert predict_std(est, [0], 4) == 0.02
    with pytest.raises(ValueError):
        predict_std(est, [1], 0)


@given(st.lists(st.floats(0, 1e4), min_size=2, max_size=2), st.integers(0, 1), st.floats(0, 1e3))
def test_predict_std_monotone_in_workload(y, i, bump):
    est = CpuEstimator(0.1, [0.001, 0.002], 0.02, [0.0001, 0.0003])
    y2 = list(y)
    y2[i] += bump
    assert predict_std(est, y2, 3) >= predict_std(est, y, 3)


def test_upper_quantile():
    est = CpuEstimator(0.1, [0.001], 0.02, [0.0001])
    assert upper_quantile(est, [100], 1, 0.5) == predict_mean(est, [100], 1)
    assert upper_quantile(est, [100], 1, 0.9) == pytest.approx(0.2 + 1.2816 * 0.03, abs=1e-3)
    qs = [upper_quantile(est, [100], 1, a) for a in (0.6, 0.8, 0.95, 0.99)]
    assert qs == sorted(qs) and len(set(qs)) == 4


def test_serialization_round_trip():
    est = CpuEstimator(0.1, [0.04, 0.05], 0.01, [0.001, 0.0])
    assert CpuEstimator.from_dict(est.to_dict()).to_dict() == est.to_dict()


# ---------------------------------------------------------------------------
# Online update


def test_olr_hand_example():
    est = CpuEstimator(0.0, [0.1], 0.01, [0.0])
    out = olr_update(est, [FeedbackSample(0, [2.0], 1, 0.3)], 2e-4)
    assert out.w_k[0] == pytest.approx(0.10004, abs=1e-12)
    assert (out.w_b, out.sigma_b) == (est.w_b, est.sigma_b)
    np.testing.assert_array_equal(out.sigma_k, est.sigma_k)


def test_olr_zero_error_fixed_point():
    est = CpuEstimator(0.1, [0.002, 0.001], 0.01, [0.0, 0.0])
    batch = [FeedbackSample(t, [100.0 * t, 50.0], 2, predict_mean(est, [100.0 * t, 50.0], 2)) for t in range(5)]
    np.testing.assert_allclose(olr_update(est, batch, 1e-3).w_k, est.w_k, atol=1e-18)


def test_olr_eta_zero_is_frozen():
    est = CpuEstimator(0.1, [0.002], 0.01, [0.0])
    assert olr_update(est, [FeedbackSample(0, [10.0], 1, 0.9)], 0.0) is est
    with pytest.raises(ValueError):
        olr_update(est, [], -1e-4)


def test_olr_processes_in_time_order():
    est = CpuEstimator(0.0, [0.1], 0.0, [0.0])
    a = FeedbackSample(1, [2.0], 1, 0.5)
    b = FeedbackSample(2, [3.0], 1, 0.1)
    assert olr_update(est, [b, a], 1e-2).w_k[0] == olr_update(olr_update(est, [a], 1e-2), [b], 1e-2).w_k[0]


def test_olr_clamps_at_zero():
    est = CpuEstimator(0.5, [0.001], 0.0, [0.0])
    out = olr_update(est, [FeedbackSample(0, [100.0], 1, 0.0)], 1.0)
    assert out.w_k[0] == 0.0


@given(st.integers(0, 2**31), st.integers(1, 5))
def test_olr_replay_is_descent(seed, reps):
    rng = np.random.default_rng(seed)
    U = rng.uniform(0, 3, (20, 2))
    c = np.clip(0.1 + U @ [0.05, 0.08] + 0.01 * rng.standard_normal(20), 0, 1)
    batch = _samples(U, c)
    est = CpuEstimator(0.1, [0.01, 0.01], 0.01, [0.0, 0.0])

    def sq(e):
        return float(np.sum((e.w_b + U @ e.w_k - c) ** 2))

    cur = est
    losses = [sq(cur)]
    for _ in range(reps):
        cur = olr_update(cur, batch, 1e-3)
        losses.append(sq(cur))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_olr_tracks_drift_better_than_frozen():
    rng = np.random.default_rng(2)
    U = rng.uniform(0, 5, (4000, 1))
    w_true = 0.05 * (1 + 0.2 * np.arange(4000) / 4000)
    c = np.clip(0.1 + U[:, 0] * w_true + 0.005 * rng.standard_normal(4000), 0, 1)
    frozen = CpuEstimator(0.1, [0.05], 0.005, [0.0])
    est, err_olr, err_frozen = frozen, 0.0, 0.0
    for t in range(4000):
        s = FeedbackSample(t, U[t], 1, float(c[t]))
        err_olr += (predict_mean(est, s.y, 1) - s.c) ** 2
        err_frozen += (predict_mean(frozen, s.y, 1) - s.c) ** 2
        est = olr_update(est, [s], 5e-3)
    assert err_olr < err_frozen
    assert np.all(est.w_k >= 0)


# ---------------------------------------------------------------------------
# Maximum-likelihood initialization


def test_mle_noiseless_recovery():
    u = np.linspace(0, 100, 60)[:, None]
    c = 0.1 + 0.002 * u[:, 0]
    est = init_mle(_samples(u, c, x=3))
    assert est.w_b == pytest.approx(0.1, abs=1e-6)
    assert est.w_k[0] == pytest.approx(0.002, abs=1e-6)
    assert est.sigma_b == SIGMA_FLOOR and est.sigma_k[0] == 0.0


def test_mle_sigma_monte_carlo():
    rng = np.random.default_rng(20240501)
    n = 50_000
    u = rng.uniform(0, 60, (n, 1))
    sd = 0.01 + 0.0005 * u[:, 0]
    c = 0.1 + 0.002 * u[:, 0] + sd * rng.standard_normal(n)
    assert c.min() >= 0 and c.max() <= 1
    est = init_mle(_samples(u, c))
    assert est.w_b == pytest.approx(0.1, rel=0.05)
    assert est.w_k[0] == pytest.approx(0.002, rel=0.05)
    assert est.sigma_b == pytest.approx(0.01, rel=0.1)
    assert est.sigma_k[0] == pytest.approx(0.0005, rel=0.1)


def test_mle_multi_lra():
    rng = np.random.default_rng(5)
    U = rng.uniform(0, 10, (3000, 2))
    c = 0.05 + U @ [0.01, 0.03] + (0.002 + U @ [0.0005, 0.001]) * rng.standard_normal(3000)
    est = init_mle(_samples(U, np.clip(c, 0, 1)))
    np.testing.assert_allclose(est.w_k, [0.01, 0.03], rtol=0.05)
    np.testing.assert_allclose(est.sigma_k, [0.0005, 0.001], rtol=0.15)


def test_mle_all_zero_workloads():
    c = np.array([0.2, 0.3, 0.25, 0.35, 0.4])
    est = init_mle(_samples(np.zeros((5, 2)), c))
    assert est.w_b == pytest.approx(c.mean())
    np.testing.assert_array_equal(est.w_k, 0.0)


def test_mle_negative_slope_clamped():
    u = np.linspace(0, 10, 40)[:, None]
    est = init_mle(_samples(u, 0.5 - 0.01 * u[:, 0]))
    assert est.w_k[0] == 0.0
    assert est.w_b == pytest.approx(np.mean(0.5 - 0.01 * u[:, 0]))


def test_mle_negative_intercept_clamped():
    u = np.linspace(1, 10, 40)[:, None]
    c = np.clip(-0.05 + 0.05 * u[:, 0], 0, 1)
    est = init_mle(_samples(u, c))
    assert est.w_b == 0.0 and est.w_k[0] > 0


def test_mle_degenerate_designs():
    with pytest.raises(DegenerateDesignError):
        init_mle([])
    with pytest.raises(DegenerateDesignError):
        init_mle(_samples(np.ones((2, 1)), [0.1, 0.2]))
    U = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(DegenerateDesignError):
        init_mle(_samples(U, 0.1 + 0.01 * np.arange(10)))


@given(st.integers(0, 2**31))
def test_mle_parameters_non_negative(seed):
    rng = np.random.default_rng(seed)
    U = rng.uniform(0, 5, (40, 2))
    c = rng.uniform(0, 1, 40)
    est = init_mle(_samples(U, c))
    assert np.all(est.w_k >= 0) and np.all(est.sigma_k >= 0) and est.sigma_b >= SIGMA_FLOOR
    assert math.isfinite(est.w_b)
