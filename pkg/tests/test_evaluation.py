import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from autoscale_lab.config import load_config
from autoscale_lab.evaluation import (
    SWEEP_COLUMNS,
    CompareRow,
    SloMetrics,
    combine_segments,
    compare_rows,
    count_inversions,
    ecdf_ae_norm,
    format_compare,
    interval_peak_wape,
    mean_metrics,
    one_step_sq_error,
    rolling_forecast,
    s_vr_reduction,
    slo_metrics,
    sweep,
    sweep_config,
    wape,
    wape_detail,
    write_compare_csv,
    write_sweep_csv,
)
from autoscale_lab.experiment import build_scenario, run_scaler
from autoscale_lab.forecast.model import OracleForecaster, SeasonalNaiveForecaster
from autoscale_lab.scalers import ScalerConfig
from autoscale_lab.sim import SimResult
from autoscale_lab.trace import TraceSet


def _result(cpu, x=None):
    cpu = np.asarray(cpu, dtype=float)
    n = cpu.size
    x = np.full(n, 100) if x is None else np.asarray(x)
    return SimResult(np.arange(n), x, cpu, cpu > 0.5, np.zeros(n, int), np.zeros(n, bool), [""] * n,
                     np.full(n, np.nan), np.zeros(n, bool), np.zeros((1, n)))


# ---------------------------------------------------------------------------
# Forecast metrics


def test_wape_examples():
    assert wape([10.0, 20.0], [10.0, 20.0]) == 0.0
    assert wape([10.0, 20.0], [12.0, 18.0]) == pytest.approx(4 / 30)
    assert wape([[10.0, 10.0], [10.0, 10.0]], [[11.0, 9.0], [13.0, 7.0]]) == pytest.approx(0.2)


def test_wape_excludes_zero_series():
    res = wape_detail([[0.0, 0.0], [10.0, 20.0]], [[1.0, 1.0], [12.0, 18.0]])
    assert res.excluded == (0,) and res.value == pytest.approx(4 / 30)
    with pytest.raises(ValueError):
        wape([[0.0, 0.0]], [[1.0, 1.0]])
    with pytest.raises(ValueError):
        wape([1.0, 2.0], [1.0])


@given(hnp.arrays(float, (2, 12), elements=st.floats(0.1, 1e3)),
       hnp.arrays(float, (2, 12), elements=st.floats(0, 1e3)), st.floats(1e-3, 1e3))
def test_wape_scale_invariant(y, yhat, k):
    assert wape(k * y, k * yhat) == pytest.approx(wape(y, yhat), rel=1e-9)


def test_interval_peak_wape_cases():
    y = np.array([[1.0, 5.0, 2.0, 4.0]])
    assert interval_peak_wape(y, y, 2, 1) == 0.0
    # right peaks, wrong elsewhere
    p = np.array([[3.0, 5.0, 4.0, 0.0]])
    assert interval_peak_wape(y, p, 2, 1) == 0.0 and wape(y, p) > 0
    # peaks (5, 4) vs (6, 2): (1 + 2) / 9
    assert interval_peak_wape(y, np.array([[6.0, 0.0, 2.0, 1.0]]), 2, 1) == pytest.approx(3 / 9)


def test_ecdf_examples():
    pts = ecdf_ae_norm([0.0, 0.0, 0.0], [1.0, 2.0, 4.0])
    assert [v for v, _ in pts] == [0.25, 0.5, 1.0]
    np.testing.assert_allclose([c for _, c in pts], [1 / 3, 2 / 3, 1.0])
    assert ecdf_ae_norm([1.0, 2.0], [1.0, 2.0]) == [(0.0, 1.0)]


@given(hnp.arrays(float, (3, 10), elements=st.floats(0, 100)), hnp.arrays(float, (3, 10), elements=st.floats(0, 100)))
def test_ecdf_is_a_cdf(y, yhat):
    pts = ecdf_ae_norm(y, yhat)
    vals, cum = zip(*pts)
    assert list(vals) == sorted(vals) and list(cum) == sorted(cum)
    assert cum[-1] == pytest.approx(1.0) and 0 <= vals[0] and vals[-1] <= 1.0


def test_rolling_forecast_protocol():
    ts = TraceSet.from_matrix(["a"], 0, np.arange(1.0, 3001.0)[None])
    rf = rolling_forecast(OracleForecaster(ts), ts, 1000, 2000, 30, horizon=360)
    np.testing.assert_array_equal(rf.origins, np.arange(999, 1640, 30))
    assert rf.predictions.shape == (1, rf.origins.size, 360)
    m = rf.metrics(30)
    assert m["wape"] == 0.0 and m["interval_peak_wape"] == 0.0 and m["windows"] == 22
    naive = rolling_forecast(SeasonalNaiveForecaster(ts), ts, 2000, 2800, 30, horizon=360).metrics(30)
    assert naive["wape"] > 0
    with pytest.raises(ValueError):
        rolling_forecast(OracleForecaster(ts), ts, 1000, 1200, 30, horizon=360)


# ---------------------------------------------------------------------------
# SLO metrics


def test_slo_examples():
    m = slo_metrics(_result([0.4, 0.6]), 0.5)
    assert m.s_vr == 50.0 and m.v_sum == pytest.approx(0.1) and m.r_avg == 100
    m = slo_metrics(_result([0.1, 0.5, 0.3]), 0.5)
    assert m.s_vr == 0 and m.v_sum == 0
    assert SloMetrics(12.345, 0.12345, 101.26, 10).rounded() == {"s_vr": 12.3, "v_sum": 0.123, "r_avg": 101.3}


@given(hnp.arrays(float, 40, elements=st.floats(0, 1)), st.integers(1, 39))
def test_slo_additivity(cpu, cut):
    x = np.arange(80, 120)
    whole = slo_metrics(_result(cpu, x), 0.5)
    res = _result(cpu, x)
    parts = [slo_metrics(res.segment(0, cut), 0.5), slo_metrics(res.segment(cut, 40), 0.5)]
    comb = combine_segments(parts)
    assert comb.minutes == whole.minutes
    assert comb.s_vr == pytest.approx(whole.s_vr) and comb.r_avg == pytest.approx(whole.r_avg)
    assert comb.v_sum == pytest.approx(whole.v_sum, abs=1e-12)


def test_mean_metrics_and_errors():
    m = mean_metrics([SloMetrics(10, 1, 100, 5), SloMetrics(20, 3, 110, 5)])
    assert (m.s_vr, m.v_sum, m.r_avg) == (15, 2, 105)
    with pytest.raises(ValueError):
        mean_metrics([])
    with pytest.raises(ValueError):
        slo_metrics(_result([]), 0.5)
    with pytest.raises(ValueError):
        one_step_sq_error(_result([0.2]))


def test_one_step_error():
    res = _result([0.2, 0.4, 0.6])
    res.cpu_pred = np.array([0.1, 0.4, 0.3])
    assert one_step_sq_error(res) == pytest.approx(0.01 + 0.09)
    assert one_step_sq_error(res, start=1) == pytest.approx(0.09)


def test_compare_table(tmp_path):
    scalers = [ScalerConfig(kind="has", D=11), ScalerConfig(kind="optscaler", D=11), ScalerConfig(kind="autopilot")]
    results = {scalers[0].label: [_result([0.6, 0.4, 0.6, 0.4])],
               scalers[1].label: [_result([0.6, 0.4, 0.4, 0.4]), _result([0.4] * 4)],
               scalers[2].label: [_result([0.6] * 4)]}
    rows = compare_rows(results, scalers, 0.5)
    assert [r.metrics.s_vr for r in rows] == [50.0, 12.5, 100.0]
    assert rows[1].runs == 2 and rows[1].param == "D=11,eta=0.0002" and rows[2].param == "S=0.9"
    red = s_vr_reduction(rows)
    assert red == {"D": 11, "optscaler": 12.5, "has": 50.0, "reduction_pct": 75.0}
    assert "optscaler" in format_compare(rows)
    write_compare_csv(rows, tmp_path / "c.csv")
    assert len(list(csv.reader(open(tmp_path / "c.csv")))) == 4
    assert s_vr_reduction(rows[2:]) is None


def test_count_inversions():
    assert count_inversions([5, 4, 4, 3], increasing=False) == 0
    assert count_inversions([5, 6, 4, 3], increasing=False) == 1
    assert count_inversions([1, 2, 1, 3], increasing=True) == 1


# ---------------------------------------------------------------------------
# Sweeps


@pytest.fixture(scope="module")
def oracle_base():
    return load_config(None, {"forecaster": "oracle", "eval_days": 0.5, "repeats": 1})


def test_sweep_config_axes(oracle_base):
    assert sweep_config(oracle_base, "eta", 1e-4).scalers[0].eta == 1e-4
    assert sweep_config(oracle_base, "D", 3).scalers[0].D == 3
    assert sweep_config(oracle_base, "h", 60).limits.h == 60
    assert sweep_config(oracle_base, "spike", 60).spike.duration == 60
    pc = sweep_config(oracle_base, "percentile", 0.8).scalers[0]
    assert pc.kind == "autopilot" and pc.percentile == 0.8
    with pytest.raises(ValueError):
        sweep_config(oracle_base, "alpha", 0.9)


def test_single_value_sweep_equals_direct_run(oracle_base, tmp_path):
    rows = sweep("eta", [2e-4], oracle_base, repeats=1)
    cfg = sweep_config(oracle_base, "eta", 2e-4)
    direct = slo_metrics(run_scaler(build_scenario(cfg), cfg.scalers[0], 0), cfg.c_star)
    assert rows[0].metrics.to_dict() == direct.to_dict()
    assert rows[0].s_vr_norm == 100.0
    assert rows[0].r_avg_norm == 100.0
    write_sweep_csv(rows, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS) and len(lines) == 2


def test_sweep_reference_normalization_and_reproducibility(oracle_base):
    scn = build_scenario(sweep_config(oracle_base, "eta", 0.0))
    a = sweep("eta", [0.0, 2e-4, 5e-3], oracle_base, scenario=scn)
    b = sweep("eta", [0.0, 2e-4, 5e-3], oracle_base, scenario=scn)
    assert [r.metrics for r in a] == [r.metrics for r in b]
    ref = a[1]
    assert ref.r_avg_norm == 100.0
    assert a[0].r_avg_norm == pytest.approx(100 * a[0].metrics.r_avg / ref.metrics.r_avg)
    with pytest.raises(ValueError):
        sweep("eta", [0.0], oracle_base, reference=1.0)
    with pytest.raises(ValueError):
        sweep("eta", [], oracle_base)
