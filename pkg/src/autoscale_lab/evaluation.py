"""Forecast and autoscaling metrics, and parameter sweeps over the benchmark.

Forecast metrics take arrays whose first axis indexes the LRA; every other
axis is pooled.  Autoscaling metrics are computed per minute from a
:class:`~autoscale_lab.sim.SimResult`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, SpikeConfig
from .experiment import build_scenario, run_scaler, with_config
from .forecast.model import interval_peaks
from .scalers import ScalerConfig
from .sim import SimResult

SWEEP_AXES = ("eta", "D", "h", "spike", "percentile")
SWEEP_COLUMNS = ("axis_value", "seed_count", "s_vr", "v_sum", "r_avg", "s_vr_norm", "r_avg_norm")


# ---------------------------------------------------------------------------
# Forecast accuracy


@dataclass(frozen=True)
class WapeResult:
    value: float
    per_series: tuple
    excluded: tuple  # series indices whose actuals sum to zero


def wape_detail(actuals, predictions) -> WapeResult:
    """Per-series ``sum|y - yhat| / sum|y|`` averaged over series with a positive denominator."""
    a = np.asarray(actuals, dtype=float)
    p = np.asarray(predictions, dtype=float)
    if a.shape != p.shape:
        raise ValueError(f"shape mismatch: actuals {a.shape}, predictions {p.shape}")
    if a.size == 0:
        raise ValueError("empty evaluation set")
    if a.ndim == 1:
        a, p = a[None], p[None]
    a = a.reshape(a.shape[0], -1)
    p = p.reshape(p.shape[0], -1)
    den = np.abs(a).sum(axis=1)
    num = np.abs(a - p).sum(axis=1)
    keep = den > 0
    if not keep.any():
        raise ValueError("every series has zero actual workload; WAPE undefined")
    per = tuple(float(v) for v in num[keep] / den[keep])
    return WapeResult(float(np.mean(per)), per, tuple(int(i) for i in np.flatnonzero(~keep)))


def wape(actuals, predictions) -> float:
    return wape_detail(actuals, predictions).value


def interval_peak_wape(actuals, predictions, h: int, D: int) -> float:
    """WAPE between the per-interval peak sequences of actuals and predictions.

    Inputs are ``(N, T)`` or ``(N, W, T)`` (rolling windows) with ``T >= (D+1) h``.
    """
    a = np.asarray(actuals, dtype=float)
    p = np.asarray(predictions, dtype=float)
    if a.ndim == 1:
        a, p = a[None], p[None]
    return wape(_peaks(a, h, D), _peaks(p, h, D))


def _peaks(v: np.ndarray, h: int, D: int) -> np.ndarray:
    out = interval_peaks(v, h, D)
    return out.T if v.ndim == 2 else out


def ecdf_ae_norm(actuals, predictions) -> list[tuple[float, float]]:
    """ECDF of absolute errors normalized by each series' maximum absolute error.

    Returns sorted ``(value, cumulative fraction)`` pairs, one per distinct
    value; a perfect prediction gives the single point ``(0, 1)``.
    """
    a = np.asarray(actuals, dtype=float)
    p = np.asarray(predictions, dtype=float)
    if a.shape != p.shape:
        raise ValueError(f"shape mismatch: actuals {a.shape}, predictions {p.shape}")
    if a.ndim == 1:
        a, p = a[None], p[None]
    err = np.abs(a - p).reshape(a.shape[0], -1)
    peak = err.max(axis=1, keepdims=True)
    norm = np.divide(err, peak, out=np.zeros_like(err), where=peak > 0).ravel()
    if norm.size == 0:
        raise ValueError("empty evaluation set")
    values, counts = np.unique(norm, return_counts=True)
    cum = np.cumsum(counts) / norm.size
    return [(float(v), float(c)) for v, c in zip(values, cum)]


@dataclass
class RollingForecast:
    """Forecasts issued every ``h`` minutes; ``predictions[n, w, k]`` targets ``origins[w] + 1 + k``."""

    origins: np.ndarray
    predictions: np.ndarray  # (N, W, horizon)
    actuals: np.ndarray  # (N, W, horizon)

    def metrics(self, h: int) -> dict:
        D = self.predictions.shape[-1] // h - 1
        out = {"windows": int(self.origins.size), "horizon": int(self.predictions.shape[-1]),
               "wape": wape(self.actuals, self.predictions)}
        if D >= 0:
            out["interval_peak_wape"] = interval_peak_wape(self.actuals, self.predictions, h, D)
        return out


def rolling_forecast(forecaster, ts, start: int, end: int, h: int, horizon: int = 360) -> RollingForecast:
    """Predict the next ``horizon`` minutes every ``h`` minutes.

    The first origin is ``start - 1`` and windows are kept while their
    targets stay inside ``[start, end)``.
    """
    origins = np.arange(start - 1, end - horizon, h)
    if origins.size == 0:
        raise ValueError(f"span [{start}, {end}) holds no {horizon}-minute forecast window")
    preds = np.stack([forecaster.forecast(int(o), horizon) for o in origins], axis=1)
    acts = np.stack([ts.window(int(o) + 1, int(o) + 1 + horizon) for o in origins], axis=1)
    return RollingForecast(origins, preds, acts)


# ---------------------------------------------------------------------------
# Autoscaling metrics


@dataclass(frozen=True)
class SloMetrics:
    s_vr: float  # percent of minutes above c_star
    v_sum: float
    r_avg: float
    minutes: int

    def to_dict(self) -> dict:
        return asdict(self)

    def rounded(self) -> dict:
        """Report precision: S_vr to 0.1 percentage points."""
        return {"s_vr": round(self.s_vr, 1), "v_sum": round(self.v_sum, 3), "r_avg": round(self.r_avg, 1)}


def slo_metrics(result: SimResult, c_star: float) -> SloMetrics:
    n = len(result)
    if n == 0:
        raise ValueError("empty simulation result")
    cpu = np.asarray(result.cpu, dtype=float)
    return SloMetrics(
        s_vr=100.0 * float(np.count_nonzero(cpu > c_star)) / n,
        v_sum=float(np.maximum(cpu - c_star, 0.0).sum()),
        r_avg=float(np.mean(result.x)),
        minutes=n,
    )


def combine_segments(parts: Sequence[SloMetrics]) -> SloMetrics:
    """Metrics of the concatenated run from per-segment metrics."""
    n = sum(p.minutes for p in parts)
    if n == 0:
        raise ValueError("no minutes to combine")
    return SloMetrics(
        s_vr=sum(p.s_vr * p.minutes for p in parts) / n,
        v_sum=sum(p.v_sum for p in parts),
        r_avg=sum(p.r_avg * p.minutes for p in parts) / n,
        minutes=n,
    )


def mean_metrics(parts: Sequence[SloMetrics]) -> SloMetrics:
    """Unweighted average over repetitions."""
    if not parts:
        raise ValueError("no runs to average")
    return SloMetrics(
        s_vr=float(np.mean([p.s_vr for p in parts])),
        v_sum=float(np.mean([p.v_sum for p in parts])),
        r_avg=float(np.mean([p.r_avg for p in parts])),
        minutes=int(parts[0].minutes),
    )


def one_step_sq_error(result: SimResult, start: int | None = None) -> float:
    """Cumulative ``(cpu_pred - cpu)^2`` over minutes ``>= start``."""
    sel = np.ones(len(result), dtype=bool) if start is None else result.minutes >= start
    d = result.cpu_pred[sel] - result.cpu[sel]
    if np.isnan(d).any():
        raise ValueError("scaler produced no CPU predictions")
    return float(np.sum(d * d))


# ---------------------------------------------------------------------------
# Comparison tables


@dataclass(frozen=True)
class CompareRow:
    label: str
    kind: str
    param: str
    metrics: SloMetrics
    runs: int


def compare_rows(results: dict, scalers: Sequence[ScalerConfig], c_star: float) -> list[CompareRow]:
    rows = []
    for sc in scalers:
        runs = results[sc.label]
        m = mean_metrics([slo_metrics(r, c_star) for r in runs])
        param = f"S={sc.percentile:g}" if sc.kind == "autopilot" else f"D={sc.D}"
        if sc.kind == "optscaler":
            param += f",eta={sc.eta:g}"
        rows.append(CompareRow(sc.label, sc.kind, param, m, len(runs)))
    return rows


def s_vr_reduction(rows: Sequence[CompareRow], kind: str = "optscaler", baseline: str = "has") -> dict | None:
    """Percent S_vr reduction of ``kind`` against ``baseline`` at the largest shared horizon."""
    by_d = {}
    for r in rows:
        if r.kind in (kind, baseline):
            D = int(r.param.split(",")[0][2:])
            by_d.setdefault(D, {}).setdefault(r.kind, r)
    shared = sorted(D for D, v in by_d.items() if kind in v and baseline in v)
    if not shared:
        return None
    D = shared[-1]
    ours, base = by_d[D][kind].metrics.s_vr, by_d[D][baseline].metrics.s_vr
    pct = 100.0 * (base - ours) / base if base > 0 else (0.0 if ours == 0 else -math.inf)
    return {"D": D, kind: ours, baseline: base, "reduction_pct": pct}


def format_compare(rows: Sequence[CompareRow]) -> str:
    head = f"{'scaler':<12} {'param':<18} {'S_vr(%)':>8} {'V_sum':>9} {'R_avg':>8} {'runs':>5}"
    lines = [head, "-" * len(head)]
    for r in rows:
        m = r.metrics.rounded()
        lines.append(f"{r.kind:<12} {r.param:<18} {m['s_vr']:>8.1f} {m['v_sum']:>9.3f} {m['r_avg']:>8.1f} {r.runs:>5}")
    return "\n".join(lines)


def write_compare_csv(rows: Sequence[CompareRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label", "kind", "param", "runs", "s_vr", "v_sum", "r_avg"))
        for r in rows:
            w.writerow((r.label, r.kind, r.param, r.runs, repr(r.metrics.s_vr), repr(r.metrics.v_sum),
                        repr(r.metrics.r_avg)))


# ---------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class SweepRow:
    axis_value: float
    seed_count: int
    metrics: SloMetrics
    s_vr_norm: float
    r_avg_norm: float


def _sweep_scaler(cfg: ExperimentConfig, axis: str, scaler: ScalerConfig | None) -> ScalerConfig:
    if scaler is not None:
        return scaler
    want = "autopilot" if axis == "percentile" else "optscaler"
    picks = [s for s in cfg.scalers if s.kind == want]
    return picks[-1] if picks else ScalerConfig(kind=want)


def sweep_config(base: ExperimentConfig, axis: str, value, scaler: ScalerConfig | None = None) -> ExperimentConfig:
    """The experiment config for one sweep point; a single scaler is run."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    sc = _sweep_scaler(base, axis, scaler)
    cfg = base
    if axis == "eta":
        sc = replace(sc, eta=float(value))
    elif axis == "D":
        sc = replace(sc, D=int(value))
    elif axis == "percentile":
        sc = replace(sc, percentile=float(value))
    elif axis == "h":
        cfg = replace(cfg, limits=replace(cfg.limits, h=int(value)))
    elif axis == "spike":
        spike = base.spike or SpikeConfig()
        cfg = replace(cfg, spike=replace(spike, duration=int(value)))
    return cfg.with_scalers([sc])


def default_reference(axis: str, values: Sequence) -> float:
    if axis == "eta" and 2e-4 in [float(v) for v in values]:
        return 2e-4
    return float(values[0])


def sweep(axis: str, values: Sequence, base: ExperimentConfig, reference=None,
          scaler: ScalerConfig | None = None, repeats: int | None = None, scenario=None) -> list[SweepRow]:
    """One run per ``(value, repetition)``, averaged over repetitions.

    ``scenario`` (from :func:`~autoscale_lab.experiment.build_scenario` on
    ``base``) lets callers reuse a trained model; otherwise one is built.
    Normalized columns are percentages of the reference value's metrics.
    """
    if not values:
        raise ValueError("sweep needs at least one value")
    ref = default_reference(axis, values) if reference is None else float(reference)
    if ref not in [float(v) for v in values]:
        raise ValueError(f"reference value {ref!r} is not among the swept values")
    n = base.repeats if repeats is None else repeats
    if scenario is None:
        scenario = build_scenario(sweep_config(base, axis, values[0], scaler))
    raw = []
    for v in values:
        cfg = sweep_config(base, axis, v, scaler)
        scn = with_config(scenario, cfg)
        runs = [run_scaler(scn, cfg.scalers[0], r) for r in range(n)]
        raw.append((float(v), mean_metrics([slo_metrics(r, cfg.c_star) for r in runs])))
    ref_m = next(m for v, m in raw if v == ref)

    def pct(x, r):
        return 100.0 * (x / r) if r != 0 else (100.0 if x == 0 else math.inf)

    return [SweepRow(v, n, m, pct(m.s_vr, ref_m.s_vr), pct(m.r_avg, ref_m.r_avg)) for v, m in raw]


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow((repr(r.axis_value), r.seed_count, repr(r.metrics.s_vr), repr(r.metrics.v_sum),
                        repr(r.metrics.r_avg), repr(r.s_vr_norm), repr(r.r_avg_norm)))


def count_inversions(seq: Sequence[float], increasing: bool) -> int:
    """Adjacent pairs moving against the expected direction."""
    s = np.asarray(seq, dtype=float)
    d = np.diff(s)
    return int(np.count_nonzero(d < 0 if increasing else d > 0))


def write_json(obj, path) -> Path:
    p = Path(path)
    p.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")
    return p
