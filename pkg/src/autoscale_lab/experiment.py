"""Build a scenario from an :class:`ExperimentConfig` and run scalers on it.

A scenario fixes everything except the CPU noise: the workload traces, the
trained forecaster, the initial estimator and the ground-truth template.
Repetition ``r`` draws its noise from ``derive_seed(seed, "cpu/r")``, so every
scaler sees the same noise in the same repetition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig, derive_seed
from .estimator import CpuEstimator, init_mle
from .forecast.model import (
    ForecastModel,
    OracleForecaster,
    RollingForecaster,
    SeasonalNaiveForecaster,
    TrainConfig,
    new_model,
    train,
)
from .scalers import ScalerConfig, make_scaler
from .sim import GroundTruth, SimResult, initial_nodes, run_experiment, warmup_feedback
from .trace import TraceSet, inject_spike, load_traces, synthesize_traceset

log = logging.getLogger(__name__)


def build_traces(cfg: ExperimentConfig) -> TraceSet:
    tc = cfg.traces
    if tc.source == "file":
        return load_traces(tc.path)
    specs = {name: tc.synth_spec(name, derive_seed(cfg.seed, f"trace/{name}")) for name in tc.lras}
    return synthesize_traceset(specs, tc.start_minute, tc.length)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    m = cfg.model
    return TrainConfig(epochs=m.epochs, lr=m.lr, batch_size=m.batch_size, stride=m.stride,
                       clip_norm=m.clip_norm, optimizer=m.optimizer, seed=derive_seed(cfg.seed, "train"))


def train_model(cfg: ExperimentConfig, ts: TraceSet) -> ForecastModel:
    m = cfg.model
    start = ts.start_minute
    base = new_model(ts.n, C=m.C, H=m.H, d_model=m.d_model, q=m.q, periods=m.periods, order=m.orders,
                     seed=derive_seed(cfg.seed, "init"))
    return train(base, ts.slice(start, start + cfg.train_minutes), train_config(cfg))


@dataclass
class Scenario:
    config: ExperimentConfig
    traces: TraceSet
    model: ForecastModel | None
    estimator: CpuEstimator
    truth: GroundTruth  # template; the seed is set per repetition
    train_end: int
    eval_start: int
    eval_end: int
    forecaster: object | None = None

    @property
    def limits(self):
        return self.config.limits


def eval_window(cfg: ExperimentConfig, ts: TraceSet) -> tuple[int, int]:
    """Evaluation span, truncated so the last decision still has ``D+1`` intervals of trace."""
    start = ts.start_minute + cfg.train_minutes
    end = min(start + cfg.eval_minutes, ts.end_minute - cfg.max_D * cfg.limits.h)
    if end - start < cfg.limits.h:
        raise ValueError(f"evaluation window [{start}, {end}) shorter than one interval")
    return start, end


def initial_estimator(cfg: ExperimentConfig, ts: TraceSet, train_end: int) -> tuple[CpuEstimator, GroundTruth]:
    """Estimator handed to the scalers and the base ground truth it is derived from."""
    g = cfg.ground_truth
    base = GroundTruth(g.w_b, np.array(g.w_k), g.sigma_b, np.array(g.sigma_k),
                       seed=derive_seed(cfg.seed, "warmup/noise"))
    if not g.fit:
        return base.as_estimator(), base
    lo = max(ts.start_minute, train_end - int(round(g.warmup_days * 1440)))
    samples = warmup_feedback(ts, base, lo, train_end, cfg.limits, derive_seed(cfg.seed, "warmup/nodes"))
    return init_mle(samples), base


def make_forecaster(cfg: ExperimentConfig, ts: TraceSet, model: ForecastModel | None, train_end: int):
    if cfg.forecaster == "oracle":
        return OracleForecaster(ts)
    if cfg.forecaster == "naive":
        return SeasonalNaiveForecaster(ts)
    m = cfg.model
    return RollingForecaster(model, ts, trained_until=train_end, retrain_every=m.retrain_every,
                             retrain_epochs=m.retrain_epochs, train_config=train_config(cfg),
                             train_start=ts.start_minute)


def build_scenario(cfg: ExperimentConfig, model: ForecastModel | None = None,
                   traces: TraceSet | None = None) -> Scenario:
    ts = traces if traces is not None else build_traces(cfg)
    if cfg.ground_truth and ts.n != len(cfg.ground_truth.w_k):
        raise ValueError(f"ground truth has {len(cfg.ground_truth.w_k)} LRAs, traces have {ts.n}")
    train_end = ts.start_minute + cfg.train_minutes
    eval_start, eval_end = eval_window(cfg, ts)
    if cfg.forecaster == "model" and model is None:
        model = train_model(cfg, ts)
    if model is not None and model.n != ts.n:
        raise ValueError(f"model has {model.n} LRAs, traces have {ts.n}")
    est, _ = initial_estimator(cfg, ts, train_end)
    g = cfg.ground_truth
    truth = GroundTruth.from_estimator(est, perturb=g.perturb, gamma=g.gamma, drift_period=g.drift_period,
                                       drift_start=eval_start + g.drift_offset)
    if cfg.spike is not None:
        sp = cfg.spike
        ts = inject_spike(ts, eval_start + sp.offset, sp.duration, sp.factor, sp.lras)
    scn = Scenario(cfg, ts, model, est, truth, train_end, eval_start, eval_end)
    scn.forecaster = make_forecaster(cfg, ts, model, train_end)
    return scn


def with_config(scn: Scenario, cfg: ExperimentConfig) -> Scenario:
    """Same traces and model under a different config; spikes and forecasters are rebuilt."""
    base_ts = scn.traces
    if scn.config.spike is not None:
        base_ts = build_traces(scn.config)
    return build_scenario(cfg, model=scn.model, traces=base_ts)


def repeat_seed(cfg: ExperimentConfig, r: int) -> int:
    return derive_seed(cfg.seed, f"cpu/{r}")


def run_scaler(scn: Scenario, sc: ScalerConfig, repeat: int = 0) -> SimResult:
    cfg = scn.config
    truth = replace(scn.truth, seed=repeat_seed(cfg, repeat))
    scaler = make_scaler(sc, cfg.limits, cfg.c_star, scn.estimator, scn.forecaster)
    x0 = initial_nodes(scn.estimator, scn.traces.at(scn.eval_start - 1), cfg.c_star, sc.alpha, cfg.limits)
    echo = {"experiment": cfg.to_dict(), "scaler": sc.to_dict(), "label": sc.label, "repeat": repeat,
            "eval_window": [scn.eval_start, scn.eval_end], "ground_truth": truth.to_dict(),
            "initial_estimator": scn.estimator.to_dict(), "x0": x0}
    res = run_experiment(scn.traces, scaler, cfg.limits, truth, scn.eval_start, scn.eval_end,
                         cfg.c_star, x0, config=echo)
    est = getattr(scaler, "estimator", None)
    res.config["final_estimator"] = est.to_dict() if est is not None else None
    return res


def run_all(scn: Scenario, repeats: int | None = None) -> dict[str, list[SimResult]]:
    """Every configured scaler for every repetition, keyed by scaler label."""
    n = scn.config.repeats if repeats is None else repeats
    out: dict[str, list[SimResult]] = {}
    for sc in scn.config.scalers:
        out[sc.label] = [run_scaler(scn, sc, r) for r in range(n)]
    return out
