"""Autoscaler strategies behind one ``decide`` interface.

* :class:`OptScaler` - forecast peaks + online-corrected estimator + MPC.
* :class:`MaduScaler` - the same pipeline with the estimator frozen.
* :class:`HasScaler` - Madu's decision, overridden by a reactive rule when
  the observed utilization exceeds ``bound * c_star``.
* :class:`AutopilotScaler` - percentile of recent utilization, no forecast.

A scaler is called once per control interval with the feedback samples
observed since its previous call and returns a :class:`ScalerDecision`.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .estimator import CpuEstimator, FeedbackSample, olr_update, predict_mean
from .forecast.model import InsufficientHistoryError, interval_peaks
from .mpc import ConfigurationError, MpcProblem, ScalingLimits, ceil_tol, round_first_action, solve_mpc

KINDS = ("optscaler", "madu", "has", "autopilot")
HAS_AGGREGATES = ("max", "mean", "last")


class ForecastProvider(Protocol):
    def forecast(self, origin: int, horizon: int) -> np.ndarray: ...


@dataclass(frozen=True)
class ScalerDecision:
    t: int
    u: int
    x: int
    provenance: str
    audit: dict | None = None
    error: str | None = None

    @property
    def softened(self) -> bool:
        """True when the plan could not meet its first-interval bound."""
        return bool(self.audit) and 1 in self.audit.get("softened_intervals", ())


@dataclass(frozen=True)
class ScalerConfig:
    kind: str = "optscaler"
    D: int = 11
    alpha: float = 0.95
    eta: float = 2e-4
    percentile: float = 0.9
    window: int = 60
    has_bound: float = 0.9
    has_aggregate: str = "max"
    feedback_T: int | None = None  # OLR batch; None means the whole last interval

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown scaler kind {self.kind!r}; expected one of {KINDS}")
        if self.D < 1:
            raise ConfigurationError("D must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.eta < 0:
            raise ConfigurationError("eta must be non-negative")
        if not 0 < self.percentile < 1:
            raise ConfigurationError("autopilot percentile S must lie in (0, 1)")
        if self.window < 1:
            raise ConfigurationError("autopilot window must be >= 1 minute")
        if not 0 < self.has_bound <= 1:
            raise ConfigurationError("HAS bound factor must lie in (0, 1]")
        if self.has_aggregate not in HAS_AGGREGATES:
            raise ConfigurationError(f"HAS aggregate must be one of {HAS_AGGREGATES}")
        if self.feedback_T is not None and self.feedback_T < 1:
            raise ConfigurationError("feedback_T must be >= 1")

    @property
    def label(self) -> str:
        if self.kind == "autopilot":
            return f"autopilot[S={self.percentile:g}]"
        if self.kind == "optscaler":
            return f"optscaler[D={self.D},eta={self.eta:g}]"
        return f"{self.kind}[D={self.D}]"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown scaler config keys {sorted(unknown)}")
        return cls(**d)


def _hold(t: int, x: int, provenance: str, error: str) -> ScalerDecision:
    return ScalerDecision(t=t, u=0, x=x, provenance=provenance, error=error)


@dataclass
class OptScaler:
    """Collaborative pipeline: OLR update, forecast, interval peaks, MPC, rounding.

    Feedback samples with saturated utilization (``c >= 1``) are skipped by
    the OLR update: the clamp hides the true load there, and the error term
    would drag ``w_k`` towards zero exactly when demand is highest.
    """

    config: ScalerConfig
    limits: ScalingLimits
    c_star: float
    estimator: CpuEstimator
    forecaster: ForecastProvider
    provenance: str = "collaborative"
    n_updates: int = field(default=0, init=False)

    @property
    def eta(self) -> float:
        return self.config.eta

    def observe(self, feedback: Sequence[FeedbackSample]) -> None:
        if self.eta <= 0 or not feedback:
            return
        T = self.config.feedback_T or self.limits.h
        batch = [s for s in feedback[-T:] if s.c < 1.0]
        if batch:
            self.estimator = olr_update(self.estimator, batch, self.eta)
            self.n_updates += len(batch)

    def proactive(self, t: int, x: int) -> ScalerDecision:
        h, D = self.limits.h, self.config.D
        try:
            forecast = self.forecaster.forecast(t - 1, (D + 1) * h)
        except InsufficientHistoryError as exc:
            return _hold(t, x, self.provenance, f"insufficient forecast history: {exc}")
        peaks = interval_peaks(forecast, h, D)
        problem = MpcProblem(x0=x, peaks=peaks, c_star=self.c_star, alpha=self.config.alpha,
                             estimator=self.estimator)
        plan = solve_mpc(problem, self.limits)
        u = round_first_action(plan, x, self.limits)
        return ScalerDecision(t=t, u=u, x=x + u, provenance=self.provenance, audit=plan.to_dict())

    def decide(self, t: int, x: int, feedback: Sequence[FeedbackSample]) -> ScalerDecision:
        self.observe(feedback)
        return self.proactive(t, x)

    def predict_cpu(self, y, x) -> float:
        return predict_mean(self.estimator, y, x)


class MaduScaler(OptScaler):
    """Proactive only: the estimator is never updated after initialization."""

    def __init__(self, config, limits, c_star, estimator, forecaster):
        super().__init__(config, limits, c_star, estimator, forecaster, provenance="proactive")

    @property
    def eta(self) -> float:
        return 0.0


def has_reactive_delta(x_prev: int, c_prev: float, c_star: float, limits: ScalingLimits) -> int:
    """``max(X^min - x, min((c/c* - 1) x, R, X^max - x))`` rounded to the nearest integer.

    The result is additionally clamped to ``-R``: the formula bounds scale-up
    by the ramp limit but not scale-down.
    """
    R = limits.ramp
    raw = max(limits.x_min - x_prev, min((c_prev / c_star - 1.0) * x_prev, R, limits.x_max - x_prev))
    u = int(math.floor(raw + 0.5))
    return max(-R, min(R, u))


class HasScaler(MaduScaler):
    """Hybrid: Madu's proactive decision unless the last interval ran hot."""

    def aggregate(self, feedback: Sequence[FeedbackSample]) -> float | None:
        if not feedback:
            return None
        c = np.array([s.c for s in feedback[-self.limits.h:]])
        agg = self.config.has_aggregate
        return float(c.max() if agg == "max" else c.mean() if agg == "mean" else c[-1])

    def decide(self, t: int, x: int, feedback: Sequence[FeedbackSample]) -> ScalerDecision:
        proactive = self.proactive(t, x)
        c_prev = self.aggregate(feedback)
        if c_prev is None or not c_prev > self.config.has_bound * self.c_star:
            return proactive
        u = has_reactive_delta(x, c_prev, self.c_star, self.limits)
        u = self.limits.clamp(x + u) - x
        audit = {"observed_c": c_prev, "proactive_u": proactive.u}
        return ScalerDecision(t=t, u=u, x=x + u, provenance="reactive", audit=audit)


def nearest_rank_percentile(samples, S: float) -> float:
    """The ``ceil(S n)``-th smallest sample."""
    v = np.sort(np.asarray(samples, dtype=float))
    if v.size == 0:
        raise ValueError("empty sample window")
    rank = min(max(ceil_tol(S * v.size), 1), v.size)
    return float(v[rank - 1])


@dataclass
class AutopilotScaler:
    """Reactive: size the cluster so the S-th percentile of recent CPU meets ``c_star``."""

    config: ScalerConfig
    limits: ScalingLimits
    c_star: float
    provenance: str = "reactive"
    estimator: CpuEstimator | None = None
    _window: deque = field(default_factory=deque, init=False, repr=False)

    def __post_init__(self):
        self._window = deque(maxlen=self.config.window)

    def observe(self, feedback: Sequence[FeedbackSample]) -> None:
        self._window.extend(s.c for s in feedback)

    def decide(self, t: int, x: int, feedback: Sequence[FeedbackSample]) -> ScalerDecision:
        self.observe(feedback)
        return autopilot_decision(t, x, list(self._window), self.config.percentile, self.c_star, self.limits)

    def predict_cpu(self, y, x) -> float:
        return float("nan")


def autopilot_decision(t: int, x: int, window, S: float, c_star: float, limits: ScalingLimits) -> ScalerDecision:
    if len(window) == 0:
        return _hold(t, x, "reactive", "empty CPU window")
    c_hat = nearest_rank_percentile(window, S)
    target = ceil_tol(x * c_hat / c_star)
    R = limits.ramp
    u = max(-R, min(R, target - x))
    u = limits.clamp(x + u) - x
    return ScalerDecision(t=t, u=u, x=x + u, provenance="reactive", audit={"c_hat": c_hat, "target": target})


def make_scaler(config: ScalerConfig, limits: ScalingLimits, c_star: float,
                estimator: CpuEstimator | None = None, forecaster: ForecastProvider | None = None):
    if config.kind == "autopilot":
        return AutopilotScaler(config, limits, c_star)
    if estimator is None or forecaster is None:
        raise ConfigurationError(f"{config.kind} needs an estimator and a forecaster")
    if config.kind == "optscaler":
        return OptScaler(config, limits, c_star, estimator, forecaster)
    if config.kind == "madu":
        return MaduScaler(config, limits, c_star, estimator, forecaster)
    return HasScaler(config, limits, c_star, estimator, forecaster)
