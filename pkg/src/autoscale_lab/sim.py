"""Minute-resolution cluster simulator.

Each simulated minute:

1. a staged node change advances by up to ``s`` nodes whenever a multiple of
   ``tau`` minutes has passed since the decision that staged it;
2. at a control-interval start the scaler receives the feedback observed
   since its previous decision and its delta is staged from the current
   node count (a new decision replaces any unfinished change);
3. CPU utilization is sampled from the ground truth at the current node
   count and recorded.

CPU noise uses one standard-normal draw per ``(seed, minute)``, so runs that
share a seed see the same noise realization regardless of strategy.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimator import CpuEstimator, FeedbackSample
from .mpc import ScalingLimits, _denominator, ceil_tol, normal_quantile
from .trace import MINUTES_PER_DAY, TraceSet

CSV_COLUMNS = ("minute", "x", "cpu", "violation", "decision_u", "provenance")


@dataclass(frozen=True)
class GroundTruth:
    """True CPU model with optional sinusoidal drift of the slopes.

    ``w_k(t) = w_k * (1 + gamma sin(2 pi (t - drift_start) / drift_period))``
    for ``t >= drift_start`` and ``w_k`` before.
    """

    w_b: float
    w_k: np.ndarray
    sigma_b: float
    sigma_k: np.ndarray
    gamma: float = 0.0
    drift_period: int = MINUTES_PER_DAY
    drift_start: int = 0
    seed: int = 0

    def __post_init__(self):
        # same invariants as the estimator
        est = CpuEstimator(self.w_b, self.w_k, self.sigma_b, self.sigma_k)
        object.__setattr__(self, "w_k", est.w_k)
        object.__setattr__(self, "sigma_k", est.sigma_k)
        if not 0 <= self.gamma < 1:
            raise ValueError("drift amplitude gamma must lie in [0, 1)")
        if self.drift_period <= 0:
            raise ValueError("drift period must be positive")

    @classmethod
    def from_estimator(cls, est: CpuEstimator, perturb: float = 0.0, **kw) -> "GroundTruth":
        """Ground truth equal to ``est`` with slopes scaled by ``1 + perturb``."""
        return cls(est.w_b, est.w_k * (1.0 + perturb), est.sigma_b, est.sigma_k, **kw)

    def as_estimator(self, t: int | None = None) -> CpuEstimator:
        w_k = self.w_k if t is None else self.w_k_at(t)
        return CpuEstimator(self.w_b, w_k, self.sigma_b, self.sigma_k)

    def w_k_at(self, t: int) -> np.ndarray:
        if self.gamma == 0 or t < self.drift_start:
            return self.w_k
        return self.w_k * (1.0 + self.gamma * math.sin(2 * math.pi * (t - self.drift_start) / self.drift_period))

    def mean(self, y, x, t: int) -> float:
        return self.w_b + float(np.dot(np.asarray(y, dtype=float), self.w_k_at(t))) / x

    def std(self, y, x) -> float:
        return self.sigma_b + float(np.dot(np.asarray(y, dtype=float), self.sigma_k)) / x

    def to_dict(self) -> dict:
        return {"w_b": self.w_b, "w_k": self.w_k.tolist(), "sigma_b": self.sigma_b,
                "sigma_k": self.sigma_k.tolist(), "gamma": self.gamma,
                "drift_period": self.drift_period, "drift_start": self.drift_start, "seed": self.seed}


class NoiseStream:
    """Standard-normal draw for each minute, reproducible from ``(seed, minute)``."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._day: int | None = None
        self._block: np.ndarray | None = None

    def __call__(self, t: int) -> float:
        day = t // MINUTES_PER_DAY
        if day != self._day:
            self._block = np.random.default_rng([self.seed, day % 2**63]).standard_normal(MINUTES_PER_DAY)
            self._day = day
        return float(self._block[t % MINUTES_PER_DAY])


def sample_cpu(gt: GroundTruth, y, x: int, t: int, rng: np.random.Generator | None = None,
               noise: NoiseStream | None = None) -> float:
    """Mean plus Gaussian noise, clamped to ``[0, 1]``.

    The draw comes from ``rng`` when given, else from a :class:`NoiseStream`
    seeded with ``gt.seed`` (deterministic in ``(seed, t)``).
    """
    if x < 1:
        raise ValueError("node count must be >= 1")
    mu = gt.mean(y, x, t)
    sd = gt.std(y, x)
    if sd == 0:
        return min(max(mu, 0.0), 1.0)
    z = rng.standard_normal() if rng is not None else (noise or NoiseStream(gt.seed))(t)
    return min(max(mu + sd * z, 0.0), 1.0)


@dataclass
class ClusterState:
    t: int
    x: int
    target: int | None = None
    decided_at: int | None = None
    last_decision: object | None = None

    @property
    def pending(self) -> bool:
        return self.target is not None and self.target != self.x

    def stage(self, t: int, target: int) -> None:
        """Replace any unfinished change with a new target from the current ``x``."""
        self.target = int(target)
        self.decided_at = t


def advance_staging(state: ClusterState, t: int, limits: ScalingLimits) -> None:
    """Move up to ``s`` nodes towards the target on each ``tau`` boundary after the decision."""
    if not state.pending:
        return
    offset = t - state.decided_at
    if offset > 0 and offset % limits.tau == 0:
        step = min(limits.s, abs(state.target - state.x))
        state.x += step if state.target > state.x else -step


def step_minute(state: ClusterState, gt: GroundTruth, y, limits: ScalingLimits, c_star: float,
                noise: NoiseStream | None = None, on_tick=None) -> dict:
    """Advance staging, run ``on_tick(state)`` (decisions), then sample this minute's utilization.

    ``state.t`` moves on by one.
    """
    t = state.t
    advance_staging(state, t, limits)
    if on_tick is not None:
        on_tick(state)
    c = sample_cpu(gt, y, state.x, t, noise=noise)
    state.t = t + 1
    return {"t": t, "x": state.x, "cpu": c, "violation": c > c_star}


@dataclass
class SimResult:
    minutes: np.ndarray
    x: np.ndarray
    cpu: np.ndarray
    violation: np.ndarray
    decision_u: np.ndarray  # 0 except at decision minutes
    is_decision: np.ndarray
    provenance: list
    cpu_pred: np.ndarray  # scaler's one-step-ahead mean prediction (nan if none)
    softened: np.ndarray  # minute lies in an interval whose plan missed its bound
    workload: np.ndarray  # (N, T)
    decisions: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def __len__(self) -> int:
        return int(self.minutes.size)

    @property
    def n_decisions(self) -> int:
        return int(self.is_decision.sum())

    def segment(self, start: int, end: int) -> "SimResult":
        sel = (self.minutes >= start) & (self.minutes < end)
        idx = np.flatnonzero(sel)
        return SimResult(self.minutes[sel], self.x[sel], self.cpu[sel], self.violation[sel],
                         self.decision_u[sel], self.is_decision[sel], [self.provenance[i] for i in idx],
                         self.cpu_pred[sel], self.softened[sel], self.workload[:, sel],
                         [d for d in self.decisions if start <= d["t"] < end], dict(self.config), self.seed)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for i in range(len(self)):
                dec = bool(self.is_decision[i])
                w.writerow([int(self.minutes[i]), int(self.x[i]), repr(float(self.cpu[i])),
                            int(self.violation[i]), int(self.decision_u[i]) if dec else "",
                            self.provenance[i] if dec else ""])

    def write(self, out_dir, stem: str) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
        self.write_csv(csv_path)
        json_path.write_text(json.dumps({"config": self.config, "seed": self.seed,
                                         "decisions": self.decisions}, sort_keys=True, indent=1))
        return csv_path, json_path


def initial_nodes(est: CpuEstimator, y, c_star: float, alpha: float, limits: ScalingLimits) -> int:
    """Node count meeting the chance bound for workload ``y`` under ``est`` (clamped)."""
    load = float(np.dot(normal_quantile(alpha) * est.sigma_k + est.w_k, np.asarray(y, dtype=float)))
    den = _denominator(c_star, est, alpha)
    return limits.clamp(ceil_tol(load / den) if den > 0 else limits.x_max)


def run_experiment(
    ts: TraceSet,
    scaler,
    limits: ScalingLimits,
    gt: GroundTruth,
    start: int,
    end: int,
    c_star: float,
    x0: int,
    config: dict | None = None,
) -> SimResult:
    """Simulate minutes ``[start, end)`` with a decision every ``h`` minutes from ``start``."""
    if ts.n != gt.w_k.size:
        raise ValueError(f"ground truth has {gt.w_k.size} LRAs, traces have {ts.n}")
    if start < ts.start_minute or end > ts.end_minute or end <= start:
        raise ValueError(f"simulation window [{start}, {end}) outside trace [{ts.start_minute}, {ts.end_minute})")
    if not limits.x_min <= x0 <= limits.x_max:
        raise ValueError(f"x0={x0} outside [{limits.x_min}, {limits.x_max}]")
    n = end - start
    Y = ts.window(start, end)
    state = ClusterState(t=start, x=int(x0))
    noise = NoiseStream(gt.seed)
    xs = np.empty(n, dtype=np.int64)
    cpu = np.empty(n)
    cpu_pred = np.full(n, np.nan)
    du = np.zeros(n, dtype=np.int64)
    is_dec = np.zeros(n, dtype=bool)
    softened = np.zeros(n, dtype=bool)
    prov = [""] * n
    decisions = []
    predict_cpu = getattr(scaler, "predict_cpu", None)
    feedback: list[FeedbackSample] = []
    cur = {"softened": False}

    def on_tick(st: ClusterState) -> None:
        i = st.t - start
        if i % limits.h:
            return
        dec = scaler.decide(st.t, st.x, list(feedback))
        feedback.clear()
        decisions.append({"t": st.t, "x_before": st.x, "u": dec.u, "target": dec.x,
                          "provenance": dec.provenance, "error": dec.error, "audit": dec.audit})
        st.stage(st.t, dec.x)
        st.last_decision = dec
        du[i], is_dec[i], prov[i] = dec.u, True, dec.provenance
        cur["softened"] = dec.softened

    for i in range(n):
        y = Y[:, i]
        rec = step_minute(state, gt, y, limits, c_star, noise=noise, on_tick=on_tick)
        xs[i], cpu[i], softened[i] = rec["x"], rec["cpu"], cur["softened"]
        if predict_cpu is not None:
            cpu_pred[i] = predict_cpu(y, rec["x"])
        feedback.append(FeedbackSample(rec["t"], y, rec["x"], rec["cpu"]))

    return SimResult(
        minutes=np.arange(start, end), x=xs, cpu=cpu, violation=cpu > c_star, decision_u=du,
        is_decision=is_dec, provenance=prov, cpu_pred=cpu_pred, softened=softened, workload=Y,
        decisions=decisions, config=dict(config or {}), seed=gt.seed,
    )


def warmup_feedback(ts: TraceSet, gt: GroundTruth, start: int, end: int, limits: ScalingLimits,
                    seed: int, hold: int | None = None, band: tuple[float, float] = (0.2, 0.8)) -> list[FeedbackSample]:
    """Feedback from historical operation with varied node levels.

    Every ``hold`` minutes a target utilization is drawn uniformly from
    ``band`` and the node count sized for it under ``gt`` (clamped to the
    limits).  The spread in unit workload identifies every slope when the
    initial estimator is fitted.  Samples clamped at 0 or 1 are dropped since
    they carry no linear information.
    """
    hold = hold or limits.h
    rng = np.random.default_rng(seed)
    noise = NoiseStream(seed)
    Y = ts.window(start, end)
    out = []
    x = limits.x_min
    for i in range(end - start):
        t = start + i
        if i % hold == 0:
            c_target = rng.uniform(*band)
            load = float(Y[:, i : i + hold].mean(axis=1) @ gt.w_k_at(t))
            x = limits.clamp(ceil_tol(load / max(c_target - gt.w_b, 1e-3)))
        c = sample_cpu(gt, Y[:, i], x, t, noise=noise)
        if 0.0 < c < 1.0:
            out.append(FeedbackSample(t, Y[:, i], x, c))
    return out
