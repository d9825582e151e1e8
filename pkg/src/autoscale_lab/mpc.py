"""Chance-constrained MPC over ``D`` control intervals.

Under the Gaussian CPU model, requiring ``P(c^d <= c*) >= alpha`` becomes the
linear lower bound ``x^d >= m^d / (c* - w_b - z_alpha sigma_b)`` where
``m^d = max_{j in {d, d+1}} (z_alpha sigma_k + w_k)^T y^j``.  The objective
``sum_d m^d / x^d`` is non-increasing in every ``x^d``, so the componentwise
smallest feasible schedule is optimal.  It is found by one backward pass
(propagating the bounds against the ramp limit) and one forward pass.

When a bound cannot be reached from ``x^0`` under the ramp limit (or exceeds
``X^max``), it is clipped to the reachable envelope
``U^d = min(X^max, x^0 + d R)``.  The same ordering rule is used by
:func:`brute_force_oracle`: minimize total shortfall ``sum_d max(0, L^d - x^d)``
first, then maximize the objective, then prefer the componentwise-smallest
schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import CpuEstimator, normal_quantile

__all__ = [
    "ConfigurationError",
    "ScalingLimits",
    "MpcProblem",
    "MpcPlan",
    "normal_quantile",
    "compute_m",
    "lower_bounds",
    "solve_mpc",
    "round_first_action",
    "brute_force_oracle",
    "objective",
]

_CEIL_EPS = 1e-9


class ConfigurationError(ValueError):
    pass


def ceil_tol(v: float) -> int:
    """Ceiling that ignores float noise just above an integer."""
    return int(math.ceil(v - _CEIL_EPS))


@dataclass(frozen=True)
class ScalingLimits:
    h: int = 30
    tau: int = 5
    s: int = 4
    x_min: int = 80
    x_max: int = 400

    def __post_init__(self):
        if min(self.h, self.tau, self.s) < 1:
            raise ConfigurationError("h, tau and s must be >= 1")
        if self.x_min > self.x_max or self.x_min < 1:
            raise ConfigurationError(f"invalid node bounds [{self.x_min}, {self.x_max}]")
        if self.ramp < 1:
            raise ConfigurationError(f"ramp floor(h/tau)*s = {self.ramp} must be >= 1")

    @property
    def ramp(self) -> int:
        """Largest node change possible within one interval."""
        return (self.h // self.tau) * self.s

    def clamp(self, x: int) -> int:
        return min(max(int(x), self.x_min), self.x_max)


@dataclass(frozen=True)
class MpcProblem:
    x0: int
    peaks: np.ndarray  # (D + 1, N)
    c_star: float
    alpha: float
    estimator: CpuEstimator

    def __post_init__(self):
        peaks = np.atleast_2d(np.asarray(self.peaks, dtype=float))
        if peaks.shape[0] < 2:
            raise ConfigurationError("need D + 1 >= 2 peak vectors")
        if np.any(peaks < 0) or not np.all(np.isfinite(peaks)):
            raise ConfigurationError("peaks must be finite and non-negative")
        if not 0 < self.c_star < 1 or not 0 < self.alpha < 1:
            raise ConfigurationError("c_star and alpha must lie in (0, 1)")
        object.__setattr__(self, "peaks", peaks)

    @property
    def D(self) -> int:
        return self.peaks.shape[0] - 1


@dataclass
class MpcPlan:
    x: np.ndarray
    u: np.ndarray
    m: np.ndarray
    L: np.ndarray
    x0: float
    feasible: bool = True
    softened_intervals: frozenset[int] = field(default_factory=frozenset)

    @property
    def objective(self) -> float:
        return objective(self.m, self.x)

    def to_dict(self) -> dict:
        return {
            "x0": float(self.x0),
            "x": [float(v) for v in self.x],
            "u": [float(v) for v in self.u],
            "m": [float(v) for v in self.m],
            "L": [float(v) for v in self.L],
            "feasible": bool(self.feasible),
            "softened_intervals": sorted(int(d) for d in self.softened_intervals),
        }


def objective(m, x) -> float:
    return float(np.sum(np.asarray(m, dtype=float) / np.asarray(x, dtype=float)))


def compute_m(est: CpuEstimator, peaks, alpha: float) -> np.ndarray:
    """``m^d = max(a^T y^d, a^T y^{d+1})`` with ``a = z_alpha sigma_k + w_k``."""
    peaks = np.atleast_2d(np.asarray(peaks, dtype=float))
    if peaks.shape[0] < 2:
        raise ConfigurationError("missing peak vector: need D + 1 intervals")
    if peaks.shape[1] != est.w_k.size:
        raise ConfigurationError(f"peaks have {peaks.shape[1]} LRAs, estimator has {est.w_k.size}")
    a = normal_quantile(alpha) * est.sigma_k + est.w_k
    load = peaks @ a
    return np.maximum(load[:-1], load[1:])


def _denominator(c_star: float, est: CpuEstimator, alpha: float) -> float:
    return c_star - est.w_b - normal_quantile(alpha) * est.sigma_b


def lower_bounds(m, c_star: float, est: CpuEstimator, alpha: float) -> np.ndarray:
    den = _denominator(c_star, est, alpha)
    if den <= 0:
        raise ConfigurationError(
            f"c_star - w_b - z(alpha) sigma_b = {den:.6g} <= 0: target unreachable at any node count"
        )
    return np.asarray(m, dtype=float) / den


def _min_schedule(x0: float, L: np.ndarray, limits: ScalingLimits) -> tuple[np.ndarray, np.ndarray, bool]:
    """Componentwise-minimal schedule with bounds clipped to the reachable envelope."""
    R = limits.ramp
    D = L.size
    reach = np.minimum(limits.x_max, x0 + R * np.arange(1, D + 1))
    feasible = bool(np.all(L <= limits.x_max))
    eff = np.minimum(L, reach)
    lam = np.empty(D)
    nxt = -np.inf
    for d in range(D - 1, -1, -1):
        lam[d] = max(eff[d], limits.x_min, nxt - R)
        nxt = lam[d]
    x = np.empty(D)
    prev = x0
    for d in range(D):
        x[d] = max(lam[d], prev - R)
        prev = x[d]
    return x, eff, feasible


def solve_mpc(problem: MpcProblem, limits: ScalingLimits) -> MpcPlan:
    if not limits.x_min <= problem.x0 <= limits.x_max:
        raise ConfigurationError(f"x0={problem.x0} outside [{limits.x_min}, {limits.x_max}]")
    m = compute_m(problem.estimator, problem.peaks, problem.alpha)
    L = lower_bounds(m, problem.c_star, problem.estimator, problem.alpha)
    x, _, feasible = _min_schedule(float(problem.x0), L, limits)
    u = np.diff(np.concatenate([[float(problem.x0)], x]))
    softened = frozenset(int(d) + 1 for d in np.flatnonzero(x < L - 1e-9))
    return MpcPlan(x=x, u=u, m=m, L=L, x0=float(problem.x0), feasible=feasible, softened_intervals=softened)


def round_first_action(plan: MpcPlan, x0: int, limits: ScalingLimits) -> int:
    R = limits.ramp
    u = min(max(ceil_tol(plan.x[0]) - int(x0), -R), R)
    return limits.clamp(int(x0) + u) - int(x0)


def brute_force_oracle(problem: MpcProblem, limits: ScalingLimits) -> MpcPlan:
    """Exhaustive DP over integer node counts (test oracle, small instances only)."""
    if limits.x_max - limits.x_min > 80 or problem.D > 4:
        raise ConfigurationError("oracle guard exceeded: need x_max - x_min <= 80 and D <= 4")
    m = compute_m(problem.estimator, problem.peaks, problem.alpha)
    L = lower_bounds(m, problem.c_star, problem.estimator, problem.alpha)
    Lint = np.array([ceil_tol(v) for v in L])
    R = limits.ramp
    xs = np.arange(limits.x_min, limits.x_max + 1)
    S = xs.size

    # Per end state: shortfall, objective and path of the best prefix.  The
    # step cost depends only on the new state, so the order of predecessors
    # under (shortfall, -objective, path) is the same for every successor.
    short = np.full(S, np.inf)
    obj = np.zeros(S)
    paths = np.zeros((S, 0), dtype=np.int64)
    short[int(problem.x0) - limits.x_min] = 0
    for d in range(problem.D):
        # objective ties within float noise are broken by the path itself
        keys = [paths[:, k] for k in range(paths.shape[1] - 1, -1, -1)]
        rank = np.empty(S, dtype=np.int64)
        rank[np.lexsort(keys + [-np.round(obj, 12), short])] = np.arange(S)
        rank[~np.isfinite(short)] = S
        pred = np.array([lo + int(np.argmin(rank[lo:hi])) for lo, hi in
                         zip(np.maximum(0, np.arange(S) - R), np.minimum(S, np.arange(S) + R + 1))])
        short = short[pred] + np.maximum(0, int(Lint[d]) - xs)
        obj = obj[pred] + m[d] / xs
        paths = np.column_stack([paths[pred], xs])
    keys = [paths[:, k] for k in range(paths.shape[1] - 1, -1, -1)]
    best = np.lexsort(keys + [-np.round(obj, 12), short])[0]
    path = paths[best]
    x = np.array(path, dtype=float)
    u = np.diff(np.concatenate([[float(problem.x0)], x]))
    softened = frozenset(d + 1 for d in range(problem.D) if x[d] < Lint[d])
    return MpcPlan(
        x=x, u=u, m=m, L=L, x0=float(problem.x0),
        feasible=bool(np.all(L <= limits.x_max)), softened_intervals=softened,
    )
