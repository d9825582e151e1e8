"""Heteroscedastic linear CPU-utilization estimator.

Mean utilization is ``w_b + y^T w_k / x`` and the noise standard deviation is
``sigma_b + y^T sigma_k / x`` for workload vector ``y`` served by ``x`` nodes.
Parameters are initialized by constrained maximum likelihood and ``w_k`` is
then tracked online with the Widrow-Hoff rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import lsq_linear, nnls

SIGMA_FLOOR = 1e-6

# Acklam's rational approximation of the inverse normal CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_quantile(alpha: float) -> float:
    """Inverse standard normal CDF.

    Acklam's approximation (relative error about 1.2e-9) followed by one
    Halley correction step against ``math.erfc``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if alpha == 0.5:
        return 0.0
    if alpha < _P_LOW:
        q = math.sqrt(-2 * math.log(alpha))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif alpha <= 1 - _P_LOW:
        q = alpha - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-alpha))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - alpha
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


@dataclass(frozen=True)
class FeedbackSample:
    t: int
    y: np.ndarray
    x: int
    c: float

    def __post_init__(self):
        if self.x < 1:
            raise ValueError(f"node count must be >= 1, got {self.x}")
        if not 0.0 <= self.c <= 1.0:
            raise ValueError(f"utilization must lie in [0, 1], got {self.c}")
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))

    @property
    def unit_workload(self) -> np.ndarray:
        return self.y / self.x


@dataclass(frozen=True)
class CpuEstimator:
    w_b: float
    w_k: np.ndarray
    sigma_b: float
    sigma_k: np.ndarray

    def __post_init__(self):
        w_k = np.array(self.w_k, dtype=float).reshape(-1)
        sigma_k = np.array(self.sigma_k, dtype=float).reshape(-1)
        if w_k.shape != sigma_k.shape:
            raise ValueError("w_k and sigma_k must have the same length")
        if np.any(w_k < 0) or np.any(sigma_k < 0) or self.sigma_b < 0:
            raise ValueError("slopes and sigma parameters must be non-negative")
        w_k.setflags(write=False)
        sigma_k.setflags(write=False)
        object.__setattr__(self, "w_k", w_k)
        object.__setattr__(self, "sigma_k", sigma_k)
        object.__setattr__(self, "w_b", float(self.w_b))
        object.__setattr__(self, "sigma_b", float(self.sigma_b))

    @property
    def n(self) -> int:
        return self.w_k.size

    def to_dict(self) -> dict:
        return {
            "w_b": self.w_b,
            "w_k": self.w_k.tolist(),
            "sigma_b": self.sigma_b,
            "sigma_k": self.sigma_k.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CpuEstimator":
        return cls(d["w_b"], d["w_k"], d["sigma_b"], d["sigma_k"])


def _check_x(x) -> None:
    if x <= 0:
        raise ValueError("node count x must be positive")


def predict_mean(est: CpuEstimator, y, x) -> float:
    _check_x(x)
    return est.w_b + float(np.dot(np.asarray(y, dtype=float), est.w_k)) / x


def predict_std(est: CpuEstimator, y, x) -> float:
    _check_x(x)
    return est.sigma_b + float(np.dot(np.asarray(y, dtype=float), est.sigma_k)) / x


def upper_quantile(est: CpuEstimator, y, x, alpha: float) -> float:
    return predict_mean(est, y, x) + normal_quantile(alpha) * predict_std(est, y, x)


def olr_update(est: CpuEstimator, batch: Sequence[FeedbackSample], eta: float) -> CpuEstimator:
    """Widrow-Hoff pass over ``batch`` in time order; only ``w_k`` moves.

    Each step is clamped at zero so ``w_k`` stays non-negative.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if eta == 0 or not batch:
        return est
    w_k = np.array(est.w_k)
    for s in sorted(batch, key=lambda s: s.t):
        u = s.unit_workload
        e = est.w_b + float(u @ w_k) - s.c
        w_k = np.maximum(w_k - eta * e * u, 0.0)
    return replace(est, w_k=w_k)


# ---------------------------------------------------------------------------
# Maximum-likelihood initialization


class DegenerateDesignError(ValueError):
    pass


def _neg_loglik_grad(theta: np.ndarray, F: np.ndarray, r: np.ndarray):
    """Gaussian negative log-likelihood with ``sd = F @ theta`` (constants dropped)."""
    sd = F @ theta
    z2 = (r / sd) ** 2
    nll = float(np.sum(np.log(sd) + 0.5 * z2))
    grad = F.T @ ((1.0 - z2) / sd)
    return nll, grad


def _fit_sigma(F: np.ndarray, r: np.ndarray, max_iter: int = 2000, tol: float = 1e-10) -> np.ndarray:
    """Projected gradient descent on the NLL, columns of ``F`` pre-scaled to unit max."""
    scale = np.abs(F).max(axis=0)
    scale[scale == 0] = 1.0
    Fs = F / scale
    theta, _ = nnls(Fs, np.abs(r))
    theta *= math.sqrt(math.pi / 2)
    theta[0] = max(theta[0], SIGMA_FLOOR)
    lower = np.zeros_like(theta)
    lower[0] = SIGMA_FLOOR

    nll, grad = _neg_loglik_grad(theta, Fs, r)
    step = 1.0 / max(1.0, float(np.linalg.norm(grad)))
    for _ in range(max_iter):
        while True:
            cand = np.maximum(theta - step * grad, lower)
            if np.all(Fs @ cand > 0):
                c_nll, c_grad = _neg_loglik_grad(cand, Fs, r)
                # Armijo condition on the projected step
                if c_nll <= nll + 1e-4 * float(grad @ (cand - theta)):
                    break
            step *= 0.5
            if step < 1e-20:
                return theta / scale
        moved = float(np.max(np.abs(cand - theta)))
        theta, nll, grad = cand, c_nll, c_grad
        step *= 2.0
        if moved < tol * max(1.0, float(np.max(np.abs(theta)))):
            break
    return theta / scale


def init_mle(samples: Sequence[FeedbackSample]) -> CpuEstimator:
    """Two-stage constrained maximum likelihood.

    Stage one fits ``(w_b, w_k)`` by least squares with ``w_k >= 0``; a
    negative intercept is clamped to zero and the slopes refit through the
    origin.  Stage two fits ``(sigma_b, sigma_k)`` to the residuals by
    maximizing the Gaussian likelihood whose standard deviation is linear in
    unit workload, starting from the mean-absolute-residual regression scaled
    by sqrt(pi/2).
    """
    if not samples:
        raise DegenerateDesignError("no feedback samples")
    U = np.stack([s.unit_workload for s in samples])
    c = np.array([s.c for s in samples])
    n_lra = U.shape[1]

    active = np.flatnonzero(np.any(U != 0, axis=0))
    Ua = U[:, active]
    if len(samples) < active.size + 2:
        raise DegenerateDesignError(f"need at least {active.size + 2} samples, got {len(samples)}")
    A = np.column_stack([np.ones(len(samples)), Ua])
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise DegenerateDesignError("unit-workload design matrix is rank deficient")

    lb = np.concatenate([[-np.inf], np.zeros(active.size)])
    sol = lsq_linear(A, c, bounds=(lb, np.full(A.shape[1], np.inf)), method="bvls", tol=1e-14)
    w_b, slopes = float(sol.x[0]), np.maximum(sol.x[1:], 0.0)
    if w_b < 0:
        w_b = 0.0
        slopes = nnls(Ua, c)[0] if active.size else slopes
    w_k = np.zeros(n_lra)
    w_k[active] = slopes

    resid = c - w_b - U @ w_k
    sigma_k = np.zeros(n_lra)
    if np.max(np.abs(resid)) <= 1e-12:
        sigma_b = SIGMA_FLOOR
    else:
        theta = _fit_sigma(A, resid)
        sigma_b = max(float(theta[0]), SIGMA_FLOOR)
        sigma_k[active] = np.maximum(theta[1:], 0.0)
    return CpuEstimator(w_b, w_k, sigma_b, sigma_k)
