"""Long-term periodic block: a truncated Fourier series per LRA."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from ..trace import TraceSet


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class FourierBlock:
    """Per-LRA coefficients ``a[n][p][k]``, ``b[n][p][k]`` for ``k = 0..order_p``.

    The intercept lives in ``a[n][0][0]``.  ``a[n][p][0]`` for ``p > 0`` and
    every ``b[..][0]`` are zero, as are harmonics whose frequency duplicates one
    of an earlier period (e.g. the 7th weekly harmonic is the daily
    fundamental).
    """

    periods: tuple[int, ...]
    orders: tuple[int, ...]
    a: np.ndarray  # (N, P, max_order + 1)
    b: np.ndarray

    def __post_init__(self):
        if any(p <= 0 for p in self.periods) or any(o < 0 for o in self.orders):
            raise ValueError("periods must be positive and orders non-negative")
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("Fourier coefficients must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def to_dict(self) -> dict:
        return {"periods": list(self.periods), "orders": list(self.orders),
                "a": self.a.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FourierBlock":
        return cls(tuple(d["periods"]), tuple(d["orders"]), np.array(d["a"]), np.array(d["b"]))


def _columns(periods: Sequence[int], orders: Sequence[int]) -> list[tuple[int, int, str]]:
    """Design columns as ``(period index, harmonic, 'cos'|'sin')`` with duplicates removed."""
    seen: set[Fraction] = set()
    cols = [(0, 0, "cos")]
    for p_idx, (P, order) in enumerate(zip(periods, orders)):
        for k in range(1, order + 1):
            f = Fraction(k, P)
            if f in seen:
                continue
            seen.add(f)
            cols.append((p_idx, k, "cos"))
            cols.append((p_idx, k, "sin"))
    return cols


def _design(t: np.ndarray, periods, cols) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    X = np.empty((t.size, len(cols)))
    for j, (p_idx, k, kind) in enumerate(cols):
        P = periods[p_idx]
        if k == 0:
            X[:, j] = 1.0
            continue
        phase = 2 * np.pi * ((k * (t % P)) % P) / P
        X[:, j] = np.cos(phase) if kind == "cos" else np.sin(phase)
    return X


def _normalize_orders(periods, order) -> tuple[int, ...]:
    if isinstance(order, int):
        return tuple(order for _ in periods)
    orders = tuple(int(o) for o in order)
    if len(orders) != len(periods):
        raise ValueError("need one order per period")
    return orders


def fit_fourier(ts: TraceSet, periods: Sequence[int] = (1440, 10080), order: int | Sequence[int] = 3) -> FourierBlock:
    """Joint least-squares fit of all periods per LRA, with a shared intercept."""
    periods = tuple(int(p) for p in periods)
    orders = _normalize_orders(periods, order)
    if ts.length < max(periods):
        raise RankDeficientError(f"trace of {ts.length} minutes is shorter than the longest period {max(periods)}")
    cols = _columns(periods, orders)
    X = _design(ts.minutes, periods, cols)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientError("Fourier design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(X, ts.matrix.T, rcond=None)  # (cols, N)

    width = max(orders) + 1
    a = np.zeros((ts.n, len(periods), width))
    b = np.zeros_like(a)
    for j, (p_idx, k, kind) in enumerate(cols):
        (a if kind == "cos" else b)[:, p_idx, k] = coef[j]
    return FourierBlock(periods, orders, a, b)


def eval_fourier(block: FourierBlock, lra: int, t) -> np.ndarray:
    """Evaluate LRA ``lra``'s series at epoch minutes ``t``."""
    if not 0 <= lra < block.n:
        raise IndexError(f"unknown LRA index {lra}")
    t = np.asarray(t, dtype=np.int64)
    out = np.zeros(t.shape, dtype=float)
    for p_idx, P in enumerate(block.periods):
        for k in range(block.orders[p_idx] + 1):
            ak, bk = block.a[lra, p_idx, k], block.b[lra, p_idx, k]
            if ak == 0 and bk == 0:
                continue
            phase = 2 * np.pi * ((k * (t % P)) % P) / P
            out += ak * np.cos(phase) + bk * np.sin(phase)
    return out


def eval_fourier_all(block: FourierBlock, t) -> np.ndarray:
    """``(N, len(t))`` evaluation for every LRA."""
    return np.stack([eval_fourier(block, n, t) for n in range(block.n)])
