"""Minute-resolution workload traces for co-located long-running applications.

A :class:`TraceSet` holds ``N`` aligned per-LRA series of QPS values on a
shared one-minute grid.  Times are integer epoch minutes throughout.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MINUTES_PER_DAY = 1440
MINUTES_PER_WEEK = 10080


class TraceError(ValueError):
    """Raised for malformed, misaligned or out-of-range trace data."""


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WorkloadTrace:
    lra_id: str
    start_minute: int
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.ndim != 1 or arr.size < 1:
            raise TraceError(f"trace {self.lra_id!r} must be a non-empty 1-d series")
        if not np.all(np.isfinite(arr)):
            raise TraceError(f"trace {self.lra_id!r} has non-finite values")
        if np.any(arr < 0):
            raise TraceError(f"negative workload in trace {self.lra_id!r}")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "start_minute", int(self.start_minute))

    def __len__(self) -> int:
        return self.values.size

    @property
    def end_minute(self) -> int:
        """One past the last minute covered."""
        return self.start_minute + self.values.size


@dataclass(frozen=True)
class TraceSet:
    traces: tuple[WorkloadTrace, ...]

    def __post_init__(self):
        traces = tuple(self.traces)
        if not traces:
            raise TraceError("a TraceSet needs at least one trace")
        ids = [t.lra_id for t in traces]
        if len(set(ids)) != len(ids):
            raise TraceError(f"duplicate lra_id in {ids}")
        start, length = traces[0].start_minute, len(traces[0])
        for t in traces[1:]:
            if t.start_minute != start or len(t) != length:
                raise TraceError("member traces are not aligned on the same grid")
        object.__setattr__(self, "traces", traces)
        m = np.stack([t.values for t in traces])
        m.setflags(write=False)
        object.__setattr__(self, "_matrix", m)

    @classmethod
    def from_matrix(cls, lra_ids: Sequence[str], start_minute: int, matrix) -> "TraceSet":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(tuple(WorkloadTrace(i, start_minute, row) for i, row in zip(lra_ids, matrix, strict=True)))

    @property
    def lra_ids(self) -> list[str]:
        return [t.lra_id for t in self.traces]

    @property
    def n(self) -> int:
        return len(self.traces)

    @property
    def start_minute(self) -> int:
        return self.traces[0].start_minute

    @property
    def end_minute(self) -> int:
        return self.traces[0].end_minute

    @property
    def length(self) -> int:
        return len(self.traces[0])

    @property
    def matrix(self) -> np.ndarray:
        """Read-only ``(N, length)`` array of workloads."""
        return self._matrix

    @property
    def minutes(self) -> np.ndarray:
        return np.arange(self.start_minute, self.end_minute)

    def window(self, start_minute: int, end_minute: int) -> np.ndarray:
        """Workload matrix for minutes ``[start_minute, end_minute)``."""
        if start_minute < self.start_minute or end_minute > self.end_minute or end_minute < start_minute:
            raise TraceError(
                f"window [{start_minute}, {end_minute}) outside trace range "
                f"[{self.start_minute}, {self.end_minute})"
            )
        lo, hi = start_minute - self.start_minute, end_minute - self.start_minute
        return self.matrix[:, lo:hi]

    def at(self, minute: int) -> np.ndarray:
        return self.window(minute, minute + 1)[:, 0]

    def slice(self, start_minute: int, end_minute: int) -> "TraceSet":
        return TraceSet.from_matrix(self.lra_ids, start_minute, self.window(start_minute, end_minute))


# ---------------------------------------------------------------------------
# CSV ingestion


def load_traces(path, grid: str = "intersect") -> TraceSet:
    """Read ``epoch_minute,lra_id,qps`` rows into an aligned :class:`TraceSet`.

    Series are cut to the intersection of their time ranges and gaps inside
    that range are filled by linear interpolation.  ``grid`` only accepts
    ``"intersect"``; it exists so other alignment policies can be added.
    """
    if grid != "intersect":
        raise TraceError(f"unknown alignment policy {grid!r}")
    path = Path(path)
    if not path.exists():
        raise TraceError(f"trace file not found: {path}")

    series: dict[str, dict[int, float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["epoch_minute", "lra_id", "qps"]:
            raise TraceError(f"{path}: expected header 'epoch_minute,lra_id,qps', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise TraceError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                minute = int(row[0])
                qps = float(row[2])
            except ValueError as exc:
                raise TraceError(f"{path}:{lineno}: cannot parse row {row}: {exc}") from None
            lra = row[1].strip()
            if not math.isfinite(qps):
                raise TraceError(f"{path}:{lineno}: non-finite qps {row[2]!r}")
            if qps < 0:
                raise TraceError(f"{path}:{lineno}: negative workload {qps}")
            points = series.setdefault(lra, {})
            if minute in points:
                raise TraceError(f"{path}:{lineno}: duplicate minute {minute} for {lra!r}")
            points[minute] = qps

    if not series:
        raise TraceError(f"{path}: no data rows")

    start = max(min(p) for p in series.values())
    end = min(max(p) for p in series.values())
    if end < start:
        raise TraceError(f"{path}: empty intersection of time ranges")

    grid_minutes = np.arange(start, end + 1)
    rows = []
    for lra, points in series.items():
        ts = np.array(sorted(points))
        vs = np.array([points[t] for t in ts])
        rows.append(np.interp(grid_minutes, ts, vs))
    return TraceSet.from_matrix(list(series), int(start), np.stack(rows))


def save_traces(ts: TraceSet, path) -> None:
    """Write ``ts`` in the long CSV format read by :func:`load_traces`."""
    path = Path(path)
    m = ts.matrix
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch_minute", "lra_id", "qps"])
        for j, minute in enumerate(ts.minutes):
            for i, lra in enumerate(ts.lra_ids):
                w.writerow([int(minute), lra, repr(float(m[i, j]))])


# ---------------------------------------------------------------------------
# Statistics


@dataclass(frozen=True)
class TraceStats:
    sigma_daily_peak: float
    daily_ar: float
    weekly_ar: float | None
    entropy_score: float
    degenerate: bool = False


def _autocorr(x: np.ndarray, lag: int) -> float:
    a, b = x[:-lag], x[lag:]
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return 0.0
    r = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
    return float(np.clip(r, -1.0, 1.0))


def spectral_entropy_score(x: np.ndarray) -> float:
    """``1 - H/log(K)`` of the normalized periodogram over ``K = len//2`` bins."""
    x = np.asarray(x, dtype=float)
    k = x.size // 2
    if k < 2:
        return 1.0
    power = np.abs(np.fft.rfft(x - x.mean()))[1 : k + 1] ** 2
    total = power.sum()
    if total <= 0:
        return 1.0
    p = power / total
    nz = p[p > 0]
    h = -float(np.sum(nz * np.log(nz)))
    return float(np.clip(1.0 - h / math.log(k), 0.0, 1.0))


def compute_stats(trace: WorkloadTrace) -> TraceStats:
    x = trace.values
    lo, hi = x.min(), x.max()
    if hi == lo:
        return TraceStats(0.0, 0.0, 0.0 if x.size >= 2 * MINUTES_PER_WEEK else None, 1.0, degenerate=True)

    norm = (x - lo) / (hi - lo)
    days = norm.size // MINUTES_PER_DAY
    if days >= 1:
        peaks = norm[: days * MINUTES_PER_DAY].reshape(days, MINUTES_PER_DAY).max(axis=1)
        sigma = float(peaks.std())
    else:
        sigma = 0.0
    daily = _autocorr(x, MINUTES_PER_DAY) if x.size > MINUTES_PER_DAY + 1 else 0.0
    weekly = _autocorr(x, MINUTES_PER_WEEK) if x.size >= 2 * MINUTES_PER_WEEK else None
    return TraceStats(sigma, daily, weekly, spectral_entropy_score(x))


# ---------------------------------------------------------------------------
# Synthesis and perturbation


@dataclass(frozen=True)
class Spike:
    """Multiply the workload by ``factor`` on ``[start, start + duration)``.

    With ``period`` set the window recurs every ``period`` minutes.  Minutes
    are absolute epoch minutes (``start`` is taken modulo ``period``).
    """

    start: int
    duration: int
    factor: float
    period: int | None = None

    def mask(self, minutes: np.ndarray) -> np.ndarray:
        if self.period:
            off = (minutes - self.start) % self.period
            return off < self.duration
        return (minutes >= self.start) & (minutes < self.start + self.duration)


@dataclass(frozen=True)
class SynthSpec:
    base: float
    daily_amplitude: float = 0.0
    weekly_amplitude: float = 0.0
    noise_std: float = 0.0
    spikes: tuple[Spike, ...] = ()
    daily_phase: int = 0
    weekly_phase: int = 0
    ar_coef: float = 0.0
    seed: int = 0


def synthesize_trace(
    spec: SynthSpec,
    lra_id: str = "lra0",
    start_minute: int = 0,
    length: int = 14 * MINUTES_PER_DAY,
) -> tuple[WorkloadTrace, bool]:
    """Reproducible diurnal/weekly workload.

    ``base * (1 + A_d sin(2 pi (t - phase_d) / 1440)) * (1 + A_w sin(2 pi (t - phase_w) / 10080))``,
    multiplied by any spikes, plus Gaussian noise (AR(1) when ``ar_coef > 0``,
    with marginal std ``noise_std``), clipped at zero.  Returns the trace and a
    flag that is True when the signal is identically zero.
    """
    if spec.base <= 0:
        raise TraceError("base level must be positive")
    if spec.noise_std < 0 or not 0 <= spec.ar_coef < 1:
        raise TraceError("noise_std must be >= 0 and ar_coef in [0, 1)")
    t = np.arange(start_minute, start_minute + length)
    daily = np.sin(2 * np.pi * ((t - spec.daily_phase) % MINUTES_PER_DAY) / MINUTES_PER_DAY)
    weekly = np.sin(2 * np.pi * ((t - spec.weekly_phase) % MINUTES_PER_WEEK) / MINUTES_PER_WEEK)
    y = spec.base * (1 + spec.daily_amplitude * daily) * (1 + spec.weekly_amplitude * weekly)
    for sp in spec.spikes:
        y = np.where(sp.mask(t), y * sp.factor, y)
    if spec.noise_std > 0:
        rng = np.random.default_rng(spec.seed)
        eps = rng.standard_normal(length)
        if spec.ar_coef > 0:
            innov = spec.noise_std * math.sqrt(1 - spec.ar_coef**2)
            noise = np.empty(length)
            noise[0] = spec.noise_std * eps[0]
            for i in range(1, length):
                noise[i] = spec.ar_coef * noise[i - 1] + innov * eps[i]
        else:
            noise = spec.noise_std * eps
        y = y + noise
    y = np.maximum(y, 0.0)
    all_zero = not np.any(y > 0)
    if all_zero:
        warnings.warn(f"synthesized trace {lra_id!r} is identically zero", stacklevel=2)
    return WorkloadTrace(lra_id, start_minute, y), all_zero


def synthesize_traceset(
    specs: dict[str, SynthSpec], start_minute: int = 0, length: int = 14 * MINUTES_PER_DAY
) -> TraceSet:
    return TraceSet(tuple(synthesize_trace(s, lra, start_minute, length)[0] for lra, s in specs.items()))


def inject_spike(
    ts: TraceSet,
    start_minute: int,
    duration_minutes: int,
    factor: float,
    lra_ids: Iterable[str] | None = None,
) -> TraceSet:
    """Multiply workloads on ``[start_minute, start_minute + duration)`` by ``factor``."""
    if factor <= 0:
        raise TraceError("spike factor must be positive")
    if duration_minutes < 0 or start_minute < ts.start_minute or start_minute + duration_minutes > ts.end_minute:
        raise TraceError(
            f"spike window [{start_minute}, {start_minute + duration_minutes}) outside trace range"
        )
    targets = set(ts.lra_ids if lra_ids is None else lra_ids)
    unknown = targets - set(ts.lra_ids)
    if unknown:
        raise TraceError(f"unknown lra ids {sorted(unknown)}")
    lo = start_minute - ts.start_minute
    m = np.array(ts.matrix)
    for i, lra in enumerate(ts.lra_ids):
        if lra in targets:
            m[i, lo : lo + duration_minutes] *= factor
    return TraceSet.from_matrix(ts.lra_ids, ts.start_minute, m)
