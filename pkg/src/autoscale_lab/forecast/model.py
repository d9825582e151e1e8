"""Workload forecaster = Fourier periodic block + attention local block."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..trace import MINUTES_PER_DAY, TraceSet
from .fourier import FourierBlock, eval_fourier_all, fit_fourier
from .local import N_CALENDAR, LocalBlock, calendar_features, local_backward, local_forward, n_features, position_features

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class InsufficientHistoryError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


def quantile_loss(y, yhat, q: float) -> float:
    """Mean pinball loss ``max(q e, (q - 1) e)`` with ``e = y - yhat``."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    e = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
    return float(np.mean(np.maximum(q * e, (q - 1) * e)))


def quantile_loss_grad(y, yhat, q: float) -> np.ndarray:
    """Derivative of :func:`quantile_loss` w.r.t. ``yhat`` (zero at the kink)."""
    e = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
    g = np.where(e > 0, -q, np.where(e < 0, 1 - q, 0.0))
    return g / e.size


@dataclass
class TrainConfig:
    epochs: int = 5
    lr: float = 0.003
    batch_size: int = 16
    stride: int = 30
    clip_norm: float = 10.0
    seed: int = 0
    optimizer: str = "adam"  # adam | sgd
    betas: tuple = (0.9, 0.999)

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


@dataclass
class ForecastModel:
    fourier: FourierBlock
    local: LocalBlock
    q: float = 0.5
    scales: np.ndarray = field(default_factory=lambda: np.ones(1))
    loss_history: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError("quantile q must lie in (0, 1)")
        self.scales = np.asarray(self.scales, dtype=float).reshape(-1)

    @property
    def n(self) -> int:
        return self.fourier.n

    @property
    def final_loss(self) -> float | None:
        return self.loss_history[-1] if self.loss_history else None

    def copy(self) -> "ForecastModel":
        return ForecastModel(self.fourier, self.local.copy(), self.q, self.scales.copy(),
                             list(self.loss_history), self.seed)

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "q": self.q,
            "seed": self.seed,
            "scales": self.scales.tolist(),
            "loss_history": list(self.loss_history),
            "fourier": self.fourier.to_dict(),
            "local": self.local.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastModel":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        return cls(FourierBlock.from_dict(d["fourier"]), LocalBlock.from_dict(d["local"]),
                   d["q"], np.array(d["scales"]), list(d["loss_history"]), d["seed"])


def new_model(
    n_lra: int,
    C: int = 1440,
    H: int = 360,
    d_model: int = 32,
    q: float = 0.5,
    periods: Sequence[int] = (1440, 10080),
    order: int | Sequence[int] = 3,
    seed: int = 0,
) -> ForecastModel:
    """Untrained model: zero Fourier coefficients, freshly initialized local block."""
    orders = (order,) * len(periods) if isinstance(order, int) else tuple(order)
    width = max(orders) + 1
    fourier = FourierBlock(tuple(periods), orders, np.zeros((n_lra, len(periods), width)),
                           np.zeros((n_lra, len(periods), width)))
    local = LocalBlock.init(C, H, d_model, n_features(n_lra), np.random.default_rng(seed))
    return ForecastModel(fourier, local, q, np.ones(n_lra), [], seed)


def save_checkpoint(path, model: ForecastModel, extra: dict | None = None) -> None:
    doc = {"forecast": model.to_dict()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path) -> tuple[ForecastModel, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text())
    return ForecastModel.from_dict(doc.pop("forecast")), doc


# ---------------------------------------------------------------------------
# Training


class _Windows:
    """Residual series and covariates laid out for fast window slicing."""

    def __init__(self, model: ForecastModel, ts: TraceSet):
        self.n = ts.n
        self.start = ts.start_minute
        periodic = eval_fourier_all(model.fourier, ts.minutes)
        resid = ts.matrix - periodic
        # Least-squares leftovers at rounding level are not signal; the pinball
        # gradient only sees their sign, so keep them from driving updates.
        tol = 64 * np.finfo(float).eps * np.maximum(np.abs(ts.matrix), np.abs(periodic))
        resid[np.abs(resid) <= tol] = 0.0
        self.resid = resid / model.scales[:, None]
        self.cal = calendar_features(ts.minutes)

    def batch(self, lras: np.ndarray, anchors: np.ndarray, C: int, H: int):
        hist = anchors[:, None] + np.arange(-C, 1)
        fut = anchors[:, None] + np.arange(1, H + 1)
        r_hist = self.resid[lras[:, None], hist]
        target = self.resid[lras[:, None], fut]
        return (r_hist, _window_covariates(self.cal[hist], lras, np.arange(-C, 1), self.n),
                _window_covariates(self.cal[fut], lras, np.arange(1, H + 1), self.n), target)


def _window_covariates(cal: np.ndarray, lras: np.ndarray, offsets: np.ndarray, n_lra: int) -> np.ndarray:
    """Stack ``(B, T, 11)`` calendar rows with shared offset features and per-row LRA one-hots."""
    B, T = cal.shape[:2]
    onehot = np.zeros((B, n_lra))
    onehot[np.arange(B), lras] = 1.0
    pos = position_features(offsets)
    return np.concatenate([cal, np.broadcast_to(pos, (B, T, pos.shape[1])),
                           np.broadcast_to(onehot[:, None], (B, T, n_lra))], -1)


def training_objective(local: LocalBlock, batch, q: float, with_grad: bool = True):
    r_hist, z_hist, z_fut, target = batch
    if not with_grad:
        return quantile_loss(target, local_forward(local, r_hist, z_hist, z_fut), q)
    yhat, cache = local_forward(local, r_hist, z_hist, z_fut, return_cache=True)
    loss = quantile_loss(target, yhat, q)
    return loss, local_backward(local, quantile_loss_grad(target, yhat, q), cache)


def _sgd_epochs(model: ForecastModel, win: _Windows, length: int, cfg: TrainConfig, epochs: int) -> None:
    C, H = model.local.C, model.local.H
    anchors = np.arange(C, length - H, cfg.stride)
    if anchors.size == 0:
        raise InsufficientHistoryError(f"trace of {length} minutes has no (C={C}, H={H}) window")
    pairs = np.array([(n, a) for n in range(win.n) for a in anchors])
    rng = np.random.default_rng(cfg.seed)
    b1, b2 = cfg.betas
    m1 = {k: np.zeros_like(v) for k, v in model.local.params.items()}
    m2 = {k: np.zeros_like(v) for k, v in model.local.params.items()}
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            sel = pairs[order[lo : lo + cfg.batch_size]]
            loss, grads = training_objective(model.local, win.batch(sel[:, 0], sel[:, 1], C, H), model.q)
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if not (math.isfinite(loss) and math.isfinite(norm)):
                raise TrainingDivergedError(
                    f"non-finite loss/gradient at epoch {epoch}, batch {lo // cfg.batch_size}: "
                    f"loss={loss}, grad_norm={norm}, lr={cfg.lr}"
                )
            clip = min(1.0, cfg.clip_norm / norm) if norm > 0 else 0.0
            step += 1
            for k, g in grads.items():
                g = clip * g
                if cfg.optimizer == "sgd":
                    model.local.params[k] = model.local.params[k] - cfg.lr * g
                    continue
                m1[k] = b1 * m1[k] + (1 - b1) * g
                m2[k] = b2 * m2[k] + (1 - b2) * g * g
                mhat = m1[k] / (1 - b1**step)
                vhat = m2[k] / (1 - b2**step)
                model.local.params[k] = model.local.params[k] - cfg.lr * mhat / (np.sqrt(vhat) + 1e-8)
            losses.append(loss)
        model.loss_history.append(float(np.mean(losses)))
        log.debug("epoch %d loss %.6g", epoch, model.loss_history[-1])


def residual_scales(resid: np.ndarray) -> np.ndarray:
    """Per-LRA robust residual scale (1.4826 x median absolute deviation).

    Unit-scale residuals keep the residual channel on the covariates' scale;
    the median keeps a single extreme burst from shrinking every other input.
    Falls back to the standard deviation, then 1, for near-constant residuals.
    """
    resid = np.atleast_2d(resid)
    med = np.median(resid, axis=1, keepdims=True)
    mad = 1.4826 * np.median(np.abs(resid - med), axis=1)
    std = resid.std(axis=1)
    tiny = 1e-12 * (1.0 + np.abs(resid).max(axis=1))
    return np.where(mad > tiny, mad, np.where(std > tiny, std, 1.0))


def train(
    model: ForecastModel,
    ts: TraceSet,
    cfg: TrainConfig | None = None,
    refit_fourier: bool = True,
) -> ForecastModel:
    """Fit the Fourier block, then SGD on the local block over residual windows.

    Returns a new model; ``model`` is left untouched.
    """
    cfg = cfg or TrainConfig()
    if ts.n != model.n:
        raise ValueError(f"model has {model.n} LRAs, traces have {ts.n}")
    out = model.copy()
    out.seed = cfg.seed
    if refit_fourier:
        out.fourier = fit_fourier(ts, model.fourier.periods, model.fourier.orders)
        out.scales = residual_scales(ts.matrix - eval_fourier_all(out.fourier, ts.minutes))
    _sgd_epochs(out, _Windows(out, ts), ts.length, cfg, cfg.epochs)
    return out


# ---------------------------------------------------------------------------
# Inference


def predict(model: ForecastModel, ts: TraceSet, t: int, horizon: int | None = None) -> np.ndarray:
    """``(N, horizon)`` forecast of minutes ``t+1 .. t+horizon`` from history ending at ``t``.

    Steps beyond the local block's trained horizon carry the periodic part only.
    """
    C, H = model.local.C, model.local.H
    horizon = H if horizon is None else int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if t - C < ts.start_minute or t >= ts.end_minute:
        raise InsufficientHistoryError(f"need minutes [{t - C}, {t}] in trace [{ts.start_minute}, {ts.end_minute})")
    if ts.n != model.n:
        raise ValueError(f"model has {model.n} LRAs, traces have {ts.n}")

    hist_t = np.arange(t - C, t + 1)
    fut_t = np.arange(t + 1, t + horizon + 1)
    y_hist = ts.window(t - C, t + 1)
    periodic_hist = eval_fourier_all(model.fourier, hist_t)
    periodic_fut = eval_fourier_all(model.fourier, fut_t)
    r_hist = (y_hist - periodic_hist) / model.scales[:, None]

    n = model.n
    steps = min(horizon, H)
    lras = np.arange(n)
    cal_h = np.broadcast_to(calendar_features(hist_t), (n, C + 1, N_CALENDAR))
    cal_f = np.broadcast_to(calendar_features(fut_t[:steps]), (n, steps, N_CALENDAR))
    z_hist = _window_covariates(cal_h, lras, np.arange(-C, 1), n)
    z_fut = _window_covariates(cal_f, lras, np.arange(1, steps + 1), n)
    local = local_forward(model.local, r_hist, z_hist, z_fut) * model.scales[:, None]
    out = periodic_fut.copy()
    out[:, :steps] += local
    return np.maximum(out, 0.0)


def interval_peaks(forecast, h: int, D: int) -> np.ndarray:
    """Per-interval, per-LRA maxima: row ``j`` covers forecast steps ``(j h, (j+1) h]``.

    ``forecast`` is ``(N, T)`` (also ``(N, W, T)`` for rolling windows, giving
    ``(N, W, D+1)``) with ``T >= (D+1) h``; returns ``(D+1, N)`` for 2-d input.
    """
    f = np.asarray(forecast, dtype=float)
    need = (D + 1) * h
    if f.shape[-1] < need:
        raise ValueError(f"forecast horizon {f.shape[-1]} < (D+1)*h = {need}")
    blocks = f[..., :need].reshape(f.shape[:-1] + (D + 1, h)).max(axis=-1)
    return blocks.T if f.ndim == 2 else blocks


# ---------------------------------------------------------------------------
# Forecast providers used by the simulator.  ``forecast(origin, horizon)``
# returns the ``(N, horizon)`` prediction of minutes ``origin+1 ..``.


class RollingForecaster:
    """Serves :func:`predict` with periodic retraining on data seen so far.

    ``model`` must have been trained on ``[train_start, trained_until)``.  At
    each multiple of ``retrain_every`` after ``trained_until`` (epoch-aligned,
    so daily retraining happens at midnight) the Fourier block is refit on all
    history and the local block fine-tuned for ``retrain_epochs`` epochs.
    Forecasts are cached per origin, so strategies sharing one provider see
    identical predictions.
    """

    def __init__(self, model: ForecastModel, ts: TraceSet, trained_until: int | None = None,
                 retrain_every: int | None = MINUTES_PER_DAY, retrain_epochs: int = 1,
                 train_config: TrainConfig | None = None, train_start: int | None = None):
        self.base = model
        self.ts = ts
        self.train_start = ts.start_minute if train_start is None else train_start
        self.trained_until = ts.end_minute if trained_until is None else trained_until
        self.retrain_every = retrain_every
        self.retrain_epochs = retrain_epochs
        self.cfg = train_config or TrainConfig()
        self._models: dict[int, ForecastModel] = {}
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def _model_for_boundary(self, boundary: int) -> ForecastModel:
        if boundary <= self.trained_until:
            return self.base
        if boundary not in self._models:
            prev = self._model_for_boundary(boundary - self.retrain_every)
            cfg = TrainConfig(**{**self.cfg.__dict__, "epochs": self.retrain_epochs,
                                 "seed": self.cfg.seed + boundary})
            self._models[boundary] = train(prev, self.ts.slice(self.train_start, boundary), cfg)
        return self._models[boundary]

    def model_at(self, origin: int) -> ForecastModel:
        """Model available once minute ``origin`` has been observed."""
        if not self.retrain_every or self.retrain_epochs < 0:
            return self.base
        return self._model_for_boundary(((origin + 1) // self.retrain_every) * self.retrain_every)

    def forecast(self, origin: int, horizon: int) -> np.ndarray:
        key = (origin, horizon)
        if key not in self._cache:
            self._cache[key] = predict(self.model_at(origin), self.ts, origin, horizon)
        return self._cache[key]


class OracleForecaster:
    """Perfect foresight (reads the future from the trace)."""

    def __init__(self, ts: TraceSet):
        self.ts = ts

    def forecast(self, origin: int, horizon: int) -> np.ndarray:
        hi = min(origin + 1 + horizon, self.ts.end_minute)
        out = self.ts.window(origin + 1, hi)
        if out.shape[1] < horizon:
            out = np.hstack([out, np.repeat(out[:, -1:], horizon - out.shape[1], axis=1)])
        return out


class SeasonalNaiveForecaster:
    """Repeat the value observed one period earlier."""

    def __init__(self, ts: TraceSet, period: int = MINUTES_PER_DAY):
        self.ts = ts
        self.period = period

    def forecast(self, origin: int, horizon: int) -> np.ndarray:
        if origin + 1 - self.period < self.ts.start_minute:
            raise InsufficientHistoryError("seasonal naive needs one full period of history")
        steps = np.arange(origin + 1, origin + 1 + horizon)
        back = steps - self.period * np.ceil((steps - origin) / self.period).astype(int)
        return self.ts.matrix[:, back - self.ts.start_minute]
