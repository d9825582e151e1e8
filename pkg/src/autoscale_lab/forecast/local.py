"""Short-term local block: one flow-attention encoder and one decoder layer.

The encoder attends over the projected history ``[residual, covariates]``.
The decoder's queries are the projected future covariates, its keys the
projected historical covariates and its values the encoder output, so every
future step is produced in one shot, independent of other predictions.

Besides the calendar and LRA one-hot, each covariate row carries features of
its offset from the forecast origin.  Calendar features alone cannot tell the
most recent history minute from one six hours earlier, which leaves the
linear kernel no way to weight recent residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..trace import MINUTES_PER_DAY, MINUTES_PER_WEEK
from .attention import flow_attention, flow_attention_backward

N_CALENDAR = 11  # sin/cos day, sin/cos week, 7 day-of-week one-hot
N_POSITION = 3  # offset / 360, exp(-|offset| / 30), exp(-|offset| / 120)

PARAM_NAMES = (
    "W_in", "b_in", "Wq_e", "Wk_e", "Wv_e",
    "W_z", "b_z", "Wq_d", "Wk_d", "Wv_d",
    "w_out", "b_out",
)


def calendar_features(minutes) -> np.ndarray:
    """``(len, 11)`` calendar covariates for epoch minutes (epoch day 0 is a Thursday)."""
    t = np.asarray(minutes, dtype=np.int64)
    day = 2 * np.pi * (t % MINUTES_PER_DAY) / MINUTES_PER_DAY
    week = 2 * np.pi * (t % MINUTES_PER_WEEK) / MINUTES_PER_WEEK
    dow = (t // MINUTES_PER_DAY + 3) % 7
    out = np.zeros((t.size, N_CALENDAR))
    out[:, 0], out[:, 1] = np.sin(day), np.cos(day)
    out[:, 2], out[:, 3] = np.sin(week), np.cos(week)
    out[np.arange(t.size), 4 + dow] = 1.0
    return out


def position_features(offsets) -> np.ndarray:
    """``(len, 3)`` features of the offset (minutes) from the forecast origin."""
    k = np.asarray(offsets, dtype=float)
    return np.column_stack([k / 360.0, np.exp(-np.abs(k) / 30.0), np.exp(-np.abs(k) / 120.0)])


def covariates(minutes, origin: int, lra: int, n_lra: int) -> np.ndarray:
    """Calendar and origin-offset features followed by the LRA one-hot."""
    minutes = np.asarray(minutes, dtype=np.int64)
    onehot = np.zeros((minutes.size, n_lra))
    onehot[:, lra] = 1.0
    return np.hstack([calendar_features(minutes), position_features(minutes - origin), onehot])


def n_features(n_lra: int) -> int:
    return N_CALENDAR + N_POSITION + n_lra


@dataclass
class LocalBlock:
    C: int
    H: int
    d_model: int
    n_features: int
    params: dict

    def __post_init__(self):
        if not self.C >= self.H >= 1:
            raise ValueError(f"need C >= H >= 1, got C={self.C}, H={self.H}")
        for k in PARAM_NAMES:
            if k not in self.params:
                raise ValueError(f"missing parameter {k}")
            if not np.all(np.isfinite(self.params[k])):
                raise ValueError(f"parameter {k} is not finite")

    @classmethod
    def init(cls, C: int, H: int, d_model: int, n_features: int, rng: np.random.Generator) -> "LocalBlock":
        d, f = d_model, n_features

        def glorot(fan_in, fan_out):
            return rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)

        params = {
            "W_in": glorot(f + 1, d), "b_in": np.zeros(d),
            "Wq_e": glorot(d, d), "Wk_e": glorot(d, d), "Wv_e": glorot(d, d),
            "W_z": glorot(f, d), "b_z": np.zeros(d),
            "Wq_d": glorot(d, d), "Wk_d": glorot(d, d), "Wv_d": glorot(d, d),
            # zero output projection: an untrained block predicts no residual
            "w_out": np.zeros(d), "b_out": np.zeros(()),
        }
        return cls(C, H, d_model, n_features, params)

    @classmethod
    def zeros(cls, C: int, H: int, d_model: int, n_features: int) -> "LocalBlock":
        blk = cls.init(C, H, d_model, n_features, np.random.default_rng(0))
        blk.params = {k: np.zeros_like(v) for k, v in blk.params.items()}
        return blk

    def copy(self) -> "LocalBlock":
        return LocalBlock(self.C, self.H, self.d_model, self.n_features,
                          {k: np.array(v, copy=True) for k, v in self.params.items()})

    def to_dict(self) -> dict:
        return {"C": self.C, "H": self.H, "d_model": self.d_model, "n_features": self.n_features,
                "params": {k: np.asarray(v).tolist() for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "LocalBlock":
        params = {k: np.array(v, dtype=float) for k, v in d["params"].items()}
        return cls(d["C"], d["H"], d["d_model"], d["n_features"], params)


def _outer(A, B):
    """``sum_{b,i} A[b,i,:]^T B[b,i,:]``."""
    return A.reshape(-1, A.shape[-1]).T @ B.reshape(-1, B.shape[-1])


def local_forward(block: LocalBlock, r_hist, z_hist, z_fut, return_cache: bool = False):
    """Predict future residuals.

    ``r_hist: (B, C+1)``, ``z_hist: (B, C+1, F)``, ``z_fut: (B, H', F)`` with
    any ``H' >= 1``; returns ``(B, H')``.  Unbatched inputs are accepted.
    """
    squeeze = np.ndim(r_hist) == 1
    if squeeze:
        r_hist, z_hist, z_fut = r_hist[None], z_hist[None], z_fut[None]
    r_hist = np.asarray(r_hist, dtype=float)
    if r_hist.shape[1] != block.C + 1 or z_hist.shape[:2] != r_hist.shape:
        raise ValueError(f"history must have C+1={block.C + 1} steps, got {r_hist.shape} / {z_hist.shape}")
    if z_hist.shape[2] != block.n_features or z_fut.shape[2] != block.n_features:
        raise ValueError(f"covariates must have {block.n_features} features")
    P = block.params

    X = np.concatenate([r_hist[..., None], z_hist], axis=-1)
    E = X @ P["W_in"] + P["b_in"]
    Ae, c_enc = flow_attention(E @ P["Wq_e"], E @ P["Wk_e"], E @ P["Wv_e"], return_cache=True)
    Henc = E + Ae
    Zh = z_hist @ P["W_z"] + P["b_z"]
    Zf = z_fut @ P["W_z"] + P["b_z"]
    Ad, c_dec = flow_attention(Zf @ P["Wq_d"], Zh @ P["Wk_d"], Henc @ P["Wv_d"], return_cache=True)
    y = Ad @ P["w_out"] + P["b_out"]

    if squeeze:
        y = y[0]
    if not return_cache:
        return y
    cache = dict(X=X, E=E, Henc=Henc, Zh=Zh, Zf=Zf, Ad=Ad, z_hist=z_hist, z_fut=z_fut,
                 c_enc=c_enc, c_dec=c_dec, squeeze=squeeze)
    return y, cache


def local_backward(block: LocalBlock, dy, cache) -> dict:
    """Parameter gradients given ``dL/dy`` of shape ``(B, H')``."""
    P, c = block.params, cache
    if c["squeeze"]:
        dy = dy[None]
    g = {}
    g["w_out"] = dy.reshape(-1) @ c["Ad"].reshape(-1, c["Ad"].shape[-1])
    g["b_out"] = np.asarray(dy.sum())
    dAd = dy[..., None] * P["w_out"]

    dQd, dKd, dVd = flow_attention_backward(dAd, c["c_dec"])
    g["Wq_d"] = _outer(c["Zf"], dQd)
    g["Wk_d"] = _outer(c["Zh"], dKd)
    g["Wv_d"] = _outer(c["Henc"], dVd)
    dZf = dQd @ P["Wq_d"].T
    dZh = dKd @ P["Wk_d"].T
    dHenc = dVd @ P["Wv_d"].T
    g["W_z"] = _outer(c["z_fut"], dZf) + _outer(c["z_hist"], dZh)
    g["b_z"] = dZf.sum(axis=(0, 1)) + dZh.sum(axis=(0, 1))

    E = c["E"]
    dQe, dKe, dVe = flow_attention_backward(dHenc, c["c_enc"])
    g["Wq_e"] = _outer(E, dQe)
    g["Wk_e"] = _outer(E, dKe)
    g["Wv_e"] = _outer(E, dVe)
    dE = dHenc + dQe @ P["Wq_e"].T + dKe @ P["Wk_e"].T + dVe @ P["Wv_e"].T
    g["W_in"] = _outer(c["X"], dE)
    g["b_in"] = dE.sum(axis=(0, 1))
    return g
