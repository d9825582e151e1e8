"""JSON experiment configuration with eager validation and seed splitting.

Every section has defaults, so ``{}`` is a complete configuration describing
the built-in synthetic benchmark.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .mpc import ConfigurationError, ScalingLimits, normal_quantile
from .scalers import ScalerConfig
from .trace import MINUTES_PER_DAY, Spike, SynthSpec


def derive_seed(root: int, name: str) -> int:
    """Independent 63-bit seed for component ``name`` under ``root``.

    ``SeedSequence([root, crc32(name)])`` expanded to one 64-bit word, top bit
    dropped.  Changing one component's name never shifts another's stream.
    """
    ss = np.random.SeedSequence([int(root) % 2**64, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _build(cls, d: dict | None, section: str):
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigurationError(f"unknown keys in {section}: {sorted(unknown)}")
    return cls(**d)


def _default_lras() -> dict:
    # A daily 2.5x evening surge on both LRAs: predictable, but steeper than
    # one interval of ramp can follow, so planning further ahead pays off.
    surge = [{"start": 1200, "duration": 120, "factor": 2.5, "period": 1440}]
    return {
        "web": {"base": 750.0, "daily_amplitude": 0.5, "weekly_amplitude": 0.1,
                "noise_std": 37.5, "ar_coef": 0.99, "spikes": surge},
        "pay": {"base": 500.0, "daily_amplitude": 0.6, "weekly_amplitude": 0.2,
                "noise_std": 25.0, "ar_coef": 0.99, "daily_phase": 240, "weekly_phase": 2880,
                "spikes": surge},
    }


@dataclass(frozen=True)
class TraceConfig:
    source: str = "synthetic"  # synthetic | file
    path: str | None = None
    start_minute: int = 0
    days: float = 15.0
    lras: dict = field(default_factory=_default_lras)

    def __post_init__(self):
        if self.source not in ("synthetic", "file"):
            raise ConfigurationError("traces.source must be 'synthetic' or 'file'")
        if self.source == "file" and not self.path:
            raise ConfigurationError("traces.path is required for file traces")
        if self.source == "synthetic":
            if not self.lras:
                raise ConfigurationError("traces.lras must define at least one LRA")
            for name in self.lras:
                self.synth_spec(name, 0)

    @property
    def length(self) -> int:
        return int(round(self.days * MINUTES_PER_DAY))

    def synth_spec(self, name: str, seed: int) -> SynthSpec:
        d = dict(self.lras[name])
        d.pop("seed", None)
        try:
            spikes = tuple(Spike(**s) for s in d.pop("spikes", ()))
            spec = SynthSpec(**d, spikes=spikes, seed=seed)
        except TypeError as exc:
            raise ConfigurationError(f"traces.lras.{name}: {exc}") from None
        if spec.base <= 0 or spec.noise_std < 0 or not 0 <= spec.ar_coef < 1:
            raise ConfigurationError(f"traces.lras.{name}: need base > 0, noise_std >= 0, 0 <= ar_coef < 1")
        return spec


@dataclass(frozen=True)
class ModelConfig:
    C: int = 360
    H: int = 360
    d_model: int = 16
    q: float = 0.5
    periods: tuple = (1440, 10080)
    orders: tuple = (24, 4)
    epochs: int = 10
    lr: float = 0.003
    optimizer: str = "adam"
    batch_size: int = 16
    stride: int = 60
    clip_norm: float = 10.0
    retrain_every: int | None = 1440
    retrain_epochs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        object.__setattr__(self, "orders", tuple(int(o) for o in self.orders))
        if not self.C >= self.H >= 1:
            raise ConfigurationError("model: need C >= H >= 1")
        if not 0 < self.q < 1:
            raise ConfigurationError("model.q must lie in (0, 1)")
        if len(self.periods) != len(self.orders) or any(p <= 0 for p in self.periods) or any(o < 0 for o in self.orders):
            raise ConfigurationError("model: one non-negative order per positive period")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError("model.optimizer must be 'adam' or 'sgd'")
        if min(self.d_model, self.batch_size, self.stride) < 1 or self.lr <= 0 or self.epochs < 0:
            raise ConfigurationError("model: d_model, batch_size, stride >= 1; lr > 0; epochs >= 0")


@dataclass(frozen=True)
class GroundTruthConfig:
    """Base CPU model; with ``fit`` the scalers start from an MLE fit on warm-up feedback
    and the true slopes are that fit times ``1 + perturb``."""

    w_b: float = 0.1
    w_k: tuple = (0.04, 0.048)
    sigma_b: float = 0.01
    sigma_k: tuple = (0.0008, 0.0008)
    perturb: float = 0.1
    gamma: float = 0.1
    # slower than the diurnal cycle, so drift is not phase-locked to the workload
    drift_period: int = 5760
    drift_offset: int = 0  # minutes after evaluation start
    fit: bool = True
    warmup_days: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "w_k", tuple(float(v) for v in self.w_k))
        object.__setattr__(self, "sigma_k", tuple(float(v) for v in self.sigma_k))
        if len(self.w_k) != len(self.sigma_k):
            raise ConfigurationError("ground_truth: w_k and sigma_k need equal lengths")
        if min(self.w_k + self.sigma_k + (self.sigma_b,)) < 0:
            raise ConfigurationError("ground_truth: slopes and sigmas must be non-negative")
        if not 0 <= self.gamma < 1 or self.drift_period <= 0 or self.perturb <= -1:
            raise ConfigurationError("ground_truth: need 0 <= gamma < 1, drift_period > 0, perturb > -1")
        if self.warmup_days <= 0:
            raise ConfigurationError("ground_truth.warmup_days must be positive")


@dataclass(frozen=True)
class SpikeConfig:
    """A one-off burst ``offset`` minutes after evaluation start."""

    offset: int = 600
    duration: int = 30
    factor: float = 10.0
    lras: tuple | None = None

    def __post_init__(self):
        if self.duration < 1 or self.factor <= 0 or self.offset < 0:
            raise ConfigurationError("spike: need offset >= 0, duration >= 1, factor > 0")


def _default_scalers() -> tuple:
    return (
        ScalerConfig(kind="autopilot", percentile=0.9),
        ScalerConfig(kind="autopilot", percentile=0.95),
        ScalerConfig(kind="madu", D=1),
        ScalerConfig(kind="madu", D=11),
        ScalerConfig(kind="has", D=1),
        ScalerConfig(kind="has", D=11),
        ScalerConfig(kind="optscaler", D=1),
        ScalerConfig(kind="optscaler", D=11),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    traces: TraceConfig = field(default_factory=TraceConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    limits: ScalingLimits = field(default_factory=ScalingLimits)
    ground_truth: GroundTruthConfig = field(default_factory=GroundTruthConfig)
    scalers: tuple = field(default_factory=_default_scalers)
    spike: SpikeConfig | None = None
    c_star: float = 0.5
    alpha: float = 0.95
    train_days: float = 12.0
    eval_days: float = 2.0
    forecaster: str = "model"  # model | oracle | naive
    repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.c_star < 1 or not 0 < self.alpha < 1:
            raise ConfigurationError("c_star and alpha must lie in (0, 1)")
        if self.forecaster not in ("model", "oracle", "naive"):
            raise ConfigurationError("forecaster must be 'model', 'oracle' or 'naive'")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        if self.train_days <= 0 or self.eval_days <= 0:
            raise ConfigurationError("train_days and eval_days must be positive")
        if not self.scalers:
            raise ConfigurationError("at least one scaler is required")
        gt = self.ground_truth
        den = self.c_star - gt.w_b - normal_quantile(self.alpha) * gt.sigma_b
        if den <= 0:
            raise ConfigurationError(
                f"c_star - w_b - z(alpha) sigma_b = {den:.6g} <= 0: the chance bound is unreachable"
            )
        if self.traces.source == "synthetic":
            if len(gt.w_k) != len(self.traces.lras):
                raise ConfigurationError(
                    f"ground_truth.w_k has {len(gt.w_k)} entries for {len(self.traces.lras)} LRAs"
                )
            if self.traces.length < self.train_minutes + MINUTES_PER_DAY // 24:
                raise ConfigurationError("traces.days leaves no evaluation window after training")
        if gt.warmup_days > self.train_days:
            raise ConfigurationError("ground_truth.warmup_days exceeds train_days")
        if self.model.C + self.model.H >= self.train_minutes:
            raise ConfigurationError("training span shorter than one (C, H) window")

    @property
    def train_minutes(self) -> int:
        return int(round(self.train_days * MINUTES_PER_DAY))

    @property
    def eval_minutes(self) -> int:
        return int(round(self.eval_days * MINUTES_PER_DAY))

    @property
    def max_D(self) -> int:
        return max(s.D for s in self.scalers if s.kind != "autopilot") if any(
            s.kind != "autopilot" for s in self.scalers) else 0

    def with_scalers(self, scalers) -> "ExperimentConfig":
        return replace(self, scalers=tuple(scalers))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["limits"] = asdict(self.limits)
        d["scalers"] = [s.to_dict() for s in self.scalers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k not in ("traces", "model", "limits", "ground_truth", "scalers", "spike")}
        try:
            if "traces" in d:
                kw["traces"] = _build(TraceConfig, d["traces"], "traces")
            if "model" in d:
                kw["model"] = _build(ModelConfig, d["model"], "model")
            if "limits" in d:
                kw["limits"] = _build(ScalingLimits, d["limits"], "limits")
            if "ground_truth" in d:
                kw["ground_truth"] = _build(GroundTruthConfig, d["ground_truth"], "ground_truth")
            if "scalers" in d:
                kw["scalers"] = tuple(ScalerConfig.from_dict(s) for s in d["scalers"])
            if d.get("spike") is not None:
                spike = dict(d["spike"])
                if spike.get("lras") is not None:
                    spike["lras"] = tuple(spike["lras"])
                kw["spike"] = _build(SpikeConfig, spike, "spike")
            return cls(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config (``None`` means all defaults) and apply top-level overrides."""
    d = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON in {p}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigurationError("config root must be a JSON object")
    d.update(overrides or {})
    return ExperimentConfig.from_dict(d)
