"""Proactive workload forecasting."""

from .attention import flow_attention, flow_attention_backward
from .fourier import FourierBlock, RankDeficientError, eval_fourier, eval_fourier_all, fit_fourier
from .local import (
    N_CALENDAR,
    N_POSITION,
    LocalBlock,
    calendar_features,
    covariates,
    local_backward,
    local_forward,
    n_features,
    position_features,
)
from .model import (
    ForecastModel,
    InsufficientHistoryError,
    OracleForecaster,
    RollingForecaster,
    SeasonalNaiveForecaster,
    TrainConfig,
    TrainingDivergedError,
    interval_peaks,
    load_checkpoint,
    new_model,
    predict,
    quantile_loss,
    save_checkpoint,
    train,
)

__all__ = [
    "FourierBlock", "ForecastModel", "InsufficientHistoryError", "LocalBlock", "OracleForecaster",
    "RankDeficientError", "RollingForecaster", "SeasonalNaiveForecaster", "TrainConfig",
    "TrainingDivergedError", "N_CALENDAR", "N_POSITION", "calendar_features", "covariates", "n_features", "position_features", "eval_fourier", "eval_fourier_all",
    "fit_fourier", "flow_attention", "flow_attention_backward", "interval_peaks", "load_checkpoint",
    "local_backward", "local_forward", "new_model", "predict", "quantile_loss", "save_checkpoint", "train",
]
