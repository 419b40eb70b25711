import logging
from dataclasses import dataclass, field

import numpy as np

import config
from experiments.metrics import rmse
from utils.errors import InsufficientHistoryError, InvalidConfigError

logger = logging.getLogger(__name__)

VALIDATION_FRACTION = 0.2
REFINEMENTS = 2


@dataclass
class ArimaModel:
    """
    ARIMA(p, d, q) with intercept, fitted by conditional least squares.
    `history` is the undifferenced series the model conditions on; `residuals` align with its d-th difference.
    """
    p: int
    d: int
    q: int
    ar: np.ndarray
    ma: np.ndarray
    intercept: float = 0.0
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residuals: np.ndarray = None
    validation_rmse: float = float("nan")

    def __post_init__(self):
        self.ar = np.asarray(self.ar, dtype=float).reshape(-1)
        self.ma = np.asarray(self.ma, dtype=float).reshape(-1)
        self.history = np.asarray(self.history, dtype=float).reshape(-1)
        if self.d not in (0, 1):
            raise InvalidConfigError(f"d must be 0 or 1, got {self.d}")
        if len(self.ar) != self.p or len(self.ma) != self.q:
            raise InvalidConfigError(f"Coefficient counts do not match order ({self.p}, {self.d}, {self.q})")
        if self.residuals is None:
            self.residuals = _residuals(self.differenced(), self.intercept, self.ar, self.ma)

    @property
    def order(self):
        return self.p, self.d, self.q

    def differenced(self):
        return np.diff(self.history, n=self.d) if self.d else self.history.copy()

    def with_history(self, series):
        """Same coefficients conditioned on a different observed series."""
        return ArimaModel(self.p, self.d, self.q, self.ar, self.ma, self.intercept, series,
                          validation_rmse=self.validation_rmse)


def _lags(values, lags, start):
    rows = len(values) - start
    if lags == 0:
        return np.empty((rows, 0))
    return np.column_stack([values[start - i:len(values) - i] for i in range(1, lags + 1)])


def _residuals(y, intercept, ar, ma):
    p, q = len(ar), len(ma)
    e = np.zeros(len(y))
    for t in range(p, len(y)):
        pred = intercept + (ar @ y[t - p:t][::-1] if p else 0.0)
        if q:
            past = e[max(0, t - q):t][::-1]
            pred += ma[:len(past)] @ past
        e[t] = y[t] - pred
    return e


def _long_ar_residuals(y, order):
    """First Hannan-Rissanen stage: residuals of a long autoregression."""
    order = min(order, max(1, len(y) // 3))
    if len(y) - order < order + 2:
        return y - y.mean()
    X = np.column_stack([np.ones(len(y) - order), _lags(y, order, order)])
    coef, *_ = np.linalg.lstsq(X, y[order:], rcond=None)
    e = np.zeros(len(y))
    e[order:] = y[order:] - X @ coef
    return e


def fit_arima_order(series, p, d, q, refinements=REFINEMENTS):
    """
    Conditional least squares for one (p, d, q).
    :raises InsufficientHistoryError: fewer than 3(p+q) differenced observations
    """
    series = np.asarray(series, dtype=float)
    y = np.diff(series, n=d) if d else series.copy()
    start = max(p, q)
    if len(y) < 3 * (p + q) or len(y) - start < p + q + 1:
        raise InsufficientHistoryError(f"Series of {len(y)} points too short for ARIMA({p},{d},{q})")

    e = _long_ar_residuals(y, max(p, q) + 5)
    scale = max(float(np.std(y)), 1.0)
    intercept, ar, ma = 0.0, np.zeros(p), np.zeros(q)
    for _ in range(1 + refinements):
        X = np.column_stack([np.ones(len(y) - start), _lags(y, p, start), _lags(e, q, start)])
        coef, *_ = np.linalg.lstsq(X, y[start:], rcond=None)
        candidate = (float(coef[0]), coef[1:1 + p], coef[1 + p:])
        e_next = _residuals(y, *candidate)
        if not np.all(np.isfinite(e_next)) or np.max(np.abs(e_next)) > 1e6 * scale:
            # non-invertible MA part; keep the last stable estimate
            break
        intercept, ar, ma = candidate
        e = e_next
    return ArimaModel(p, d, q, ar, ma, intercept, series)


def one_step_predictions(model, series):
    """One-step-ahead level predictions for every series index the model can condition on (NaN elsewhere)."""
    series = np.asarray(series, dtype=float)
    conditioned = model.with_history(series)
    y = conditioned.differenced()
    fitted = y - conditioned.residuals
    preds = np.full(len(series), np.nan)
    offset = model.d
    for t in range(model.p, len(y)):
        base = series[t + offset - 1] if model.d else 0.0
        preds[t + offset] = base + fitted[t]
    return preds


def fit_arima(series, d=None, max_order=config.ARIMA_MAX_ORDER, validation_fraction=VALIDATION_FRACTION):
    """
    Grid over p, q in 1..max_order and d in {0, 1} (or the given d).
    Each cell is fitted on the leading part of the series and scored by one-step RMSE on the rest;
    the winning order is refitted on the whole series. Cells whose series is too short are skipped.
    """
    series = np.asarray(series, dtype=float)
    n_val = max(1, int(round(len(series) * validation_fraction)))
    fit_part = series[:len(series) - n_val]
    d_values = (0, 1) if d is None else (d,)

    best = None
    for d_value in d_values:
        for p in range(1, max_order + 1):
            for q in range(1, max_order + 1):
                try:
                    model = fit_arima_order(fit_part, p, d_value, q)
                except InsufficientHistoryError:
                    continue
                preds = one_step_predictions(model, series)[len(fit_part):]
                if not np.all(np.isfinite(preds)):
                    continue
                score = rmse(preds, series[len(fit_part):])
                if best is None or score < best[0]:
                    best = (score, (p, d_value, q))
    if best is None:
        raise InsufficientHistoryError(f"No ARIMA order fits a series of {len(series)} points")

    score, (p, d_value, q) = best
    try:
        model = fit_arima_order(series, p, d_value, q)
    except InsufficientHistoryError:
        model = fit_arima_order(fit_part, p, d_value, q).with_history(series)
    model.validation_rmse = score
    logger.info(f"Selected ARIMA({p},{d_value},{q}) with validation RMSE {score:.4f}")
    return model


def forecast_arima(model, horizon=5):
    """Recursive forecast: each prediction is fed back as the next observation, future shocks are zero."""
    if horizon <= 0:
        return np.zeros(0)
    y = list(model.differenced())
    e = list(model.residuals)
    out = []
    for _ in range(horizon):
        pred = model.intercept
        for i in range(1, model.p + 1):
            if len(y) - i >= 0:
                pred += model.ar[i - 1] * y[-i]
        for j in range(1, model.q + 1):
            if len(e) - j >= 0:
                pred += model.ma[j - 1] * e[-j]
        y.append(pred)
        e.append(0.0)
        out.append(pred)
    out = np.array(out)
    if model.d:
        last = model.history[-1] if len(model.history) else 0.0
        out = last + np.cumsum(out)
    return out


def rolling_forecasts(model, series, origins, step):
    """
    Step-ahead forecasts from each origin, conditioning on series[:origin + 1] with fixed coefficients.
    :return: array aligned with `origins`
    """
    series = np.asarray(series, dtype=float)
    return np.array([forecast_arima(model.with_history(series[:origin + 1]), step)[step - 1] for origin in origins])
