"""Online ARI(p, d) workload forecasting and averaging-bin selection."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Forecast:
    horizon_s: float
    interval_s: float
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


class ForecastModel:
    """Sliding-window autoregression on (optionally differenced) rates.

    Coefficients are refit by ordinary least squares on every ``update``. With
    ``d == 1`` no intercept is used, so a constant slope is a fixed point of
    the recursion; with ``d == 0`` an intercept carries the series mean.
    Until ``4 * p`` samples have been seen the model is cold and forecasts by
    persistence of the last value.
    """

    def __init__(self, p: int = 3, d: int = 1, window_len: int = 120, interval_s: float = 10.0):
        if p < 1:
            raise ValueError("p must be >= 1")
        if d not in (0, 1):
            raise ValueError("d must be 0 or 1")
        if window_len < 4 * p:
            raise ValueError("window_len must be >= 4 * p")
        if interval_s <= 0:
            raise ValueError("interval_s must be > 0")
        self.p = p
        self.d = d
        self.window_len = window_len
        self.interval_s = interval_s
        self.history: deque[float] = deque(maxlen=window_len)
        self.coef = np.zeros(p)
        self.intercept = 0.0
        self.residual_var = 0.0
        self._fitted = False

    @classmethod
    def with_coefficients(cls, coef, intercept=0.0, d=0, history=(), interval_s=10.0):
        """Build a warm model with fixed coefficients (no refit until the next update)."""
        coef = np.asarray(coef, dtype=float)
        model = cls(p=len(coef), d=d, window_len=max(4 * len(coef), len(history), 4),
                    interval_s=interval_s)
        model.history.extend(float(v) for v in history)
        model.coef = coef
        model.intercept = float(intercept)
        model._fitted = True
        return model

    @property
    def cold(self) -> bool:
        return not self._fitted

    def update(self, sample: float) -> "ForecastModel":
        if sample < 0:
            raise ValueError("rate samples must be >= 0")
        self.history.append(float(sample))
        self._refit()
        return self

    def _refit(self) -> None:
        if len(self.history) < 4 * self.p:
            self._fitted = False
            return
        series = np.asarray(self.history)
        z = np.diff(series) if self.d == 1 else series
        p = self.p
        if len(z) <= p:
            self._fitted = False
            return
        # row t: [z_{t-1}, ..., z_{t-p}]
        lags = np.column_stack([z[p - k - 1: len(z) - k - 1] for k in range(p)])
        target = z[p:]
        if self.d == 0:
            design = np.column_stack([lags, np.ones(len(target))])
        else:
            design = lags
        sol, *_ = np.linalg.lstsq(design, target, rcond=None)
        if self.d == 0:
            self.coef, self.intercept = sol[:p], float(sol[p])
        else:
            self.coef, self.intercept = sol, 0.0
        resid = target - design @ sol
        self.residual_var = float(np.mean(resid ** 2))
        self._fitted = True

    def predict(self, horizon_s: float) -> Forecast:
        if horizon_s <= 0:
            raise ValueError("horizon_s must be > 0")
        steps = int(round(horizon_s / self.interval_s))
        steps = max(steps, 1)
        if not self.history:
            return Forecast(horizon_s, self.interval_s, np.zeros(steps))
        last = self.history[-1]
        if self.cold:
            return Forecast(horizon_s, self.interval_s, np.full(steps, max(last, 0.0)))

        series = list(self.history)
        if self.d == 1:
            z = list(np.diff(series)) if len(series) > 1 else [0.0]
        else:
            z = series
        z = [0.0] * max(0, self.p - len(z)) + z
        level = series[-1]
        out = np.empty(steps)
        for i in range(steps):
            nxt = self.intercept + sum(self.coef[k] * z[-1 - k] for k in range(self.p))
            z.append(nxt)
            if self.d == 1:
                level += nxt
                out[i] = level
            else:
                out[i] = nxt
        return Forecast(horizon_s, self.interval_s, np.maximum(out, 0.0))


def select_bin(forecast: Forecast | np.ndarray, n_bins: int) -> float:
    """Mean of the averaging bin with the highest mean.

    When ``n_bins`` does not divide the forecast length the series is padded
    by repeating its last value.
    """
    values = np.asarray(forecast.values if isinstance(forecast, Forecast) else forecast, float)
    if values.size == 0:
        raise ValueError("empty forecast")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    n_bins = min(n_bins, values.size)
    per_bin = -(-values.size // n_bins)
    pad = per_bin * n_bins - values.size
    if pad:
        values = np.concatenate([values, np.full(pad, values[-1])])
    return float(values.reshape(n_bins, per_bin).mean(axis=1).max())
