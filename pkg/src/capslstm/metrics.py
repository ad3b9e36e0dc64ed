"""Forecast accuracy metrics (RMSE, MAE, MAPE, TIC) per forecasting horizon."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import NormParams, denormalize
from .model import ArchSpec, model_forward
from .numcore import ParameterSet, Tensor

__all__ = [
    "MetricError",
    "MapeUndefinedError",
    "TicUndefinedError",
    "Metrics",
    "MetricsReport",
    "rmse",
    "mae",
    "mape",
    "tic",
    "compute_metrics",
    "evaluate_model",
]

MAPE_GUARD = 1e-12


class MetricError(ValueError):
    pass


class MapeUndefinedError(MetricError):
    """An actual value is (numerically) zero."""


class TicUndefinedError(MetricError):
    """Both series are identically zero."""


def _pair(actual, predicted):
    y = np.ravel(np.asarray(actual.data if isinstance(actual, Tensor) else actual, dtype=np.float64))
    p = np.ravel(np.asarray(predicted.data if isinstance(predicted, Tensor) else predicted,
                            dtype=np.float64))
    if y.shape != p.shape:
        raise MetricError(f"actual has {y.size} values, predicted {p.size}")
    if y.size == 0:
        raise MetricError("no values to score")
    return y, p


def rmse(actual, predicted) -> float:
    y, p = _pair(actual, predicted)
    return float(np.sqrt(np.mean((y - p) ** 2)))


def mae(actual, predicted) -> float:
    y, p = _pair(actual, predicted)
    return float(np.mean(np.abs(y - p)))


def mape(actual, predicted) -> float:
    """Mean absolute percentage error, in percent."""
    y, p = _pair(actual, predicted)
    if np.any(np.abs(y) <= MAPE_GUARD):
        raise MapeUndefinedError("MAPE is undefined: an actual value is zero")
    return float(100.0 * np.mean(np.abs((y - p) / y)))


def tic(actual, predicted) -> float:
    """Theil inequality coefficient, in [0, 1] for non-negative series."""
    y, p = _pair(actual, predicted)
    den = np.sqrt(np.mean(y * y)) + np.sqrt(np.mean(p * p))
    if den <= 0:
        raise TicUndefinedError("TIC is undefined: both series are zero")
    return float(np.sqrt(np.mean((y - p) ** 2)) / den)


class Metrics(NamedTuple):
    rmse: float
    mae: float
    mape: float
    tic: float


def compute_metrics(actual, predicted, strict: bool = True) -> Metrics:
    """All four metrics for one series pair.

    With ``strict=False`` an undefined MAPE or TIC is reported as NaN
    instead of raising.
    """
    values = [rmse(actual, predicted), mae(actual, predicted)]
    for fn in (mape, tic):
        try:
            values.append(fn(actual, predicted))
        except MetricError:
            if strict:
                raise
            values.append(math.nan)
    return Metrics(*values)


@dataclass
class MetricsReport:
    """One row of metrics per horizon ``h = 1..H`` over ``n`` test windows."""

    rows: list[Metrics]
    n: int

    @property
    def H(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("horizon,rmse,mae,mape,tic\n")
        for h, m in enumerate(self.rows, start=1):
            buf.write(f"{h},{m.rmse!r},{m.mae!r},{m.mape!r},{m.tic!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n: int = 0) -> "MetricsReport":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "horizon,rmse,mae,mape,tic":
            raise MetricError("missing report header")
        rows = []
        for k, ln in enumerate(lines[1:], start=1):
            h, *vals = ln.split(",")
            if int(h) != k or len(vals) != 4:
                raise MetricError(f"malformed report row {ln!r}")
            rows.append(Metrics(*map(float, vals)))
        return cls(rows, n)


def evaluate_model(spec: ArchSpec, params: ParameterSet, X: np.ndarray, Y: np.ndarray,
                   norm: NormParams, strict: bool = False) -> MetricsReport:
    """Forecast every test window and score each horizon on the raw price scale.

    ``X`` is ``(n, d)`` normalized windows, ``Y`` the ``(n, H)`` normalized
    labels. Column ``h`` of the forecasts is compared with label element
    ``h`` after both are denormalized.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) == 0:
        raise MetricError("no test windows")
    preds = np.concatenate([model_forward(spec, params, Tensor(X[s:s + 256, :, None])).data
                            for s in range(0, len(X), 256)])
    actual = denormalize(Y, norm)
    forecast = denormalize(preds, norm)
    rows = [compute_metrics(actual[:, h], forecast[:, h], strict) for h in range(Y.shape[1])]
    return MetricsReport(rows, len(X))
