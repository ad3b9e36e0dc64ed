"""Price-series ingestion, chronological split, min-max scaling and windowing."""

from __future__ import annotations

import csv
import datetime as dt
import os
from dataclasses import dataclass

import numpy as np

from .numcore import Prng

__all__ = [
    "DataError",
    "PriceSeries",
    "NormParams",
    "WindowedDataset",
    "load_csv",
    "write_csv",
    "split_bounds",
    "split_811",
    "normalize",
    "denormalize",
    "make_windows",
    "build_dataset",
    "synth_series",
    "SINE_DEFAULTS",
]


class DataError(ValueError):
    """Bad input data: missing file or column, unparsable rows, short series."""


@dataclass
class PriceSeries:
    dates: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.dates) != len(self.values):
            raise DataError("dates and values differ in length")
        for i in range(1, len(self.dates)):
            if not self.dates[i] > self.dates[i - 1]:
                raise DataError(f"dates not strictly increasing at position {i}: "
                                f"{self.dates[i - 1]} then {self.dates[i]}")

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class NormParams:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise DataError(f"degenerate normalization range [{self.min}, {self.max}]")

    @classmethod
    def fit(cls, train_values) -> "NormParams":
        v = np.asarray(train_values, dtype=np.float64)
        return cls(float(v.min()), float(v.max()))


@dataclass
class WindowedDataset:
    """Normalized (sequence, label) pairs for each chronological segment.

    ``*_x`` arrays are ``(pairs, d)`` and ``*_y`` arrays ``(pairs, H)``.
    ``bounds`` holds the half-open index ranges of the train, validation
    and test segments in the original series; ``*_start`` the series
    index of each pair's first input value.
    """

    d: int
    H: int
    norm: NormParams
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    bounds: tuple
    train_start: np.ndarray
    val_start: np.ndarray
    test_start: np.ndarray


def load_csv(path, column: str = "Close", date_column: str = "Date") -> PriceSeries:
    """Read a header-first CSV (Yahoo export layout) into a :class:`PriceSeries`.

    Row numbers in error messages count the header as row 1.
    """
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for name in (date_column, column):
            if name not in header:
                raise DataError(f"{path}: missing column {name!r} (header: {', '.join(header)})")
        di, vi = header.index(date_column), header.index(column)
        dates, values, bad = [], [], []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                date = dt.date.fromisoformat(row[di].strip())
                value = float(row[vi])
                if not np.isfinite(value):
                    raise ValueError
            except (ValueError, IndexError):
                bad.append(rowno)
                continue
            dates.append(date)
            values.append(value)
    if bad:
        shown = ", ".join(map(str, bad[:20])) + (" ..." if len(bad) > 20 else "")
        raise DataError(f"{path}: unparsable or empty {column!r} at row(s) {shown}")
    try:
        return PriceSeries(dates, np.array(values))
    except DataError as err:
        raise DataError(f"{path}: {err}") from None


def write_csv(series: PriceSeries, path, column: str = "Close") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Date", column])
        for date, value in zip(series.dates, series.values):
            w.writerow([date.isoformat(), repr(float(value))])


def split_bounds(length: int, train_end: int | None = None,
                 val_end: int | None = None) -> tuple[int, int]:
    """End indices of the train and validation segments.

    Defaults follow the 8:1:1 floor rule; either end can be overridden.
    """
    if length < 10:
        raise DataError(f"series of length {length} is too short to split (need >= 10)")
    a = int(np.floor(0.8 * length)) if train_end is None else int(train_end)
    b = a + int(np.floor(0.1 * length)) if val_end is None else int(val_end)
    if not 0 < a <= b <= length:
        raise DataError(f"invalid split boundaries {a}, {b} for length {length}")
    return a, b


def split_811(series, train_end: int | None = None, val_end: int | None = None):
    """Chronological train / validation / test segments."""
    values = series.values if isinstance(series, PriceSeries) else np.asarray(series, dtype=float)
    a, b = split_bounds(len(values), train_end, val_end)
    return values[:a], values[a:b], values[b:]


def normalize(values, norm: NormParams):
    return (np.asarray(values, dtype=np.float64) - norm.min) / (norm.max - norm.min)


def denormalize(values, norm: NormParams):
    return np.asarray(values, dtype=np.float64) * (norm.max - norm.min) + norm.min


def make_windows(segment, d: int, H: int):
    """All (sequence, label) pairs of a segment, shifting one step at a time.

    Pair ``k`` takes ``values[k:k+d]`` as input and ``values[k+d:k+d+H]`` as
    label. Returns ``(X, Y)`` with shapes ``(L-d-H+1, d)`` and
    ``(L-d-H+1, H)``.
    """
    seg = np.asarray(segment, dtype=np.float64)
    if d < 1 or H < 1:
        raise DataError("d and H must be positive")
    if len(seg) < d + H:
        raise DataError(f"segment of length {len(seg)} is shorter than d + H = {d + H}")
    win = np.lib.stride_tricks.sliding_window_view(seg, d + H)
    return win[:, :d].copy(), win[:, d:].copy()


def _segment_windows(segment, d, H, offset):
    if len(segment) < d + H:
        return np.zeros((0, d)), np.zeros((0, H)), np.zeros(0, dtype=int)
    X, Y = make_windows(segment, d, H)
    return X, Y, offset + np.arange(len(X))


def build_dataset(series, d: int, H: int, train_end: int | None = None,
                  val_end: int | None = None) -> WindowedDataset:
    """Split, fit min-max on the training segment, and window each segment.

    Validation and test windows never borrow values from the preceding
    segment; a segment shorter than ``d + H`` contributes no pairs.
    """
    values = series.values if isinstance(series, PriceSeries) else np.asarray(series, dtype=float)
    a, b = split_bounds(len(values), train_end, val_end)
    norm = NormParams.fit(values[:a])
    scaled = normalize(values, norm)
    tx, ty, ts = _segment_windows(scaled[:a], d, H, 0)
    if len(tx) == 0:
        raise DataError(f"training segment of length {a} yields no windows for d={d}, H={H}")
    vx, vy, vs = _segment_windows(scaled[a:b], d, H, a)
    ex, ey, es = _segment_windows(scaled[b:], d, H, b)
    return WindowedDataset(d, H, norm, tx, ty, vx, vy, ex, ey,
                           ((0, a), (a, b), (b, len(values))), ts, vs, es)


SINE_DEFAULTS = {"amplitude": 1.0, "offset": 2.0, "period": 25.0}
NOISE_STD = 0.05
WALK_START = 100.0


def synth_series(kind: str, length: int, prng: Prng, *, amplitude: float = 1.0,
                 offset: float = 2.0, period: float = 25.0, noise: float = NOISE_STD,
                 start: float = WALK_START) -> PriceSeries:
    """Deterministic synthetic price series.

    ``sine``: ``offset + amplitude * sin(2 pi t / period)``.
    ``noisy_sine``: the same plus N(0, noise^2) draws.
    ``random_walk``: ``start`` plus the running sum of standard normal draws,
    lifted if needed so the minimum is at least 1.
    Dates are consecutive days from 2010-01-01.
    """
    if length < 1:
        raise DataError("length must be >= 1")
    t = np.arange(length, dtype=np.float64)
    if kind == "sine":
        values = offset + amplitude * np.sin(2 * np.pi * t / period)
    elif kind == "noisy_sine":
        values = offset + amplitude * np.sin(2 * np.pi * t / period) + prng.normal(length, 0.0, noise)
    elif kind == "random_walk":
        values = start + np.cumsum(prng.normal(length))
        values = values + max(0.0, 1.0 - values.min())
    else:
        raise DataError(f"unknown synthetic series {kind!r}")
    origin = dt.date(2010, 1, 1)
    dates = [origin + dt.timedelta(days=i) for i in range(length)]
    return PriceSeries(dates, values)
