"""Price ingestion, [0, 1] normalization, RoI pooling and rolling-window samples."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, DegenerateRangeError, DimensionError, InputError, IoError, ParameterError, ParseError, RangeError

logger = logging.getLogger(__name__)

WINDOW = 10


@dataclass
class PriceSeries:
    ticker: str
    dates: list[dt.date]
    closes: np.ndarray

    def __post_init__(self):
        self.closes = np.asarray(self.closes, dtype=float)
        self.dates = list(self.dates)
        if len(self.dates) != len(self.closes):
            raise DimensionError(f"{self.ticker}: {len(self.dates)} dates but {len(self.closes)} closes")
        if np.any(self.closes <= 0) or not np.all(np.isfinite(self.closes)):
            raise DataError(f"{self.ticker}: closes must be positive and finite")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError(f"{self.ticker}: dates must be strictly increasing")

    def __len__(self):
        return len(self.closes)

    def slice(self, start: int, stop: int) -> "PriceSeries":
        return PriceSeries(self.ticker, self.dates[start:stop], self.closes[start:stop])


@dataclass(frozen=True)
class Scaler:
    """Affine min-max map between prices and the unit interval."""

    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise DegenerateRangeError(f"scaler needs min < max, got ({self.low}, {self.high})")

    @classmethod
    def fit(cls, prices) -> "Scaler":
        p = np.asarray(prices, dtype=float)
        if p.size < 2:
            raise InputError("need at least two prices to fit a scaler")
        lo, hi = float(np.min(p)), float(np.max(p))
        if lo == hi:
            raise DegenerateRangeError("constant series has no range to normalize")
        return cls(lo, hi)

    def transform(self, prices) -> np.ndarray:
        return (np.asarray(prices, dtype=float) - self.low) / (self.high - self.low)

    def inverse(self, values) -> np.ndarray:
        return self.low + np.asarray(values, dtype=float) * (self.high - self.low)


@dataclass
class NormalizedSeries:
    ticker: str
    values: np.ndarray
    scaler: Scaler
    dates: list[dt.date] = field(default_factory=list)

    def __len__(self):
        return len(self.values)


@dataclass
class RollingWindowSample:
    """One supervised example: the window ending today and tomorrow's value.

    ``window`` and ``weights`` are ordered oldest first; ``index`` is the
    position of "today" (the last window day) in the source series.
    """

    window: np.ndarray
    weights: np.ndarray
    target: float
    index: int = -1


def ingest_csv(path, ticker: str | None = None) -> PriceSeries:
    """Read a ``date,close`` CSV (extra columns ignored) into a sorted series."""
    path = Path(path)
    ticker = ticker or path.stem
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    rows: list[tuple[dt.date, float]] = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", 1, str(path))
        cols = [h.strip().lower() for h in header]
        if "date" not in cols or "close" not in cols:
            raise ParseError("header must contain 'date' and 'close'", 1, str(path))
        di, ci = cols.index("date"), cols.index("close")
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                day = dt.date.fromisoformat(row[di].strip())
                close = float(row[ci])
            except (IndexError, ValueError) as exc:
                raise ParseError(f"malformed row {row!r} ({exc})", lineno, str(path)) from None
            if not close > 0:
                raise DataError(f"{path}:{lineno}: close must be positive, got {close}")
            rows.append((day, close))
    rows.sort(key=lambda r: r[0])
    for (a, _), (b, _) in zip(rows, rows[1:]):
        if a == b:
            raise DataError(f"{path}: duplicate date {a.isoformat()}")
    return PriceSeries(ticker, [r[0] for r in rows], np.array([r[1] for r in rows]))


def write_csv(series: PriceSeries, path) -> None:
    try:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "close"])
            for d, c in zip(series.dates, series.closes):
                w.writerow([d.isoformat(), f"{c:.17g}"])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def normalize(series: PriceSeries, scaler: Scaler | None = None) -> NormalizedSeries:
    """Min-max map prices into [0, 1].

    Pass a ``scaler`` fitted on a training segment to reuse it on later data;
    values from such a frozen scaler may fall outside [0, 1].
    """
    if len(series) < 2:
        raise InputError(f"{series.ticker}: need at least two prices")
    scaler = scaler or Scaler.fit(series.closes)
    return NormalizedSeries(series.ticker, scaler.transform(series.closes), scaler, list(series.dates))


def denormalize(values, scaler: Scaler) -> np.ndarray:
    return scaler.inverse(values)


def roi_extract(series, start: int, length: int, pool: int = 1) -> np.ndarray:
    """Slice ``[start, start + length)`` and average-pool groups of ``pool`` values."""
    values = np.asarray(series.values if isinstance(series, NormalizedSeries) else series, dtype=float)
    if length < 1 or start < 0 or start + length > len(values):
        raise RangeError(f"window [{start}, {start + length}) outside series of length {len(values)}")
    if pool < 1 or length % pool:
        raise ParameterError(f"pool factor {pool} does not divide window length {length}")
    return values[start:start + length].reshape(-1, pool).mean(axis=1)


def anchored_view(window, span: float) -> np.ndarray:
    """Map a window (or batch) onto the unit box relative to its last day.

    ``0.5 + (w_i - w_today) / span``, clipped to [0, 1]. Today always lands on
    0.5 and a flat window maps to the all-0.5 state, so the view has a natural
    neutral point. Days more than ``span / 2`` away from today saturate.
    """
    if not span > 0:
        raise ParameterError(f"view span must be > 0, got {span}")
    w = np.asarray(window, dtype=float)
    if w.ndim == 0 or w.shape[-1] == 0:
        raise InputError("empty window")
    return np.clip(0.5 + (w - w[..., -1:]) / span, 0.0, 1.0)


def decay_weights(width: int = WINDOW, scheme: str = "linear", rate: float = 0.8) -> np.ndarray:
    """Per-day weights, oldest first, with today's weight equal to 1.

    ``linear``: lag l gets (width - l) / width. ``exponential``: rate ** l.
    """
    if width < 1:
        raise ParameterError("window width must be >= 1")
    lags = np.arange(width - 1, -1, -1)
    if scheme == "linear":
        return (width - lags) / width
    if scheme == "exponential":
        if not 0 < rate <= 1:
            raise ParameterError(f"exponential decay rate must be in (0, 1], got {rate}")
        return rate ** lags.astype(float)
    raise ParameterError(f"unknown decay scheme {scheme!r}")


def sample_count(length: int, width: int = WINDOW, horizon: int = 1) -> int:
    return max(0, length - width - horizon + 1)


def rolling_windows(series, width: int = WINDOW, horizon: int = 1, scheme: str = "linear",
                    rate: float = 0.8) -> list[RollingWindowSample]:
    """All (window, weights, target) samples of a series.

    Raises:
        InputError: when the series is shorter than ``width + horizon``.
    """
    values = np.asarray(series.values if isinstance(series, NormalizedSeries) else series, dtype=float)
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    n = sample_count(len(values), width, horizon)
    if n == 0:
        raise InputError(f"series of length {len(values)} too short for window {width} + horizon {horizon}")
    weights = decay_weights(width, scheme, rate)
    return [
        RollingWindowSample(values[s:s + width].copy(), weights, float(values[s + width - 1 + horizon]), s + width - 1)
        for s in range(n)
    ]


def samples_to_csv(samples: Sequence[RollingWindowSample], path) -> None:
    """Audit dump with columns ``t0..t{W-1},w0..w{W-1},target``."""
    if not samples:
        raise InputError("no samples to write")
    width = len(samples[0].window)
    header = [f"t{i}" for i in range(width)] + [f"w{i}" for i in range(width)] + ["target"]
    try:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for s in samples:
                w.writerow([f"{x:.17g}" for x in (*s.window, *s.weights, s.target)])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def samples_from_csv(path) -> list[RollingWindowSample]:
    try:
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    width = (len(rows[0]) - 1) // 2
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        try:
            vals = [float(x) for x in row]
        except ValueError:
            raise ParseError("non-numeric sample value", lineno, str(path)) from None
        out.append(RollingWindowSample(np.array(vals[:width]), np.array(vals[width:2 * width]), vals[-1]))
    return out
