"""Baseline predictors, walk-forward backtests and report emission.

Every prediction for day t + 1 is made from the window ending on day t, after
models and the normalization scaler were fitted on the training segment only.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import InputError, IoError, ParameterError
from .market import WINDOW, PriceSeries, RollingWindowSample, Scaler, decay_weights, rolling_windows

logger = logging.getLogger(__name__)

BREAK_EVEN = 0.5
MIN_TRAIN_DAYS = 60
MIN_EVAL_DAYS = 10
# Moves smaller than this fraction of today's price count as flat; the scaler
# round trip alone leaves a martingale forecast a few ulps off today's close.
FLAT_REL = 1e-12
SERIES_COLORS = {"actual": "#000000", "baseline": "#1f77b4", "adjusted": "#d62728"}


def predict_martingale(window) -> float:
    """Tomorrow equals today."""
    w = np.asarray(window, dtype=float)
    if w.size == 0:
        raise InputError("empty window")
    return float(w[-1])


class Strategy(Protocol):
    name: str

    def fit(self, samples: Sequence[RollingWindowSample]) -> None: ...

    def predict(self, window: np.ndarray, index: int) -> float: ...


class Martingale:
    name = "martingale"

    def fit(self, samples):
        pass

    def predict(self, window, index):
        return predict_martingale(window)


class WeightedLinear:
    """Least-squares fit of the target on decay-weighted window components plus an intercept.

    Falls back to the martingale when the design is rank deficient; the reason
    is kept in ``warnings``.
    """

    name = "weighted_linear"

    def __init__(self, width: int = WINDOW, scheme: str = "linear", rate: float = 0.8):
        self.weights = decay_weights(width, scheme, rate)
        self.coef: np.ndarray | None = None
        self.fallback = False
        self.warnings: list[str] = []

    def _design(self, windows) -> np.ndarray:
        x = np.atleast_2d(np.asarray(windows, dtype=float)) * self.weights
        return np.hstack([x, np.ones((len(x), 1))])

    def fit(self, samples):
        width = len(self.weights)
        if len(samples) < width + 1:
            raise InputError(f"weighted-linear fit needs at least {width + 1} samples, got {len(samples)}")
        X = self._design([s.window for s in samples])
        y = np.array([s.target for s in samples])
        coef, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
        if rank < X.shape[1] or sv[-1] <= sv[0] * 1e-10:
            msg = f"singular weighted-linear design (rank {rank} of {X.shape[1]}), using martingale"
            logger.warning(msg)
            self.warnings.append(msg)
            self.fallback, self.coef = True, None
        else:
            self.fallback, self.coef = False, coef
        return self

    def predict(self, window, index=None):
        if self.fallback:
            return predict_martingale(window)
        if self.coef is None:
            raise InputError("model is not fitted")
        return float(self._design(window)[0] @ self.coef)


def predict_weighted_linear(samples, window, width: int = WINDOW) -> float:
    return WeightedLinear(width).fit(samples).predict(window)


class Oracle:
    """Perfect foresight, for tests: returns the true next value."""

    name = "oracle"

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def fit(self, samples):
        pass

    def predict(self, window, index):
        return float(self.values[index + 1])


@dataclass
class SplitConfig:
    train_days: int = 250
    width: int = WINDOW
    scheme: str = "linear"
    decay_rate: float = 0.8
    refit_interval: int = 0

    def __post_init__(self):
        if self.train_days < MIN_TRAIN_DAYS:
            raise ParameterError(f"train segment must have at least {MIN_TRAIN_DAYS} days")
        if self.refit_interval < 0:
            raise ParameterError("refit_interval must be >= 0")


@dataclass
class DayRecord:
    date: str
    previous: float
    actual: float
    baseline: float
    adjusted: float


@dataclass
class StrategyMetrics:
    rmse: float
    mae: float
    directional_accuracy: float
    n: int

    @property
    def binomial_se(self) -> float:
        return math.sqrt(BREAK_EVEN * (1 - BREAK_EVEN) / self.n)


@dataclass
class BacktestReport:
    ticker: str
    records: list[DayRecord]
    metrics: dict[str, StrategyMetrics]
    config: dict[str, str] = field(default_factory=dict)


def compute_metrics(previous, actual, predicted) -> StrategyMetrics:
    """RMSE, MAE and directional accuracy in price units.

    A day counts as a correct call when ``sign(pred - today) == sign(actual - today)``,
    so a flat forecast is right only when the price really did not move. Moves
    within ``FLAT_REL * |today|`` are flat.
    """
    previous, actual, predicted = (np.asarray(v, dtype=float) for v in (previous, actual, predicted))
    err = predicted - actual
    tol = FLAT_REL * np.abs(previous)

    def direction(x):
        d = x - previous
        return np.where(np.abs(d) <= tol, 0.0, np.sign(d))

    hits = direction(predicted) == direction(actual)
    return StrategyMetrics(float(np.sqrt(np.mean(err ** 2))), float(np.mean(np.abs(err))),
                           float(np.mean(hits)), len(actual))


def backtest(series: PriceSeries, baseline: Strategy, adjuster=None, split: SplitConfig | None = None,
             config_echo: dict | None = None,
             adjuster_factory: Callable[[np.ndarray, Strategy, SplitConfig], object] | None = None) -> BacktestReport:
    """Walk-forward evaluation of a baseline and its adjusted variant.

    The first ``split.train_days`` prices fit the scaler and the baseline (and
    the adjuster, through ``adjuster_factory``). Each later day is then
    predicted from the window ending the day before. With
    ``refit_interval > 0`` the baseline is refitted every that many days on all
    data seen so far; the scaler and adjuster stay frozen.

    Args:
        series: the price history.
        baseline: strategy producing normalized predictions.
        adjuster: object with ``adjust(baseline, window)``; ``None`` leaves the
            adjusted column equal to the baseline.
        adjuster_factory: called as ``factory(train_values, baseline, split)``
            after the baseline fit, returning an adjuster.
    """
    split = split or SplitConfig()
    n_eval = len(series) - split.train_days
    if n_eval < MIN_EVAL_DAYS:
        raise InputError(f"{series.ticker}: evaluation segment has {max(n_eval, 0)} days, need {MIN_EVAL_DAYS}")
    train = series.closes[:split.train_days]
    scaler = Scaler.fit(train)
    values = scaler.transform(series.closes)
    train_values = values[:split.train_days]

    def samples_until(stop):
        return rolling_windows(values[:stop], split.width, 1, split.scheme, split.decay_rate)

    baseline.fit(samples_until(split.train_days))
    if adjuster_factory is not None:
        adjuster = adjuster_factory(train_values, baseline, split)

    records = []
    w = split.width
    for k, day in enumerate(range(split.train_days, len(series))):
        if split.refit_interval and k and k % split.refit_interval == 0:
            baseline.fit(samples_until(day))
        window = values[day - w:day]
        base = baseline.predict(window, day - 1)
        adj = base if adjuster is None else adjuster.adjust(base, window)
        prices = scaler.inverse([base, adj])
        records.append(DayRecord(series.dates[day].isoformat(), float(series.closes[day - 1]),
                                 float(series.closes[day]), float(prices[0]), float(prices[1])))

    echo = {"train_days": str(split.train_days), "width": str(split.width), "scheme": split.scheme,
            "refit_interval": str(split.refit_interval), "baseline": getattr(baseline, "name", "custom"),
            "scaler_min": f"{scaler.low:.17g}", "scaler_max": f"{scaler.high:.17g}"}
    echo.update({k: str(v) for k, v in (config_echo or {}).items()})
    return BacktestReport(series.ticker, records, metrics_from_records(records), echo)


def metrics_from_records(records: Sequence[DayRecord]) -> dict[str, StrategyMetrics]:
    prev = [r.previous for r in records]
    act = [r.actual for r in records]
    return {
        "baseline": compute_metrics(prev, act, [r.baseline for r in records]),
        "adjusted": compute_metrics(prev, act, [r.adjusted for r in records]),
    }


def summary_lines(report: BacktestReport) -> list[str]:
    lines = []
    for name, m in report.metrics.items():
        lines.append(f"{report.ticker} {name:>8}: RMSE {m.rmse:.6g}  MAE {m.mae:.6g}  "
                     f"directional accuracy {m.directional_accuracy:.4f} (n={m.n})")
    lines.append(f"{report.ticker} break-even directional accuracy: {BREAK_EVEN:.2f}")
    return lines


# -- emission ---------------------------------------------------------------------

_RECORD_FIELDS = ["date", "previous", "actual", "baseline", "adjusted"]
_METRIC_FIELDS = ["strategy", "rmse", "mae", "directional_accuracy", "n"]


def _write(path: Path, rows: list[list[str]], comments: Sequence[str] = ()) -> None:
    try:
        with path.open("w", newline="") as fh:
            for c in comments:
                fh.write(f"# {c}\n")
            csv.writer(fh, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def emit_report(report: BacktestReport, out_dir) -> list[Path]:
    """Write ``report_<t>.csv``, ``metrics_<t>.csv`` and ``plot_<t>.svg``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    t = report.ticker
    paths = [out / f"report_{t}.csv", out / f"metrics_{t}.csv", out / f"plot_{t}.svg"]
    _write(paths[0], [_RECORD_FIELDS] + [[r.date] + [f"{getattr(r, f):.17g}" for f in _RECORD_FIELDS[1:]]
                                         for r in report.records])
    comments = [f"{k} = {v}" for k, v in sorted(report.config.items())]
    _write(paths[1], [_METRIC_FIELDS] + [[name, f"{m.rmse:.17g}", f"{m.mae:.17g}", f"{m.directional_accuracy:.17g}",
                                           str(m.n)] for name, m in report.metrics.items()], comments)
    try:
        paths[2].write_text(render_svg(report))
    except OSError as exc:
        raise IoError(f"cannot write {paths[2]}: {exc}") from exc
    return paths


def _rows(path: Path) -> list[list[str]]:
    try:
        with path.open(newline="") as fh:
            return [row for row in csv.reader(line for line in fh if not line.startswith("#"))]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def read_report(out_dir, ticker: str) -> BacktestReport:
    """Load a report previously written by :func:`emit_report`."""
    out = Path(out_dir)
    rows = _rows(out / f"report_{ticker}.csv")
    records = [DayRecord(r[0], *map(float, r[1:])) for r in rows[1:]]
    metrics = {r[0]: StrategyMetrics(float(r[1]), float(r[2]), float(r[3]), int(r[4]))
               for r in _rows(out / f"metrics_{ticker}.csv")[1:]}
    config = {}
    with (out / f"metrics_{ticker}.csv").open() as fh:
        for line in fh:
            if line.startswith("# ") and " = " in line:
                k, v = line[2:].rstrip("\n").split(" = ", 1)
                config[k] = v
    return BacktestReport(ticker, records, metrics, config)


def render_svg(report: BacktestReport, width: int = 1200, height: int = 600, pad: int = 50) -> str:
    """Static line chart of actual, baseline and adjusted prices."""
    series = {name: [getattr(r, name) for r in report.records] for name in SERIES_COLORS}
    allv = [v for vals in series.values() for v in vals]
    lo, hi = min(allv), max(allv)
    span = hi - lo or 1.0
    n = max(len(report.records) - 1, 1)

    def pt(i, v):
        x = pad + (width - 2 * pad) * i / n
        y = height - pad - (height - 2 * pad) * (v - lo) / span
        return f"{x:.2f},{y:.2f}"

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="0 0 {width} {height}" '
        f'width="{width}" height="{height}">',
        f'<title>{report.ticker}: actual vs baseline vs adjusted</title>',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="#888888"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="#888888"/>',
        f'<text x="{pad}" y="{pad - 20}" font-family="sans-serif" font-size="14">{hi:.4g}</text>',
        f'<text x="{pad}" y="{height - pad + 20}" font-family="sans-serif" font-size="14">{lo:.4g}</text>',
    ]
    for k, (name, color) in enumerate(SERIES_COLORS.items()):
        pts = " ".join(pt(i, v) for i, v in enumerate(series[name]))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"><title>{name}</title></polyline>')
        parts.append(f'<text x="{width - pad - 120}" y="{pad + 18 * k}" font-family="sans-serif" font-size="14" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
