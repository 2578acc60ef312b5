"""Synthetic markets with known ground truth.

Geometric Brownian motion supplies the event-free Monte Carlo market; FDES
series evolve a fuzzy state through a known schedule of event matrices using
the exact max-product rule, so trained networks can be checked against the
matrices that generated the data. The event-driven market pushes a log-price
random walk with the output of an injected event matrix acting on the recent
price window, which gives the adjuster a known signal to find.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fdes
from .errors import DimensionError, IoError, ParameterError
from .fdes import FuzzyEventMatrix
from .market import WINDOW, NormalizedSeries, PriceSeries, Scaler, anchored_view

logger = logging.getLogger(__name__)

START_DATE = dt.date(2020, 1, 1)


def trading_days(n: int, start: dt.date = START_DATE) -> list[dt.date]:
    """``n`` consecutive weekdays starting at (or after) ``start``."""
    days = np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")
    return [d.item() for d in days]


@dataclass(frozen=True)
class GbmParams:
    s0: float = 100.0
    mu: float = 0.0
    sigma: float = 0.02
    steps: int = 250
    paths: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.s0 > 0:
            raise ParameterError(f"s0 must be > 0, got {self.s0}")
        if not self.sigma >= 0:
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        if self.steps < 1 or self.paths < 1:
            raise ParameterError("steps and paths must be >= 1")


@dataclass
class GbmPaths:
    params: GbmParams
    prices: np.ndarray  # (paths, steps + 1)
    shocks: np.ndarray  # (paths, steps), the standard-normal draws

    def series(self, prefix: str = "GBM") -> list[PriceSeries]:
        dates = trading_days(self.prices.shape[1])
        return [PriceSeries(f"{prefix}{i:04d}", dates, p) for i, p in enumerate(self.prices)]


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for one path, derived from (seed, index) alone."""
    return np.random.default_rng([seed, index])


def simulate_gbm(params: GbmParams) -> GbmPaths:
    """``S_{t+1} = S_t * exp((mu - sigma^2/2) + sigma * Z)`` per step.

    Each path draws its shocks from its own seed-derived stream, so paths do not
    depend on how many others are simulated or in which order.
    """
    z = np.stack([path_rng(params.seed, i).standard_normal(params.steps) for i in range(params.paths)])
    increments = (params.mu - 0.5 * params.sigma ** 2) + params.sigma * z
    log_paths = np.concatenate([np.zeros((params.paths, 1)), np.cumsum(increments, axis=1)], axis=1)
    return GbmPaths(params, params.s0 * np.exp(log_paths), z)


@dataclass(frozen=True)
class ScheduledEvent:
    step: int
    event: FuzzyEventMatrix

    @property
    def label(self) -> str:
        return self.event.label


@dataclass
class EventSchedule:
    events: list[ScheduledEvent] = field(default_factory=list)

    def __post_init__(self):
        steps = [e.step for e in self.events]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ParameterError("event steps must be strictly increasing")

    def at(self) -> dict[int, FuzzyEventMatrix]:
        return {e.step: e.event for e in self.events}


@dataclass
class FdesSeries:
    """Readout series plus the full ground-truth state trace."""

    series: NormalizedSeries
    states: np.ndarray  # (length, N)
    events: list[FuzzyEventMatrix]  # event applied to reach state t (index 0 unused, None-free)
    schedule: EventSchedule


def generate_fdes_series(q0, schedule: EventSchedule, filler: FuzzyEventMatrix, length: int,
                         ticker: str = "FDES") -> FdesSeries:
    """Evolve ``q0`` by exact max-product for ``length - 1`` steps.

    State t (t >= 1) is state t - 1 composed with the event scheduled at step
    t, or with ``filler`` when none is. Component 0 of every state is the
    emitted value.
    """
    q = fdes.fuzzy_state(q0)
    if length < 1:
        raise ParameterError("length must be >= 1")
    if filler.dimension != q.size:
        raise DimensionError(f"filler is {filler.dimension}x{filler.dimension}, state has {q.size} components")
    for e in schedule.events:
        if not 1 <= e.step < length:
            raise ParameterError(f"event step {e.step} outside [1, {length - 1}]")
        if e.event.dimension != q.size:
            raise DimensionError(f"event {e.label!r} has dimension {e.event.dimension}, state {q.size}")
    scheduled = schedule.at()
    states = [q]
    applied = [filler]
    for t in range(1, length):
        ev = scheduled.get(t, filler)
        states.append(fdes.compose_exact(states[-1], ev))
        applied.append(ev)
    states = np.array(states)
    series = NormalizedSeries(ticker, states[:, 0].copy(), Scaler(0.0, 1.0), trading_days(length))
    return FdesSeries(series, states, applied, schedule)


def replay(result: FdesSeries) -> np.ndarray:
    """Recompute the state trace from its first state and the applied events."""
    states = [result.states[0]]
    for ev in result.events[1:]:
        states.append(fdes.compose_exact(states[-1], ev))
    return np.array(states)


def write_ground_truth(result: FdesSeries, out_dir, stem: str = "truth") -> list[Path]:
    """Matrices in the network text format plus ``step,label,matrix_file`` CSV."""
    return write_schedule(result.schedule, out_dir, stem)


def write_schedule(schedule: EventSchedule, out_dir, stem: str = "truth") -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    paths = []
    rows = [["step", "label", "matrix_file"]]
    for k, ev in enumerate(schedule.events):
        name = f"{stem}_event_{k:03d}.fdes"
        fdes.save_network(fdes.FdesNetwork(ev.event.entries[None], labels=(ev.label,)), out / name)
        rows.append([str(ev.step), ev.label, name])
        paths.append(out / name)
    sched = out / f"{stem}_schedule.csv"
    try:
        with sched.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise IoError(f"cannot write {sched}: {exc}") from exc
    return paths + [sched]


# -- event-driven market ----------------------------------------------------------

def rebound_event(width: int = WINDOW, strength: float = 0.75, label: str = "rebound") -> FuzzyEventMatrix:
    """Shift register whose new last component answers drawdowns.

    Column j < W - 1 copies day j + 1 into slot j. The last column reads
    ``max(x_today, strength * max_i x_i)``, so on a today-anchored view it
    rises above 0.5 once some recent day sits far enough above today.
    """
    if width < 2:
        raise ParameterError("rebound event needs width >= 2")
    if not 0 <= strength <= 1:
        raise ParameterError(f"strength must lie in [0, 1], got {strength}")
    a = np.zeros((width, width))
    a[np.arange(1, width), np.arange(width - 1)] = 1.0
    a[:, -1] = strength
    a[-1, -1] = 1.0
    return FuzzyEventMatrix(a, label)


@dataclass(frozen=True)
class EventMarketParams:
    """Log-price process driven by an injected event matrix.

    ``log S_{t+1} = log S_t - reversion * (log S_t - log s0) + impact * e_t + sigma * Z_t``
    where ``e_t = F(v_t)[-1] - F(0.5)[-1]``, F is the active event matrix under
    exact max-product and ``v_t`` the anchored view of the last ``width`` log
    prices with span ``span_sigmas * sigma``.
    """

    s0: float = 100.0
    sigma: float = 0.01
    impact: float = 0.2
    reversion: float = 0.02
    span_sigmas: float = 10.0
    steps: int = 1000
    width: int = WINDOW
    seed: int = 0

    def __post_init__(self):
        if not self.s0 > 0:
            raise ParameterError(f"s0 must be > 0, got {self.s0}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not 0 <= self.reversion < 1:
            raise ParameterError(f"reversion must lie in [0, 1), got {self.reversion}")
        if not self.span_sigmas > 0:
            raise ParameterError("span_sigmas must be > 0")
        if self.width < 2 or self.steps <= self.width:
            raise ParameterError("need width >= 2 and steps > width")


@dataclass
class EventMarket:
    series: PriceSeries
    impacts: np.ndarray  # e_t per step, zero while no event is active
    shocks: np.ndarray
    schedule: EventSchedule
    params: EventMarketParams


def simulate_event_market(params: EventMarketParams, schedule: EventSchedule | None = None,
                          ticker: str = "EVT") -> EventMarket:
    """Simulate ``params.steps`` prices under an event schedule.

    A scheduled matrix stays active from its step until the next one; before
    the first step no event acts. The default schedule activates
    :func:`rebound_event` as soon as a full window exists.
    """
    w = params.width
    if schedule is None:
        schedule = EventSchedule([ScheduledEvent(w, rebound_event(w))])
    for e in schedule.events:
        if not 1 <= e.step < params.steps:
            raise ParameterError(f"event step {e.step} outside [1, {params.steps - 1}]")
        if e.event.dimension != w:
            raise DimensionError(f"event {e.label!r} has dimension {e.event.dimension}, window {w}")
    rng = np.random.default_rng(params.seed)
    z = rng.standard_normal(params.steps - 1)
    span = params.span_sigmas * params.sigma
    neutral = np.full(w, 0.5)
    mu = math.log(params.s0)
    lp = np.empty(params.steps)
    lp[0] = mu
    impacts = np.zeros(params.steps - 1)
    scheduled = schedule.at()
    active: FuzzyEventMatrix | None = None
    for t in range(params.steps - 1):
        active = scheduled.get(t, active)
        if active is not None and t >= w - 1:
            view = anchored_view(lp[t - w + 1:t + 1], span)
            impacts[t] = fdes.compose_exact(view, active)[-1] - fdes.compose_exact(neutral, active)[-1]
        lp[t + 1] = lp[t] - params.reversion * (lp[t] - mu) + params.impact * impacts[t] + params.sigma * z[t]
    series = PriceSeries(ticker, trading_days(params.steps), np.exp(lp))
    return EventMarket(series, impacts, z, schedule, params)


# -- recovery ---------------------------------------------------------------------

@dataclass
class RecoveryConfig:
    """Ground truth: ``depth`` random matrices with entries uniform in
    [entry_low, entry_high]; states uniform in [state_low, state_high]^N."""

    n: int = 4
    depth: int = 1
    train_pairs: int = 200
    probes: int = 64
    seed: int = 0
    entry_low: float = 0.0
    entry_high: float = 1.0
    state_low: float = 0.0
    state_high: float = 1.0
    identity: bool = False

    def __post_init__(self):
        if self.n < 1 or self.depth < 1 or self.train_pairs < 1 or self.probes < 1:
            raise ParameterError("recovery sizes must be >= 1")
        if not (0 <= self.entry_low <= self.entry_high <= 1 and 0 <= self.state_low <= self.state_high <= 1):
            raise ParameterError("entry and state ranges must lie in [0, 1]")


@dataclass
class RecoveryResult:
    truth: fdes.FdesNetwork
    trained: fdes.FdesNetwork
    final_cost: float
    probe_error: float
    history: list[float]


def exact_trace(net: fdes.FdesNetwork, q0) -> np.ndarray:
    q = np.asarray(q0, dtype=float)
    for a in net.layers:
        q = fdes.compose_exact(q, a)
    return q


def recovery_experiment(config: RecoveryConfig, training: fdes.TrainConfig, delta: float = 50.0,
                        init: fdes.FdesNetwork | None = None) -> RecoveryResult:
    """Train on pairs produced by known matrices and measure functional error.

    The probe error is ``max_q ||forward(trained, q) - exact(q)||_inf`` over
    held-out probe states. Matrix entries are never compared directly: distinct
    max-product matrices can define the same map.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n
    if config.identity:
        truth = fdes.identity_network(n, config.depth, delta)
    else:
        truth = fdes.FdesNetwork(rng.uniform(config.entry_low, config.entry_high, size=(config.depth, n, n)), delta)
    q_train = rng.uniform(config.state_low, config.state_high, size=(config.train_pairs, n))
    q_probe = rng.uniform(config.state_low, config.state_high, size=(config.probes, n))
    targets = exact_trace(truth, q_train)
    net = init if init is not None else fdes.init_network(n, config.depth, training.seed, delta)
    result = fdes.train(net, [(q, t, 1.0) for q, t in zip(q_train, targets)], training)
    probe_err = float(np.max(np.abs(fdes.forward(result.net, q_probe)[-1] - exact_trace(truth, q_probe))))
    return RecoveryResult(truth, result.net, result.final_cost, probe_err, result.history)
