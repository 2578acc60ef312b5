"""Fitting the event adjuster on baseline residuals and the synthetic efficacy experiment."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import fdes
from .adversarial import RESIDUAL_OFFSET, AdjusterModel, GanConfig, GanRound, gan_train
from .backtest import BacktestReport, SplitConfig, Strategy, WeightedLinear, backtest
from .errors import DegenerateRangeError, InputError, ParameterError
from .market import anchored_view, decay_weights
from .synthetic import EventMarketParams, simulate_event_market

logger = logging.getLogger(__name__)

# The anchored view saturates at this many typical daily moves from today.
VIEW_SPAN_MOVES = 10.0
ADJUSTER_GAN = GanConfig(rounds=300, g_steps=5, d_steps=1, g_rate=20.0, d_rate=0.1, delta=100.0, sup_weight=1.0)


def view_span(train_values, moves: float = VIEW_SPAN_MOVES) -> float:
    """``moves`` times the standard deviation of daily changes."""
    if not moves > 0:
        raise ParameterError(f"moves must be > 0, got {moves}")
    v = np.asarray(train_values, dtype=float)
    if v.size < 3:
        raise InputError("need at least three values to measure daily moves")
    s = float(np.std(np.diff(v)))
    if s == 0:
        raise DegenerateRangeError("flat training segment has no daily moves")
    return moves * s


def neutral_init(width: int, depth: int = 1, seed: int = 0, delta: float = ADJUSTER_GAN.delta) -> fdes.FdesNetwork:
    """Random generator whose today row is 1.

    Today sits at 0.5 in the anchored view, so every output starts at or above
    the residual offset and the flat window maps to (nearly) zero adjustment.
    """
    net = fdes.init_network(width, depth, seed, delta)
    layers = net.layers.copy()
    layers[:, -1, :] = 1.0
    return replace(net, layers=layers)


def residual_dataset(values, baseline: Strategy, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw windows and the residual trajectories that follow them.

    For each day t with enough history, the window is ``values[t-W+1 .. t]``
    and the trajectory holds ``offset + values[d] - baseline(d)`` for the W
    days ``d = t-W+2 .. t+1``, where ``baseline(d)`` is the baseline forecast of
    day d from the window ending the day before. Trajectories are clipped into
    [0, 1].
    """
    v = np.asarray(values, dtype=float)
    first = 2 * width - 2
    if len(v) - 1 <= first:
        raise InputError(f"need more than {first + 1} values for residual trajectories of width {width}")
    resid = {d: v[d] - baseline.predict(v[d - width:d], d - 1) for d in range(width, len(v))}
    days = range(first, len(v) - 1)
    windows = np.array([v[t - width + 1:t + 1] for t in days])
    targets = np.array([[RESIDUAL_OFFSET + resid[d] for d in range(t - width + 2, t + 2)] for t in days])
    return windows, np.clip(targets, 0.0, 1.0)


def fit_adjuster(train_values, baseline: Strategy, width: int, config: GanConfig = ADJUSTER_GAN,
                 span_moves: float = VIEW_SPAN_MOVES, scaler=None) -> tuple[AdjusterModel, list[GanRound]]:
    """Train a generator on anchored views of the training windows.

    The supervised term weights trajectory days with the linear decay
    weights, so tomorrow counts most.
    """
    span = view_span(train_values, span_moves)
    windows, targets = residual_dataset(train_values, baseline, width)
    init = neutral_init(width, config.depth, config.seed, config.delta)
    model, history = gan_train(config, anchored_view(windows, span), targets, component_weights=decay_weights(width),
                               init=init, scaler=scaler, view_span=span)
    logger.info("adjuster trained: %d windows, view span %.4g, final d_acc %.3f",
                len(windows), span, history[-1].d_acc)
    return model, history


@dataclass
class AdjusterFactory:
    """Callable handed to :func:`fdesq.backtest.backtest`; keeps what it trained."""

    config: GanConfig = ADJUSTER_GAN
    span_moves: float = VIEW_SPAN_MOVES
    model: AdjusterModel | None = None
    history: list[GanRound] = field(default_factory=list)

    def __call__(self, train_values, baseline, split: SplitConfig) -> AdjusterModel:
        self.model, self.history = fit_adjuster(train_values, baseline, split.width, self.config, self.span_moves)
        return self.model


@dataclass
class EfficacyResult:
    seed: int
    report: BacktestReport
    factory: AdjusterFactory

    @property
    def baseline(self):
        return self.report.metrics["baseline"]

    @property
    def adjusted(self):
        return self.report.metrics["adjusted"]

    @property
    def rmse_improved(self) -> bool:
        return self.adjusted.rmse < self.baseline.rmse

    @property
    def direction_significant(self) -> bool:
        """Adjusted directional accuracy at least 3 binomial standard errors above 0.5."""
        return self.adjusted.directional_accuracy > 0.5 + 3 * self.adjusted.binomial_se

    @property
    def passed(self) -> bool:
        return self.rmse_improved and self.direction_significant


def efficacy_run(seed: int, market: EventMarketParams | None = None, split: SplitConfig | None = None,
                 config: GanConfig = ADJUSTER_GAN) -> EfficacyResult:
    """Weighted-linear baseline with and without the adjuster on one event-driven market."""
    market = replace(market or EventMarketParams(), seed=seed)
    split = split or SplitConfig(train_days=market.steps // 2)
    sim = simulate_event_market(market)
    factory = AdjusterFactory(replace(config, seed=seed))
    report = backtest(sim.series, WeightedLinear(split.width, split.scheme, split.decay_rate), split=split,
                      adjuster_factory=factory, config_echo={"seed": seed, "adjuster": "fdes"})
    return EfficacyResult(seed, report, factory)
