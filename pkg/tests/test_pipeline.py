import numpy as np
import pytest

from fdesq import pipeline
from fdesq.adversarial import GanConfig, RESIDUAL_OFFSET
from fdesq.backtest import Martingale, SplitConfig
from fdesq.errors import DegenerateRangeError, InputError, ParameterError
from fdesq.synthetic import EventMarketParams


def test_view_span():
    v = np.array([0.0, 1.0, 0.0, 1.0, 0.0])
    assert pipeline.view_span(v, 10.0) == pytest.approx(10.0)
    with pytest.raises(DegenerateRangeError):
        pipeline.view_span(np.ones(5))
    with pytest.raises(ParameterError):
        pipeline.view_span(v, 0.0)
    with pytest.raises(InputError):
        pipeline.view_span([0.0, 1.0])


def test_neutral_init_today_row_is_one():
    net = pipeline.neutral_init(5, 2, seed=1)
    assert np.all(net.layers[:, -1, :] == 1.0)
    assert net.delta == pipeline.ADJUSTER_GAN.delta


def test_residual_dataset_against_martingale():
    v = np.arange(30, dtype=float) ** 1.5 / 200
    windows, targets = pipeline.residual_dataset(v, Martingale(), 4)
    # first day with a full trajectory is t = 2W - 2 = 6; the last usable one is len - 2
    assert windows.shape == targets.shape == (30 - 1 - 6, 4)
    assert np.array_equal(windows[0], v[3:7])
    expected = RESIDUAL_OFFSET + np.diff(v)[3:7]
    assert np.allclose(targets[0], expected, rtol=0, atol=1e-15)
    with pytest.raises(InputError):
        pipeline.residual_dataset(v[:7], Martingale(), 4)


def test_residual_targets_clipped():
    v = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0])
    _, targets = pipeline.residual_dataset(v, Martingale(), 3)
    assert targets.max() == 1.0 and targets.min() >= 0.0


def test_fit_adjuster_records_span_and_is_flat_neutral():
    rng = np.random.default_rng(0)
    v = 0.5 + np.cumsum(0.01 * rng.standard_normal(120))
    model, history = pipeline.fit_adjuster(v, Martingale(), 10, GanConfig(rounds=5, delta=100.0))
    assert model.view_span == pytest.approx(pipeline.view_span(v))
    assert len(history) == 5
    assert model.adjust(0.4, np.full(10, 0.7)) == pytest.approx(0.4, abs=1e-15)


def test_efficacy_run_small():
    res = pipeline.efficacy_run(3, EventMarketParams(steps=300), SplitConfig(train_days=150),
                                GanConfig(rounds=10, g_rate=20.0, d_rate=0.1, delta=100.0))
    assert res.report.metrics["adjusted"].n == 150
    assert res.factory.model is not None and len(res.factory.history) == 10
    assert res.passed == (res.rmse_improved and res.direction_significant)
    assert res.report.config["seed"] == "3"
