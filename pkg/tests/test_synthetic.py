import csv
import math

import numpy as np
import pytest

from fdesq import fdes, synthetic
from fdesq.errors import DimensionError, ParameterError
from fdesq.fdes import FuzzyEventMatrix
from fdesq.market import anchored_view
from fdesq.synthetic import EventMarketParams, EventSchedule, GbmParams, RecoveryConfig, ScheduledEvent

from .oracles import gbm_deterministic, max_product


# -- GBM --------------------------------------------------------------------------

def test_gbm_without_noise_or_drift_is_constant():
    paths = synthetic.simulate_gbm(GbmParams(mu=0.0, sigma=0.0, steps=20, paths=3))
    assert np.all(paths.prices == 100.0)


def test_gbm_pure_drift_matches_closed_form():
    p = synthetic.simulate_gbm(GbmParams(mu=0.01, sigma=0.0, steps=10)).prices[0]
    assert p[-1] == pytest.approx(100 * math.exp(0.1), rel=1e-12)
    assert p[-1] == pytest.approx(110.517, abs=1e-3)
    assert np.allclose(p, gbm_deterministic(100.0, 0.01, 10), rtol=1e-12)


def test_gbm_increments_replay_shocks():
    params = GbmParams(mu=0.001, sigma=0.03, steps=50, paths=4, seed=9)
    paths = synthetic.simulate_gbm(params)
    increments = np.diff(np.log(paths.prices), axis=1)
    assert np.allclose(increments, (params.mu - 0.5 * params.sigma ** 2) + params.sigma * paths.shocks,
                       rtol=0, atol=1e-12)


def test_gbm_paths_do_not_depend_on_path_count():
    few = synthetic.simulate_gbm(GbmParams(steps=30, paths=2, seed=5))
    many = synthetic.simulate_gbm(GbmParams(steps=30, paths=7, seed=5))
    assert np.array_equal(few.prices, many.prices[:2])


def test_gbm_mean_terminal_close_to_start():
    paths = synthetic.simulate_gbm(GbmParams(mu=0.0, sigma=0.02, steps=50, paths=10_000, seed=1))
    assert abs(paths.prices[:, -1].mean() / 100 - 1) < 0.01


def test_gbm_params_validation():
    for bad in (dict(s0=0), dict(sigma=-0.1), dict(steps=0), dict(paths=0)):
        with pytest.raises(ParameterError):
            GbmParams(**bad)


def test_gbm_series_on_weekdays():
    s = synthetic.simulate_gbm(GbmParams(steps=9)).series()[0]
    assert len(s) == 10 and all(d.weekday() < 5 for d in s.dates)


# -- FDES series ------------------------------------------------------------------

def test_identity_filler_gives_constant_series():
    out = synthetic.generate_fdes_series([0.4, 0.9], EventSchedule(), FuzzyEventMatrix(np.eye(2)), 8)
    assert np.all(out.series.values == 0.4)


def test_swap_event_shifts_level():
    swap = FuzzyEventMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]), "swap")
    out = synthetic.generate_fdes_series([0.4, 0.9], EventSchedule([ScheduledEvent(3, swap)]),
                                         FuzzyEventMatrix(np.eye(2)), 6)
    assert out.series.values.tolist() == [0.4, 0.4, 0.4, 0.9, 0.9, 0.9]


def test_trace_replays_and_matches_oracle():
    rng = np.random.default_rng(2)
    filler = FuzzyEventMatrix(rng.uniform(0.5, 1.0, size=(3, 3)))
    shock = FuzzyEventMatrix(rng.uniform(size=(3, 3)), "shock")
    out = synthetic.generate_fdes_series([0.3, 0.8, 0.6], EventSchedule([ScheduledEvent(4, shock)]), filler, 10)
    assert np.array_equal(synthetic.replay(out), out.states)
    q = [0.3, 0.8, 0.6]
    for t in range(1, 10):
        q = max_product(q, (shock if t == 4 else filler).entries.tolist())
        assert np.allclose(out.states[t], q, rtol=0, atol=1e-15)
    assert np.all((out.series.values >= 0) & (out.series.values <= 1))


def test_schedule_validation():
    eye = FuzzyEventMatrix(np.eye(2))
    with pytest.raises(ParameterError):
        EventSchedule([ScheduledEvent(3, eye), ScheduledEvent(3, eye)])
    with pytest.raises(ParameterError):
        synthetic.generate_fdes_series([0.5, 0.5], EventSchedule([ScheduledEvent(5, eye)]), eye, 5)
    with pytest.raises(DimensionError):
        synthetic.generate_fdes_series([0.5, 0.5], EventSchedule(), FuzzyEventMatrix(np.eye(3)), 5)


def test_write_ground_truth(tmp_path):
    ev = FuzzyEventMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]), "swap")
    out = synthetic.generate_fdes_series([0.4, 0.9], EventSchedule([ScheduledEvent(2, ev)]),
                                         FuzzyEventMatrix(np.eye(2)), 4)
    paths = synthetic.write_ground_truth(out, tmp_path, "gt")
    assert [p.name for p in paths] == ["gt_event_000.fdes", "gt_schedule.csv"]
    with paths[1].open() as fh:
        assert list(csv.reader(fh)) == [["step", "label", "matrix_file"], ["2", "swap", "gt_event_000.fdes"]]
    net = fdes.load_network(paths[0])
    assert np.array_equal(net.layers[0], ev.entries) and net.labels == ("swap",)


# -- event market -----------------------------------------------------------------

def test_rebound_event_structure():
    a = synthetic.rebound_event(4, 0.75).entries
    assert a.tolist() == [[0, 0, 0, 0.75], [1, 0, 0, 0.75], [0, 1, 0, 0.75], [0, 0, 1, 1.0]]
    view = np.array([0.9, 0.5, 0.5, 0.5])
    assert fdes.compose_exact(view, a).tolist() == pytest.approx([0.5, 0.5, 0.5, 0.675])
    assert fdes.compose_exact(np.full(4, 0.5), a)[-1] == 0.5


def test_event_market_deterministic_and_consistent():
    params = EventMarketParams(steps=200, seed=4)
    m1, m2 = synthetic.simulate_event_market(params), synthetic.simulate_event_market(params)
    assert np.array_equal(m1.series.closes, m2.series.closes)
    lp = np.log(m1.series.closes)
    event = synthetic.rebound_event()
    for t in (10, 50, 150):
        view = anchored_view(lp[t - 9:t + 1], params.span_sigmas * params.sigma)
        expected = fdes.compose_exact(view, event)[-1] - 0.5
        assert m1.impacts[t] == pytest.approx(expected, abs=1e-15)
        step = lp[t] - params.reversion * (lp[t] - math.log(100)) + params.impact * m1.impacts[t] \
            + params.sigma * m1.shocks[t]
        assert lp[t + 1] == pytest.approx(step, abs=1e-12)
    assert np.all(m1.impacts[:10] == 0) and np.all(m1.impacts >= 0)


def test_event_market_without_events_is_mean_reverting_walk():
    m = synthetic.simulate_event_market(EventMarketParams(steps=100, seed=1), schedule=EventSchedule())
    assert np.all(m.impacts == 0)


def test_event_market_validation():
    with pytest.raises(ParameterError):
        EventMarketParams(sigma=0.0)
    with pytest.raises(ParameterError):
        EventMarketParams(steps=10)
    with pytest.raises(DimensionError):
        synthetic.simulate_event_market(EventMarketParams(steps=50),
                                        EventSchedule([ScheduledEvent(12, synthetic.rebound_event(4))]))


# -- recovery ---------------------------------------------------------------------

def test_recovery_reaches_low_training_cost():
    res = synthetic.recovery_experiment(RecoveryConfig(train_pairs=50, probes=16, seed=1),
                                        fdes.TrainConfig(epochs=1500, rate=0.5, seed=1))
    assert res.final_cost < 1e-3
    assert res.probe_error < 0.05
    assert res.final_cost == pytest.approx(fdes.network_cost(res.trained, *_pairs(res, 1, 50)))


def _pairs(res, seed, n):
    rng = np.random.default_rng(seed)
    rng.uniform(size=(1, 4, 4))
    q = rng.uniform(size=(n, 4))
    return q, synthetic.exact_trace(res.truth, q)


def test_probe_error_is_functional_not_entrywise():
    # A dominated entry can take any value below its rival without changing the map.
    truth = np.array([[[1.0, 0.0], [0.2, 1.0]]])
    other = np.array([[[1.0, 0.0], [0.5, 1.0]]])
    q = np.random.default_rng(0).uniform(size=(100, 2))
    q[:, 1] = np.minimum(q[:, 1], q[:, 0])
    assert np.array_equal(synthetic.exact_trace(fdes.FdesNetwork(truth), q),
                          synthetic.exact_trace(fdes.FdesNetwork(other), q))


@pytest.mark.xfail(strict=True, reason="zero entries still add exp(0) terms: smooth output >= q + ln(1 + 3 e^-50q)/50, "
                                       "0.028 at q = 0, above the 1e-2 target")
def test_identity_recovery_probe_error():
    res = synthetic.recovery_experiment(RecoveryConfig(identity=True), fdes.TrainConfig(epochs=3000, rate=0.5),
                                        50.0, init=fdes.identity_network(4, 1, 50.0))
    assert res.probe_error < 1e-2


def test_identity_recovery_error_sits_at_smoothing_floor():
    res = synthetic.recovery_experiment(RecoveryConfig(identity=True, train_pairs=50, probes=64),
                                        fdes.TrainConfig(epochs=200, rate=0.5), 50.0,
                                        init=fdes.identity_network(4, 1, 50.0))
    assert res.probe_error <= math.log(4) / 50 + 1e-12
