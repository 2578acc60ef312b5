import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdesq import adversarial as adv
from fdesq import fdes
from fdesq.adversarial import AdjusterModel, Discriminator, GanConfig
from fdesq.errors import DimensionError, InputError, ParameterError, ParseError
from fdesq.market import Scaler

from .oracles import logistic


def _gen(width=4, seed=0, delta=10.0):
    return fdes.init_network(width, 1, seed, delta)


def _disc(width=4, seed=0):
    return Discriminator(np.random.default_rng(seed).normal(size=width + 1))


# -- discriminator ----------------------------------------------------------------

def test_score_examples():
    assert adv.discriminator_score(Discriminator.zeros(10), np.random.default_rng(0).uniform(size=10)) == 0.5
    w = np.zeros(11)
    w[0] = 1.0
    window = np.zeros(10)
    window[0] = 1.0
    assert adv.discriminator_score(Discriminator(w), window) == pytest.approx(0.7310585786300049, abs=1e-15)
    assert adv.discriminator_score(Discriminator(w), window) == pytest.approx(logistic(1.0), abs=1e-15)
    w[-1] = 1e6
    assert adv.discriminator_score(Discriminator(w), window) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_score_strictly_inside_unit_interval(weights, window):
    assert 0 < adv.discriminator_score(Discriminator(weights), window) < 1


def test_score_dimension_mismatch():
    with pytest.raises(DimensionError):
        adv.discriminator_score(Discriminator.zeros(3), [0.5, 0.5])


def test_identical_batches_leave_symmetric_discriminator_neutral():
    batch = np.random.default_rng(1).uniform(size=(8, 5))
    d, loss = adv.discriminator_step(Discriminator.zeros(5), batch, batch, 0.7)
    assert loss == pytest.approx(2 * math.log(2))
    assert np.allclose(d.weights, 0, atol=1e-15)
    assert np.allclose(adv.discriminator_score(d, batch), 0.5)


def test_rate_zero_discriminator_unchanged():
    d = _disc()
    rng = np.random.default_rng(2)
    d2, _ = adv.discriminator_step(d, rng.uniform(size=(4, 4)), rng.uniform(size=(4, 4)), 0.0)
    assert np.array_equal(d.weights, d2.weights)


def test_discriminator_step_errors():
    with pytest.raises(InputError):
        adv.discriminator_step(Discriminator.zeros(3), np.empty((0, 3)), np.ones((2, 3)), 0.1)
    with pytest.raises(ParameterError):
        adv.discriminator_step(Discriminator.zeros(3), np.ones((2, 3)), np.ones((2, 3)), -1.0)


def test_discriminator_learns_separable_clusters():
    rng = np.random.default_rng(3)
    real = np.clip(0.7 + 0.05 * rng.standard_normal((50, 6)), 0, 1)
    fake = np.clip(0.3 + 0.05 * rng.standard_normal((50, 6)), 0, 1)
    d = Discriminator.zeros(6)
    for _ in range(200):
        d, _ = adv.discriminator_step(d, real, fake, 0.5)
    assert adv.discriminator_accuracy(d, real, fake) >= 0.9


def test_discriminator_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    real, fake = rng.uniform(size=(6, 4)), rng.uniform(size=(6, 4))
    d = _disc(4, 4)
    stepped, _ = adv.discriminator_step(d, real, fake, 1.0)
    analytic = d.weights - stepped.weights  # one ascent step at rate 1 is minus the loss gradient
    h = 1e-6
    numeric = np.array([(adv.discriminator_loss(Discriminator(d.weights + h * e), real, fake)
                         - adv.discriminator_loss(Discriminator(d.weights - h * e), real, fake)) / (2 * h)
                        for e in np.eye(5)])
    assert np.abs(analytic - numeric).max() / np.abs(numeric).max() < 1e-6


# -- generator --------------------------------------------------------------------

def test_generator_rate_zero_unchanged():
    g = _gen()
    g2, _ = adv.generator_step(g, _disc(), np.random.default_rng(5).uniform(size=(3, 4)), 0.0)
    assert np.array_equal(g.layers, g2.layers)


def test_generator_loss_non_increasing_with_frozen_discriminator():
    g, d = _gen(seed=6), _disc(seed=6)
    seeds = np.random.default_rng(6).uniform(size=(8, 4))
    losses = []
    for _ in range(50):
        g, loss = adv.generator_step(g, d, seeds, 1e-2)
        losses.append(loss)
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


@pytest.mark.parametrize("sup_weight", [0.0, 0.7])
def test_generator_gradient_matches_finite_differences(sup_weight):
    rng = np.random.default_rng(7)
    g = fdes.FdesNetwork(rng.uniform(0.1, 0.9, size=(2, 4, 4)), 5.0)
    d = _disc(seed=7)
    seeds, targets = rng.uniform(size=(5, 4)), rng.uniform(size=(5, 4))
    cw = np.array([0.25, 0.5, 0.75, 1.0])
    grads, _ = adv.generator_gradients(g, d, seeds, targets, sup_weight, cw)
    fd = fdes.finite_diff_gradients(g, None, None, 1e-6,
                                    loss=lambda m: adv.generator_loss(m, d, seeds, targets, sup_weight, cw))
    assert fdes.relative_error(grads, fd) < 1e-4


def test_generator_dimension_mismatch():
    with pytest.raises(DimensionError):
        adv.generator_step(_gen(4), _disc(3), np.ones((2, 4)) * 0.5, 0.1)


# -- training ---------------------------------------------------------------------

def _toy_data(n=40, width=4, seed=8):
    rng = np.random.default_rng(seed)
    windows = rng.uniform(size=(n, width))
    targets = np.clip(0.5 + 0.2 * (windows - windows[:, -1:]), 0, 1)
    return windows, targets


def test_one_round_at_rate_zero_is_initialisation():
    windows, targets = _toy_data()
    cfg = GanConfig(rounds=1, g_rate=0.0, d_rate=0.0, seed=3)
    model, history = adv.gan_train(cfg, windows, targets)
    init = fdes.init_network(4, 1, 3, cfg.delta)
    assert np.array_equal(model.generator.layers, init.layers)
    assert np.array_equal(model.discriminator.weights, np.zeros(5))
    assert len(history) == 1


def test_gan_train_deterministic():
    windows, targets = _toy_data()
    cfg = GanConfig(rounds=20, seed=1)
    (m1, h1), (m2, h2) = adv.gan_train(cfg, windows, targets), adv.gan_train(cfg, windows, targets)
    assert h1 == h2
    assert np.array_equal(m1.generator.layers, m2.generator.layers)
    assert np.array_equal(m1.discriminator.weights, m2.discriminator.weights)


def test_gan_train_validation():
    windows, targets = _toy_data()
    with pytest.raises(DimensionError):
        adv.gan_train(GanConfig(rounds=1), windows, targets[:, :3])
    with pytest.raises(ParameterError):
        GanConfig(rounds=0)
    with pytest.raises(ParameterError):
        GanConfig(g_rate=-1.0)


def test_anchor_pulls_neutral_output_toward_offset():
    windows, targets = _toy_data()
    gaps = [abs(adv.gan_train(GanConfig(rounds=100, anchor_weight=a, g_rate=2.0, delta=50.0), windows, targets)[0]
                .neutral() - adv.RESIDUAL_OFFSET) for a in (0.0, 0.5, 2.0)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_holdout_accuracy_near_chance_on_event_market():
    from fdesq.backtest import WeightedLinear
    from fdesq.market import anchored_view, rolling_windows
    from fdesq.pipeline import ADJUSTER_GAN, fit_adjuster, residual_dataset
    from fdesq.synthetic import EventMarketParams, simulate_event_market

    closes = simulate_event_market(EventMarketParams(seed=0)).series.closes
    v = Scaler.fit(closes[:500]).transform(closes)
    base = WeightedLinear()
    base.fit(rolling_windows(v[:500]))
    model, history = fit_adjuster(v[:500], base, 10, ADJUSTER_GAN)
    windows, targets = residual_dataset(v[500:], base, 10)
    acc = adv.holdout_accuracy(model, anchored_view(windows, model.view_span), targets)
    assert abs(acc - 0.5) <= 0.15
    assert len(history) == ADJUSTER_GAN.rounds


# -- adjustment and serialization ---------------------------------------------------

def test_apply_adjustment_examples():
    assert adv.apply_adjustment(0.6, 0.55, 0.5) == pytest.approx(0.65, abs=1e-15)
    assert adv.apply_adjustment(0.3, 0.42, 0.42) == 0.3
    assert adv.apply_adjustment(0.95, 0.9, 0.5) == pytest.approx(1.35)


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 2), st.floats(0, 1), st.floats(0, 1))
def test_apply_adjustment_exactly_additive(base, out, neutral):
    adjusted = adv.apply_adjustment(base, out, neutral)
    assert adjusted - base == pytest.approx(out - neutral, abs=4 * np.finfo(float).eps * max(1.0, abs(base)))


def test_adjuster_model_neutral_and_view():
    g = fdes.identity_network(4, delta=1e4)
    model = AdjusterModel(g, Discriminator.zeros(4), view_span=0.4)
    assert model.adjust(0.3, np.full(4, 0.8)) == pytest.approx(0.3, abs=1e-12)
    assert np.allclose(model.seed([0.1, 0.2, 0.3, 0.2]), [0.25, 0.5, 0.75, 0.5])
    raw = AdjusterModel(g, Discriminator.zeros(4))
    assert raw.seed([-0.5, 0.2, 1.5, 0.3]).tolist() == [0.0, 0.2, 1.0, 0.3]
    with pytest.raises(DimensionError):
        model.output([0.5, 0.5])


def test_adjuster_round_trip(tmp_path):
    model = AdjusterModel(_gen(4, 9), _disc(4, 9), Scaler(10.0, 30.5), view_span=0.123456789)
    path = tmp_path / "adj.fdes"
    adv.save_adjuster(model, path)
    text = path.read_text()
    assert text.startswith("fdes v1 4 1 ")
    assert "disc v1 " in text and "scaler v1 10 30.5" in text and "view v1 0.123456789" in text
    back = adv.load_adjuster(path)
    assert np.array_equal(back.generator.layers, model.generator.layers)
    assert np.array_equal(back.discriminator.weights, model.discriminator.weights)
    assert back.scaler == model.scaler and back.view_span == model.view_span


def test_adjuster_parse_errors():
    base = fdes.dumps_network(_gen(2))
    with pytest.raises(ParseError):
        adv.loads_adjuster(base)
    with pytest.raises(ParseError):
        adv.loads_adjuster(base + "disc v1 0 0\n")
    with pytest.raises(ParseError) as info:
        adv.loads_adjuster(base + "disc v1 0 0 0\nview v1 -1\n")
    assert info.value.line == 5


def test_history_csv(tmp_path):
    windows, targets = _toy_data()
    _, history = adv.gan_train(GanConfig(rounds=3), windows, targets)
    adv.write_history_csv(history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "round,d_loss,g_loss,d_acc" and len(lines) == 4
