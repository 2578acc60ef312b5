"""GAN-style training of an FDES generator that produces adjustment trajectories.

The generator is an :class:`~fdesq.fdes.FdesNetwork` of dimension W. Seeded with
today's normalized price window, it emits a W-day trajectory of baseline
residuals for the days ending tomorrow, coded around ``RESIDUAL_OFFSET`` so the
trajectory stays inside the unit box. A logistic discriminator tries to tell
real residual trajectories from generated ones; the generator is trained on
the non-saturating loss ``-log D(G(window))`` plus an optional supervised term
pulling it toward the real trajectories.

The adjustment for a window is ``G(seed)[-1] - G(neutral)[-1]`` where the
neutral seed is constant at 0.5. With a view span set, the seed is the
today-anchored view of the window (see :func:`fdesq.market.anchored_view`),
under which a flat window is exactly the neutral seed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit, log_expit

from . import fdes
from .errors import DimensionError, InputError, IoError, ParameterError, ParseError
from .fdes import FdesNetwork
from .market import Scaler, anchored_view

logger = logging.getLogger(__name__)

RESIDUAL_OFFSET = 0.5
NEUTRAL_LEVEL = 0.5


@dataclass
class Discriminator:
    """Logistic scorer; ``weights`` holds W feature weights followed by the bias."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1 or self.weights.size < 2:
            raise DimensionError("discriminator needs W >= 1 feature weights plus a bias")

    @property
    def width(self) -> int:
        return self.weights.size - 1

    @classmethod
    def zeros(cls, width: int) -> "Discriminator":
        return cls(np.zeros(width + 1))

    def logits(self, windows) -> np.ndarray:
        x = np.asarray(windows, dtype=float)
        if x.shape[-1] != self.width:
            raise DimensionError(f"window length {x.shape[-1]} != discriminator width {self.width}")
        return x @ self.weights[:-1] + self.weights[-1]


def discriminator_score(d: Discriminator, window) -> np.ndarray | float:
    """Probability in (0, 1) that ``window`` is real."""
    s = expit(d.logits(window))
    return float(s) if np.ndim(s) == 0 else s


def discriminator_loss(d: Discriminator, real, fake) -> float:
    """Binary cross-entropy: ``-(mean log D(real) + mean log(1 - D(fake)))``."""
    return float(-(np.mean(log_expit(d.logits(real))) + np.mean(log_expit(-d.logits(fake)))))


def discriminator_accuracy(d: Discriminator, real, fake) -> float:
    hits = np.count_nonzero(d.logits(real) > 0) + np.count_nonzero(d.logits(fake) < 0)
    return hits / (len(real) + len(fake))


def _batch(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or len(x) == 0:
        raise InputError(f"{name} batch is empty")
    return x


def discriminator_step(d: Discriminator, real, fake, rate: float) -> tuple[Discriminator, float]:
    """One ascent step on ``mean log D(real) + mean log(1 - D(fake))``.

    Returns the updated discriminator and the cross-entropy before the step.
    """
    if rate < 0:
        raise ParameterError(f"rate must be >= 0, got {rate}")
    real, fake = _batch(real, "real"), _batch(fake, "fake")
    loss = discriminator_loss(d, real, fake)
    # d/dlogit log D = 1 - D ; d/dlogit log(1 - D) = -D
    gr = 1.0 - expit(d.logits(real))
    gf = -expit(d.logits(fake))
    grad = np.concatenate([gr @ real / len(real) + gf @ fake / len(fake), [gr.mean() + gf.mean()]])
    return Discriminator(d.weights + rate * grad), loss


def generator_loss(g: FdesNetwork, d: Discriminator, seeds, targets=None, sup_weight: float = 0.0,
                   component_weights=None) -> float:
    """Mean ``-log D(G(seed))`` plus ``sup_weight`` times the weighted supervised cost."""
    seeds = _batch(seeds, "seed")
    out = fdes.forward(g, seeds)[-1]
    loss = float(-np.mean(log_expit(d.logits(out))))
    if sup_weight and targets is not None:
        cw = _component_weights(component_weights, out.shape[1])
        loss += sup_weight * float(np.mean(0.5 * np.sum(cw * (out - np.asarray(targets)) ** 2, axis=1)))
    return loss


def _component_weights(cw, width: int) -> np.ndarray:
    if cw is None:
        return np.ones(width)
    cw = np.asarray(cw, dtype=float)
    if cw.shape != (width,):
        raise DimensionError(f"component weights must have length {width}")
    return cw


def generator_gradients(g: FdesNetwork, d: Discriminator, seeds, targets=None, sup_weight: float = 0.0,
                        component_weights=None) -> tuple[fdes.GradientSet, float]:
    seeds = _batch(seeds, "seed")
    if seeds.shape[1] != g.dimension or d.width != g.dimension:
        raise DimensionError(f"generator dimension {g.dimension}, seeds {seeds.shape[1]}, discriminator {d.width}")
    states = fdes.trace(g, seeds)
    out = states[-1]
    logits = d.logits(out)
    b = len(seeds)
    loss = float(-np.mean(log_expit(logits)))
    # d(-log D)/d out = -(1 - D) * w
    out_grad = -(1.0 - expit(logits))[:, None] * d.weights[:-1][None, :] / b
    if sup_weight and targets is not None:
        t = np.asarray(targets, dtype=float)
        if t.shape != out.shape:
            raise DimensionError(f"targets shape {t.shape} != generator output {out.shape}")
        cw = _component_weights(component_weights, out.shape[1])
        loss += sup_weight * float(np.mean(0.5 * np.sum(cw * (out - t) ** 2, axis=1)))
        out_grad = out_grad + sup_weight * cw * (out - t) / b
    return fdes.backward_from_output(g, states, out_grad), loss


def generator_step(g: FdesNetwork, d: Discriminator, seeds, rate: float, targets=None, sup_weight: float = 0.0,
                   component_weights=None) -> tuple[FdesNetwork, float]:
    """One projected descent step on the generator loss; returns the loss before the step."""
    grads, loss = generator_gradients(g, d, seeds, targets, sup_weight, component_weights)
    return fdes.sgd_step(g, grads, rate), loss


@dataclass
class GanConfig:
    """Alternating-training schedule.

    ``sup_weight`` scales the supervised pull toward real residual trajectories;
    ``anchor_weight`` adds the neutral window with a zero-residual trajectory as
    an extra supervised sample so the neutral point stays put.
    """

    rounds: int = 200
    g_steps: int = 5
    d_steps: int = 1
    g_rate: float = 0.5
    d_rate: float = 0.5
    seed: int = 0
    depth: int = 1
    delta: float = 10.0
    sup_weight: float = 1.0
    anchor_weight: float = 0.0
    train_delta: bool = False
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("rounds", "g_steps", "d_steps", "depth"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        for name in ("g_rate", "d_rate", "sup_weight", "anchor_weight"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if not self.delta > 0:
            raise ParameterError("delta must be > 0")


@dataclass
class GanRound:
    round: int
    d_loss: float
    g_loss: float
    d_acc: float


@dataclass
class AdjusterModel:
    generator: FdesNetwork
    discriminator: Discriminator
    scaler: Scaler | None = None
    offset: float = RESIDUAL_OFFSET
    view_span: float | None = None

    @property
    def width(self) -> int:
        return self.generator.dimension

    @property
    def labels(self) -> tuple[str, ...]:
        return self.generator.labels

    def seed(self, window) -> np.ndarray:
        """Generator seed for a raw normalized window."""
        if self.view_span is None:
            return np.clip(np.asarray(window, dtype=float), 0.0, 1.0)
        return anchored_view(window, self.view_span)

    def output(self, window) -> np.ndarray | float:
        """Last generated component for a seed state or a batch (clipped into [0, 1])."""
        w = np.clip(np.asarray(window, dtype=float), 0.0, 1.0)
        if w.shape[-1] != self.width:
            raise DimensionError(f"window length {w.shape[-1]} != adjuster width {self.width}")
        out = fdes.forward(self.generator, w)[-1][..., -1]
        return float(out) if np.ndim(out) == 0 else out

    def neutral(self) -> float:
        return float(self.output(np.full(self.width, NEUTRAL_LEVEL)))

    def adjust(self, baseline, window):
        """Adjusted prediction for the raw normalized ``window`` ending today."""
        return apply_adjustment(baseline, self.output(self.seed(window)), self.neutral())


def apply_adjustment(baseline, adjuster_output, neutral):
    """``baseline + (adjuster_output - neutral)``, all in normalized units."""
    return baseline + (adjuster_output - neutral)


def gan_train(config: GanConfig, windows, residual_targets, component_weights=None,
              init: FdesNetwork | None = None, scaler: Scaler | None = None,
              view_span: float | None = None) -> tuple[AdjusterModel, list[GanRound]]:
    """Alternate discriminator and generator updates.

    Args:
        config: schedule and rates.
        windows: generator seed states, shape (B, W); values are clipped into [0, 1].
        residual_targets: real residual trajectories coded around the offset,
            shape (B, W); these are the discriminator's "real" samples.
        component_weights: per-day weights for the supervised term.
        init: starting generator; drawn from ``config.seed`` when omitted.
        view_span: recorded on the model so raw windows are mapped the same
            way the seeds were.

    Returns:
        The trained adjuster and one :class:`GanRound` per round, measured
        before that round's updates.
    """
    seeds = np.clip(_batch(windows, "window"), 0.0, 1.0)
    real = _batch(residual_targets, "residual")
    if seeds.shape != real.shape:
        raise DimensionError(f"windows {seeds.shape} and residual targets {real.shape} differ")
    width = seeds.shape[1]
    labels = tuple(config.labels) or tuple(f"event_{k}" for k in range(config.depth))
    g = init.copy() if init is not None else fdes.init_network(width, config.depth, config.seed, config.delta,
                                                               labels=labels)
    if config.train_delta:
        g = replace(g, train_delta=True)
    d = Discriminator.zeros(width)

    sup_seeds, sup_targets = seeds, real
    if config.anchor_weight > 0:
        # The anchor is folded in as extra rows carrying a share of the batch weight.
        reps = max(1, int(round(config.anchor_weight * len(seeds))))
        sup_seeds = np.vstack([seeds, np.full((reps, width), NEUTRAL_LEVEL)])
        sup_targets = np.vstack([real, np.full((reps, width), RESIDUAL_OFFSET)])

    history: list[GanRound] = []
    for r in range(config.rounds):
        fake = fdes.forward(g, seeds)[-1]
        history.append(GanRound(r, discriminator_loss(d, real, fake), generator_loss(g, d, seeds),
                                discriminator_accuracy(d, real, fake)))
        for _ in range(config.d_steps):
            d, _ = discriminator_step(d, real, fake, config.d_rate)
        for _ in range(config.g_steps):
            adv, _ = generator_gradients(g, d, seeds)
            grads = adv
            if config.sup_weight:
                sup, _ = generator_gradients(g, Discriminator.zeros(width), sup_seeds, sup_targets,
                                             config.sup_weight, component_weights)
                # Zero discriminator contributes a constant -log(0.5) and no gradient.
                grads = fdes.GradientSet(adv.layers + sup.layers,
                                         None if adv.delta is None else adv.delta + sup.delta)
            g = fdes.sgd_step(g, grads, config.g_rate)
    return AdjusterModel(g, d, scaler, view_span=view_span), history


def holdout_accuracy(model: AdjusterModel, windows, residual_targets) -> float:
    """Discriminator accuracy on real vs generated trajectories for unseen windows."""
    seeds = np.clip(_batch(windows, "window"), 0.0, 1.0)
    fake = fdes.forward(model.generator, seeds)[-1]
    return discriminator_accuracy(model.discriminator, _batch(residual_targets, "residual"), fake)


# -- serialization ----------------------------------------------------------------

def dumps_adjuster(model: AdjusterModel) -> str:
    lines = [fdes.dumps_network(model.generator).rstrip("\n")]
    lines.append("disc v1 " + " ".join(f"{x:.17g}" for x in model.discriminator.weights))
    if model.scaler is not None:
        lines.append(f"scaler v1 {model.scaler.low:.17g} {model.scaler.high:.17g}")
    if model.view_span is not None:
        lines.append(f"view v1 {model.view_span:.17g}")
    return "\n".join(lines) + "\n"


def loads_adjuster(text: str, source: str | None = None) -> AdjusterModel:
    gen = fdes.loads_network(text, source)
    disc = scaler = span = None
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if parts[:2] == ["disc", "v1"]:
            try:
                disc = Discriminator(np.array([float(x) for x in parts[2:]]))
            except ValueError:
                raise ParseError("bad discriminator weights", lineno, source) from None
        elif parts[:2] == ["scaler", "v1"]:
            try:
                scaler = Scaler(float(parts[2]), float(parts[3]))
            except (ValueError, IndexError):
                raise ParseError("bad scaler line", lineno, source) from None
        elif parts[:2] == ["view", "v1"]:
            try:
                span = float(parts[2])
            except (ValueError, IndexError):
                raise ParseError("bad view line", lineno, source) from None
            if not span > 0:
                raise ParseError(f"view span must be > 0, got {span}", lineno, source)
    if disc is None:
        raise ParseError("missing 'disc v1' line", None, source)
    if disc.width != gen.dimension:
        raise ParseError(f"discriminator width {disc.width} != generator dimension {gen.dimension}", None, source)
    return AdjusterModel(gen, disc, scaler, view_span=span)


def save_adjuster(model: AdjusterModel, path) -> None:
    try:
        Path(path).write_text(dumps_adjuster(model))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_adjuster(path) -> AdjusterModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return loads_adjuster(text, str(path))


def write_history_csv(history, path) -> None:
    try:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "d_loss", "g_loss", "d_acc"])
            for h in history:
                w.writerow([h.round, f"{h.d_loss:.17g}", f"{h.g_loss:.17g}", f"{h.d_acc:.17g}"])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
