"""Run configuration: a sectioned ``key = value`` file read with :mod:`configparser`.

Example::

    [run]
    seed = 7
    out_dir = out

    [gan]
    rounds = 300

Every section and key is optional; unknown ones are rejected. After loading,
each section is rebuilt into the owning module's parameter object so that its
own validation runs.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from . import fdes
from .adversarial import GanConfig
from .backtest import SplitConfig
from .errors import ConfigError, FdesqError, IoError
from .market import WINDOW, decay_weights
from .synthetic import EventMarketParams, GbmParams


@dataclass
class RunSection:
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "out"
    ticker: str = "EVT"


@dataclass
class FdesSection:
    n: int = 4
    depth: int = 1
    delta: float = 50.0
    rate: float = 0.5
    epochs: int = 3000
    train_pairs: int = 200
    probes: int = 64


@dataclass
class WindowSection:
    width: int = WINDOW
    scheme: str = "linear"
    decay_rate: float = 0.8


@dataclass
class ScreenSection:
    permutations: int = 10_000
    threshold: float = 0.95
    alpha: float = 0.05
    workers: int = 1
    universe: str = ""


@dataclass
class GanSection:
    rounds: int = 300
    g_steps: int = 5
    d_steps: int = 1
    g_rate: float = 20.0
    d_rate: float = 0.1
    delta: float = 100.0
    depth: int = 1
    sup_weight: float = 1.0
    span_moves: float = 10.0


@dataclass
class BacktestSection:
    train_days: int = 500
    refit_interval: int = 0
    baseline: str = "weighted_linear"


@dataclass
class SimulateSection:
    kind: str = "event"
    steps: int = 1000
    paths: int = 1
    s0: float = 100.0
    mu: float = 0.0
    sigma: float = 0.01
    impact: float = 0.2
    reversion: float = 0.02
    span_sigmas: float = 10.0


@dataclass
class GradcheckSection:
    instances: int = 100
    tolerance: float = 1e-4
    step: float = 1e-6


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    fdes: FdesSection = field(default_factory=FdesSection)
    window: WindowSection = field(default_factory=WindowSection)
    screen: ScreenSection = field(default_factory=ScreenSection)
    gan: GanSection = field(default_factory=GanSection)
    backtest: BacktestSection = field(default_factory=BacktestSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)

    # -- views in the owning modules' types --

    def train_config(self) -> fdes.TrainConfig:
        return fdes.TrainConfig(epochs=self.fdes.epochs, rate=self.fdes.rate, seed=self.run.seed)

    def gan_config(self) -> GanConfig:
        g = self.gan
        return GanConfig(rounds=g.rounds, g_steps=g.g_steps, d_steps=g.d_steps, g_rate=g.g_rate, d_rate=g.d_rate,
                         seed=self.run.seed, depth=g.depth, delta=g.delta, sup_weight=g.sup_weight)

    def split_config(self) -> SplitConfig:
        return SplitConfig(train_days=self.backtest.train_days, width=self.window.width, scheme=self.window.scheme,
                           decay_rate=self.window.decay_rate, refit_interval=self.backtest.refit_interval)

    def gbm_params(self) -> GbmParams:
        s = self.simulate
        return GbmParams(s0=s.s0, mu=s.mu, sigma=s.sigma, steps=s.steps, paths=s.paths, seed=self.run.seed)

    def event_params(self, seed: int | None = None) -> EventMarketParams:
        s = self.simulate
        return EventMarketParams(s0=s.s0, sigma=s.sigma, impact=s.impact, reversion=s.reversion,
                                 span_sigmas=s.span_sigmas, steps=s.steps, width=self.window.width,
                                 seed=self.run.seed if seed is None else seed)

    def validate(self) -> "RunConfig":
        """Re-run every owning module's checks; raise :class:`ConfigError` on the first failure."""
        checks = [self.train_config, self.gan_config, self.split_config, self.gbm_params,
                  lambda: decay_weights(self.window.width, self.window.scheme, self.window.decay_rate)]
        if self.simulate.kind == "event":
            checks.append(self.event_params)
        try:
            for check in checks:
                check()
        except FdesqError as exc:
            raise ConfigError(str(exc)) from exc
        rules = [
            (self.run.seed >= 0, "run.seed must be >= 0"),
            (self.fdes.n >= 1 and self.fdes.depth >= 1, "fdes.n and fdes.depth must be >= 1"),
            (self.fdes.delta > 0, "fdes.delta must be > 0"),
            (self.fdes.train_pairs >= 1 and self.fdes.probes >= 1, "fdes.train_pairs and fdes.probes must be >= 1"),
            (self.screen.permutations >= 100, "screen.permutations must be >= 100"),
            (0 <= self.screen.threshold <= 1, "screen.threshold must lie in [0, 1]"),
            (0 < self.screen.alpha < 1, "screen.alpha must lie in (0, 1)"),
            (self.screen.workers >= 1, "screen.workers must be >= 1"),
            (self.gan.span_moves > 0, "gan.span_moves must be > 0"),
            (self.backtest.baseline in ("martingale", "weighted_linear"),
             "backtest.baseline must be martingale or weighted_linear"),
            (self.simulate.kind in ("event", "gbm"), "simulate.kind must be event or gbm"),
            (self.gradcheck.instances >= 1, "gradcheck.instances must be >= 1"),
            (self.gradcheck.tolerance > 0 and self.gradcheck.step > 0, "gradcheck tolerance and step must be > 0"),
        ]
        for ok, msg in rules:
            if not ok:
                raise ConfigError(msg)
        return self


def _convert(section: str, key: str, raw: str, typ):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {typ.__name__}") from None


def loads_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = RunConfig()
    sections = {f.name: f for f in dataclasses.fields(cfg)}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"{source}: unknown section [{name}]")
        target = getattr(cfg, name)
        types = {f.name: f.type for f in dataclasses.fields(target)}
        for key, raw in parser.items(name):
            if key not in types:
                raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
            typ = {"int": int, "float": float, "str": str}[types[key]]
            setattr(target, key, _convert(name, key, raw, typ))
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    return loads_config(text, str(path))


def dumps_config(cfg: RunConfig) -> str:
    """Every value, in the same format :func:`loads_config` reads."""
    parser = configparser.ConfigParser(interpolation=None)
    for f in dataclasses.fields(cfg):
        section = getattr(cfg, f.name)
        parser[f.name] = {k: repr(v) if isinstance(v, float) else str(v)
                          for k, v in dataclasses.asdict(section).items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def flat_items(cfg: RunConfig) -> dict[str, str]:
    """``section.key -> value`` pairs for provenance echoes."""
    out = {}
    for f in dataclasses.fields(cfg):
        for k, v in dataclasses.asdict(getattr(cfg, f.name)).items():
            out[f"{f.name}.{k}"] = repr(v) if isinstance(v, float) else str(v)
    return out
