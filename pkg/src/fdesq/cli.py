"""``fdesq`` command-line entry point.

Subcommands: gradcheck, ingest, screen, simulate, train, backtest. Exit codes
are 0 on success, 1 when a check fails and 2 on usage, configuration or IO
errors. ``FDESQ_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import fdes
from .adversarial import load_adjuster, save_adjuster, write_history_csv
from .backtest import Martingale, WeightedLinear, backtest, emit_report, summary_lines
from .config import RunConfig, flat_items, load_config
from .errors import ConfigError, FdesqError, InputError, IoError
from .market import ingest_csv, normalize, rolling_windows, samples_to_csv, write_csv
from .pipeline import fit_adjuster
from .screen import load_universe, screen_universe, write_pairs_csv
from .synthetic import RecoveryConfig, recovery_experiment, simulate_event_market, simulate_gbm, write_schedule

logger = logging.getLogger("fdesq")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


def _setup_logging() -> None:
    level = os.environ.get("FDESQ_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out is not None:
        cfg.run.out_dir = args.out
    if args.data is not None:
        cfg.run.data_dir = args.data
    return cfg.validate()


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    return out


def _csv_files(cfg: RunConfig) -> list[Path]:
    data = Path(cfg.run.data_dir)
    if not data.is_dir():
        raise IoError(f"data directory {data} does not exist")
    return sorted(data.glob("*.csv"))


def _load_ticker(cfg: RunConfig, ticker: str):
    return ingest_csv(Path(cfg.run.data_dir) / f"{ticker}.csv", ticker)


def _baseline(cfg: RunConfig):
    if cfg.backtest.baseline == "martingale":
        return Martingale()
    return WeightedLinear(cfg.window.width, cfg.window.scheme, cfg.window.decay_rate)


# -- commands ---------------------------------------------------------------------

def cmd_gradcheck(cfg: RunConfig, corrupt: float = 0.0) -> int:
    g = cfg.gradcheck
    worst = 0.0
    for case in fdes.gradcheck_sweep(g.instances, cfg.run.seed, g.step, corrupt):
        print(f"instance {case.index:3d}  N={case.n} L={case.depth} delta={case.delta:g}  "
              f"max relative error {case.error:.3e}")
        worst = max(worst, case.error)
    ok = worst < g.tolerance
    print(f"worst {worst:.3e} vs tolerance {g.tolerance:.0e}: {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_ingest(cfg: RunConfig) -> int:
    files = _csv_files(cfg)
    if not files:
        raise InputError(f"no CSV files in {cfg.run.data_dir}")
    out = _out_dir(cfg)
    for path in files:
        series = ingest_csv(path)
        write_csv(series, out / f"{series.ticker}.csv")
        norm = normalize(series)
        samples = rolling_windows(norm, cfg.window.width, 1, cfg.window.scheme, cfg.window.decay_rate)
        samples_to_csv(samples, out / f"samples_{series.ticker}.csv")
        print(f"{series.ticker}: {len(series)} days, {len(samples)} samples")
    return EXIT_OK


def cmd_screen(cfg: RunConfig) -> int:
    files = _csv_files(cfg)
    universe = {p.stem: ingest_csv(p) for p in files}
    if cfg.screen.universe:
        keep = set(load_universe(None if cfg.screen.universe == "bundled" else cfg.screen.universe))
        universe = {k: v for k, v in universe.items() if k in keep}
    if len(universe) < 2:
        raise InputError(f"need at least 2 tickers in {cfg.run.data_dir}, found {len(universe)}")
    s = cfg.screen
    results = screen_universe(universe, s.threshold, s.alpha, s.permutations, cfg.run.seed, s.workers)
    write_pairs_csv(results, _out_dir(cfg) / "pairs.csv")
    selected = sum(r.selected for r in results)
    print(f"evaluated {len(results)} pairs, selected {selected}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    if cfg.simulate.kind == "gbm":
        paths = simulate_gbm(cfg.gbm_params())
        for series in paths.series():
            write_csv(series, out / f"{series.ticker}.csv")
        print(f"wrote {cfg.simulate.paths} GBM paths of {cfg.simulate.steps} steps")
        return EXIT_OK
    market = simulate_event_market(cfg.event_params(), ticker=cfg.run.ticker)
    write_csv(market.series, out / f"{cfg.run.ticker}.csv")
    write_schedule(market.schedule, out, f"{cfg.run.ticker}_truth")
    impacts = out / f"{cfg.run.ticker}_impacts.csv"
    try:
        impacts.write_text("step,impact\n" + "".join(f"{t},{e:.17g}\n" for t, e in enumerate(market.impacts)))
    except OSError as exc:
        raise IoError(f"cannot write {impacts}: {exc}") from exc
    print(f"wrote event-driven series {cfg.run.ticker} ({cfg.simulate.steps} days) with ground truth")
    return EXIT_OK


def cmd_train(cfg: RunConfig, target: str = "adjuster") -> int:
    out = _out_dir(cfg)
    if target == "recovery":
        f = cfg.fdes
        rc = RecoveryConfig(n=f.n, depth=f.depth, train_pairs=f.train_pairs, probes=f.probes, seed=cfg.run.seed)
        res = recovery_experiment(rc, cfg.train_config(), f.delta)
        fdes.save_network(res.truth, out / "recovery_truth.fdes")
        fdes.save_network(res.trained, out / "recovery_trained.fdes")
        print(f"recovery: final cost {res.final_cost:.3e}, probe error {res.probe_error:.3e}")
        return EXIT_OK
    series = _load_ticker(cfg, cfg.run.ticker)
    split = cfg.split_config()
    if len(series) <= split.train_days:
        raise InputError(f"{series.ticker}: {len(series)} days, train segment needs {split.train_days}")
    norm = normalize(series.slice(0, split.train_days))
    baseline = _baseline(cfg)
    baseline.fit(rolling_windows(norm, split.width, 1, split.scheme, split.decay_rate))
    model, history = fit_adjuster(norm.values, baseline, split.width, cfg.gan_config(), cfg.gan.span_moves,
                                  scaler=norm.scaler)
    save_adjuster(model, out / f"adjuster_{series.ticker}.fdes")
    write_history_csv(history, out / f"history_{series.ticker}.csv")
    last = history[-1]
    print(f"{series.ticker}: trained adjuster on {split.train_days} days, "
          f"final d_loss {last.d_loss:.4f}, g_loss {last.g_loss:.4f}, d_acc {last.d_acc:.3f}")
    return EXIT_OK


def cmd_backtest(cfg: RunConfig, adjuster_path: str | None = None) -> int:
    series = _load_ticker(cfg, cfg.run.ticker)
    out = _out_dir(cfg)
    path = Path(adjuster_path) if adjuster_path else out / f"adjuster_{series.ticker}.fdes"
    adjuster = None
    if path.exists():
        adjuster = load_adjuster(path)
        train = series.closes[:cfg.backtest.train_days]
        sc = adjuster.scaler
        if sc is not None and (sc.low, sc.high) != (float(train.min()), float(train.max())):
            raise ConfigError(f"{path} was trained with a different scaler than this train segment")
    elif adjuster_path:
        raise IoError(f"cannot read {path}")
    echo = flat_items(cfg)
    echo["adjuster_file"] = path.name if adjuster is not None else "none"
    report = backtest(series, _baseline(cfg), adjuster, cfg.split_config(), echo)
    emit_report(report, out)
    for line in summary_lines(report):
        print(line)
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", help="override run.out_dir")
    common.add_argument("--data", help="override run.data_dir")

    parser = argparse.ArgumentParser(prog="fdesq", description="FDES learning and event-adjusted stock prediction")
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    g.add_argument("--corrupt-gradient", type=float, default=0.0, help=argparse.SUPPRESS)
    sub.add_parser("ingest", parents=[common], help="validate price CSVs and dump rolling-window samples")
    sub.add_parser("screen", parents=[common], help="permutation-test correlation screen of all ticker pairs")
    sub.add_parser("simulate", parents=[common], help="write a synthetic market with its ground truth")
    t = sub.add_parser("train", parents=[common], help="train the event adjuster (or run a recovery experiment)")
    t.add_argument("--target", choices=("adjuster", "recovery"), default="adjuster")
    b = sub.add_parser("backtest", parents=[common], help="walk-forward baseline vs adjusted backtest")
    b.add_argument("--adjuster", help="adjuster file (default: <out>/adjuster_<ticker>.fdes if present)")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.corrupt_gradient)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "screen":
            return cmd_screen(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.target)
        return cmd_backtest(cfg, args.adjuster)
    except FdesqError as exc:
        print(f"fdesq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
