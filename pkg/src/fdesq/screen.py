"""Correlation screening of an equity universe with a permutation test."""

from __future__ import annotations

import csv
import hashlib
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DegenerateInputError, DimensionError, InputError, IoError, ParameterError
from .market import PriceSeries

logger = logging.getLogger(__name__)

DEFAULT_PERMUTATIONS = 10_000
# Permuted statistics within this distance of the observed one count as ties.
TIE_EPS = 1e-12


@dataclass(frozen=True)
class PairResult:
    ticker_a: str
    ticker_b: str
    r: float
    p: float
    selected: bool
    n_obs: int = 0

    @property
    def name(self) -> str:
        return f"{self.ticker_a}-{self.ticker_b}"


def _validate(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise DimensionError(f"series must be 1-D and equal length, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise InputError("correlation needs at least 3 observations")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInputError("correlation undefined for a constant series")
    return x, y


def pearson_corr(x, y) -> float:
    x, y = _validate(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    r = float(xc @ yc / np.sqrt((xc @ xc) * (yc @ yc)))
    return min(1.0, max(-1.0, r))


def pair_seed(seed: int, a: str, b: str) -> int:
    """Stable per-pair seed, independent of evaluation order."""
    digest = hashlib.sha256(f"{seed}:{a}:{b}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def permutation_pvalue(x, y, permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0,
                       chunk: int = 2000) -> float:
    """Two-sided permutation p-value for Pearson correlation.

    ``p = (1 + #{|r_perm| >= |r_obs|}) / (M + 1)``, shuffling ``y`` with a
    generator seeded by ``seed``.
    """
    if permutations < 100:
        raise ParameterError(f"need at least 100 permutations, got {permutations}")
    x, y = _validate(x, y)
    r_obs = abs(pearson_corr(x, y))
    xc = x - x.mean()
    xc = xc / np.sqrt(xc @ xc)
    yc = y - y.mean()
    yc = yc / np.sqrt(yc @ yc)
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < permutations:
        m = min(chunk, permutations - done)
        shuffled = rng.permuted(np.broadcast_to(yc, (m, len(yc))), axis=1)
        hits += int(np.count_nonzero(np.abs(shuffled @ xc) >= r_obs - TIE_EPS))
        done += m
    return (1 + hits) / (permutations + 1)


def align(a: PriceSeries, b: PriceSeries) -> tuple[np.ndarray, np.ndarray]:
    """Closes of both series restricted to their common dates."""
    common = sorted(set(a.dates) & set(b.dates))
    ia = {d: i for i, d in enumerate(a.dates)}
    ib = {d: i for i, d in enumerate(b.dates)}
    return (np.array([a.closes[ia[d]] for d in common]),
            np.array([b.closes[ib[d]] for d in common]))


def screen_universe(universe: Mapping[str, PriceSeries], threshold: float = 0.95, alpha: float = 0.05,
                    permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0, workers: int = 1,
                    warnings: list[str] | None = None) -> list[PairResult]:
    """Evaluate every unordered ticker pair.

    A pair is selected when ``|r| > threshold`` and ``p < alpha``. Pairs with
    fewer than 3 common dates, or constant over them, are skipped and a
    message is appended to ``warnings``. Results are sorted by ``|r|``
    descending, ties broken by pair name.
    """
    if len(universe) < 2:
        raise InputError(f"need at least 2 tickers, got {len(universe)}")
    pairs = list(itertools.combinations(sorted(universe), 2))

    def evaluate(pair):
        a, b = pair
        x, y = align(universe[a], universe[b])
        if len(x) < 3:
            return None, f"{a}-{b}: only {len(x)} common dates, skipped"
        try:
            r = pearson_corr(x, y)
            p = permutation_pvalue(x, y, permutations, pair_seed(seed, a, b))
        except DegenerateInputError as exc:
            return None, f"{a}-{b}: {exc}, skipped"
        return PairResult(a, b, r, p, abs(r) > threshold and p < alpha, len(x)), None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(evaluate, pairs))
    else:
        outcomes = [evaluate(p) for p in pairs]

    results = []
    for res, msg in outcomes:
        if msg is not None:
            logger.warning(msg)
            if warnings is not None:
                warnings.append(msg)
        else:
            results.append(res)
    results.sort(key=lambda r: (-abs(r.r), r.name))
    return results


def write_pairs_csv(results, path) -> None:
    try:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ticker_a", "ticker_b", "r", "p", "selected"])
            for r in results:
                w.writerow([r.ticker_a, r.ticker_b, f"{r.r:.17g}", f"{r.p:.17g}", int(r.selected)])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_pairs_csv(path) -> list[PairResult]:
    with Path(path).open(newline="") as fh:
        return [PairResult(row["ticker_a"], row["ticker_b"], float(row["r"]), float(row["p"]), row["selected"] == "1")
                for row in csv.DictReader(fh)]


def load_universe(path=None) -> list[str]:
    """Ticker symbols, one per line. Defaults to the bundled 88-equity list."""
    if path is None:
        text = resources.files("fdesq").joinpath("data/universe_88.txt").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
    return [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
