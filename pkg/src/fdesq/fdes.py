"""Fuzzy discrete event systems with max-product composition, trained by backpropagation.

A state is a row vector in [0, 1]^N and an event is an N x N matrix with entries
in [0, 1]. An event acts on a state by max-product composition::

    (q o A)_j = max_i q_i * a_ij

The max is not differentiable, so training replaces it by the log-sum-exp smooth
maximum with sharpness ``delta``::

    smax_j = (1/delta) * log(sum_m exp(delta * q_m * a_mj))

which over-estimates the max by at most ``log(N) / delta``. A network is an
ordered stack of L events sharing one ``delta``; the forward pass composes them
left to right and the backward pass is exact differentiation of that map.

All functions accept either a single state of shape ``(N,)`` or a batch of
shape ``(B, N)``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, InputError, IoError, NumericalError, ParameterError, ParseError

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 10.0
INIT_LOW, INIT_HIGH = 0.25, 0.75
# Lower bound kept on a trainable sharpness so the smooth max stays defined.
DELTA_FLOOR = 1e-3


@dataclass(frozen=True)
class FuzzyEventMatrix:
    """One fuzzy event: an N x N matrix in [0, 1] plus a free-form label."""

    entries: np.ndarray
    label: str = ""

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DimensionError(f"event matrix must be square, got shape {a.shape}")
        if not np.all((a >= 0.0) & (a <= 1.0)):
            raise ParameterError("event matrix entries must lie in [0, 1]")
        object.__setattr__(self, "entries", a)

    @property
    def dimension(self) -> int:
        return self.entries.shape[0]


def fuzzy_state(values: Iterable[float]) -> np.ndarray:
    """Validate and return a state vector in [0, 1]^N."""
    q = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if q.ndim != 1 or q.size < 1:
        raise DimensionError(f"state must be a non-empty vector, got shape {q.shape}")
    if not np.all((q >= 0.0) & (q <= 1.0)):
        raise ParameterError("state components must lie in [0, 1]")
    return q


@dataclass
class FdesNetwork:
    """Trainable stack of event matrices.

    Attributes:
        layers: array of shape (L, N, N), entries in [0, 1].
        delta: shared smooth-max sharpness, > 0.
        labels: one annotation per layer (metadata only).
        train_delta: when True, ``sgd_step`` also updates ``delta``.
    """

    layers: np.ndarray
    delta: float = DEFAULT_DELTA
    labels: tuple[str, ...] = ()
    train_delta: bool = False

    def __post_init__(self):
        layers = np.array(self.layers, dtype=float)
        if layers.ndim == 2:
            layers = layers[None]
        if layers.ndim != 3 or layers.shape[0] < 1 or layers.shape[1] != layers.shape[2] or layers.shape[1] < 1:
            raise DimensionError(f"layers must have shape (L, N, N) with L, N >= 1, got {layers.shape}")
        if not np.all((layers >= 0.0) & (layers <= 1.0)):
            raise ParameterError("event matrix entries must lie in [0, 1]")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ParameterError(f"sharpness must be a positive finite number, got {self.delta}")
        self.layers = layers
        self.delta = float(self.delta)
        labels = tuple(self.labels)
        if not labels:
            labels = ("",) * layers.shape[0]
        if len(labels) != layers.shape[0]:
            raise DimensionError(f"{len(labels)} labels for {layers.shape[0]} layers")
        self.labels = labels

    @property
    def dimension(self) -> int:
        return self.layers.shape[1]

    @property
    def depth(self) -> int:
        return self.layers.shape[0]

    def events(self) -> list[FuzzyEventMatrix]:
        return [FuzzyEventMatrix(a.copy(), lab) for a, lab in zip(self.layers, self.labels)]

    def copy(self) -> "FdesNetwork":
        return replace(self, layers=self.layers.copy())

    @classmethod
    def from_events(cls, events: Sequence[FuzzyEventMatrix], delta: float = DEFAULT_DELTA, **kw) -> "FdesNetwork":
        if not events:
            raise InputError("a network needs at least one event")
        return cls(np.stack([e.entries for e in events]), delta, tuple(e.label for e in events), **kw)


@dataclass
class GradientSet:
    """Partial derivatives of a cost with respect to every network parameter."""

    layers: np.ndarray
    delta: float | None = None

    def max_abs(self) -> float:
        m = float(np.max(np.abs(self.layers)))
        if self.delta is not None:
            m = max(m, abs(self.delta))
        return m

    def flat(self) -> np.ndarray:
        extra = [] if self.delta is None else [self.delta]
        return np.concatenate([self.layers.ravel(), extra])


def init_network(n: int, depth: int, seed: int, delta: float = DEFAULT_DELTA,
                 low: float = INIT_LOW, high: float = INIT_HIGH, **kw) -> FdesNetwork:
    """Random network with entries drawn uniformly from [low, high]."""
    if n < 1 or depth < 1:
        raise ParameterError("dimension and depth must be >= 1")
    rng = np.random.default_rng(seed)
    return FdesNetwork(rng.uniform(low, high, size=(depth, n, n)), delta, **kw)


def identity_network(n: int, depth: int = 1, delta: float = DEFAULT_DELTA, **kw) -> FdesNetwork:
    return FdesNetwork(np.broadcast_to(np.eye(n), (depth, n, n)).copy(), delta, **kw)


def _check_pair(q: np.ndarray, a: np.ndarray) -> None:
    if q.shape[-1] != a.shape[0]:
        raise DimensionError(f"state has {q.shape[-1]} components, event is {a.shape[0]}x{a.shape[1]}")


def _matrix(event) -> np.ndarray:
    if isinstance(event, FuzzyEventMatrix):
        return event.entries
    a = np.asarray(event, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"event must be a matrix, got shape {a.shape}")
    return a


def compose_exact(state, event) -> np.ndarray:
    """Max-product composition ``out_j = max_i state_i * a_ij``.

    Ties resolve to the lowest index, which only matters to :func:`argmax_sources`.
    """
    q = np.asarray(state, dtype=float)
    a = _matrix(event)
    _check_pair(q, a)
    return np.max(q[..., :, None] * a, axis=-2)


def argmax_sources(state, event) -> np.ndarray:
    """Index of the winning source component for each output (lowest index on ties)."""
    q = np.asarray(state, dtype=float)
    a = _matrix(event)
    _check_pair(q, a)
    return np.argmax(q[..., :, None] * a, axis=-2)


def _smooth(q: np.ndarray, a: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Smooth max-product plus the softmax weights over source components.

    The shift is applied to the products themselves, ``xmax + log(sum) / delta``,
    so the result never rounds below the exact max.
    """
    x = q[..., :, None] * a
    xmax = np.max(x, axis=-2, keepdims=True)
    e = np.exp(delta * (x - xmax))
    s = np.sum(e, axis=-2, keepdims=True)
    out = (xmax + np.log(s) / delta)[..., 0, :]
    return out, e / s


def compose_smooth(state, event, sharpness: float) -> np.ndarray:
    """Log-sum-exp relaxation of :func:`compose_exact`.

    Computed with the max-shift so large ``sharpness`` never overflows. The result
    lies between the exact max and the exact max plus ``log(N) / sharpness``.
    """
    if not sharpness > 0:
        raise ParameterError(f"sharpness must be > 0, got {sharpness}")
    q = np.asarray(state, dtype=float)
    a = _matrix(event)
    _check_pair(q, a)
    return _smooth(q, a, float(sharpness))[0]


def forward(net: FdesNetwork, q0) -> list[np.ndarray]:
    """Propagate ``q0`` through every layer and return the states q1..qL."""
    q = np.asarray(q0, dtype=float)
    if q.shape[-1] != net.dimension or q.ndim not in (1, 2):
        raise DimensionError(f"initial state shape {q.shape} does not match network dimension {net.dimension}")
    states = []
    for a in net.layers:
        q = _smooth(q, a, net.delta)[0]
        states.append(q)
    return states


def trace(net: FdesNetwork, q0) -> list[np.ndarray]:
    """Full forward trace ``[q0, q1, ..., qL]`` as consumed by :func:`backward`."""
    return [np.asarray(q0, dtype=float)] + forward(net, q0)


def _sample_weights(batch: int | None, weights) -> np.ndarray | float:
    if batch is None:
        return 1.0
    if weights is None:
        return np.full(batch, 1.0 / batch)
    w = np.asarray(weights, dtype=float)
    if w.shape != (batch,):
        raise DimensionError(f"expected {batch} sample weights, got shape {w.shape}")
    if np.any(w < 0) or not np.sum(w) > 0:
        raise ParameterError("sample weights must be non-negative with a positive sum")
    return w / np.sum(w)


def cost(qL, target, weights=None) -> float:
    """Half squared error ``0.5 * sum_n (qL_n - target_n)^2``.

    For a batch of states the per-sample costs are averaged with ``weights``
    (uniform by default).
    """
    s = np.asarray(qL, dtype=float)
    t = np.asarray(target, dtype=float)
    if s.shape != t.shape:
        raise DimensionError(f"state shape {s.shape} != target shape {t.shape}")
    per = 0.5 * np.sum((s - t) ** 2, axis=-1)
    if s.ndim == 1:
        return float(per)
    return float(np.sum(_sample_weights(s.shape[0], weights) * per))


def network_cost(net: FdesNetwork, q0, target, weights=None) -> float:
    return cost(forward(net, q0)[-1], target, weights)


def backward_from_output(net: FdesNetwork, states: Sequence[np.ndarray], out_grad) -> GradientSet:
    """Backpropagate an arbitrary output error signal ``dCost/dqL``.

    ``states`` is the full trace ``[q0, ..., qL]``. For batched traces
    ``out_grad`` must already carry any per-sample weighting; gradients are
    summed over the batch.
    """
    if len(states) != net.depth + 1:
        raise DimensionError(f"trace has {len(states)} states, network needs {net.depth + 1}")
    shape = np.shape(states[0])
    if shape[-1] != net.dimension or any(np.shape(s) != shape for s in states):
        raise DimensionError("trace states do not match the network dimension")
    phi = np.asarray(out_grad, dtype=float)
    if phi.shape != shape:
        raise DimensionError(f"output gradient shape {phi.shape} != state shape {shape}")

    delta = net.delta
    grads = np.zeros_like(net.layers)
    d_delta = 0.0
    for n in range(net.depth - 1, -1, -1):
        prev = np.asarray(states[n], dtype=float)
        a = net.layers[n]
        out, p = _smooth(prev, a, delta)
        # d out_j / d a_ij = p_ij * prev_i ; d out_j / d prev_i = p_ij * a_ij
        weighted = phi[..., None, :] * p
        g = weighted * prev[..., :, None]
        grads[n] = g.sum(axis=0) if g.ndim == 3 else g
        if net.train_delta:
            x = prev[..., :, None] * a
            d_out = (np.sum(p * x, axis=-2) - out) / delta
            d_delta += float(np.sum(phi * d_out))
        phi = np.sum(weighted * a, axis=-1)
    return GradientSet(grads, d_delta if net.train_delta else None)


def backward(net: FdesNetwork, states: Sequence[np.ndarray], target, weights=None) -> GradientSet:
    """Gradient of :func:`cost` for the trace ``[q0, ..., qL]`` against ``target``.

    The output error signal is ``qL - target``; inner signals follow the chain
    rule through the smooth max.
    """
    qL = np.asarray(states[-1], dtype=float)
    t = np.asarray(target, dtype=float)
    if qL.shape != t.shape:
        raise DimensionError(f"state shape {qL.shape} != target shape {t.shape}")
    err = qL - t
    if qL.ndim == 2:
        err = err * _sample_weights(qL.shape[0], weights)[:, None]
    return backward_from_output(net, states, err)


def gradients(net: FdesNetwork, q0, target, weights=None) -> GradientSet:
    return backward(net, trace(net, q0), target, weights)


def finite_diff_gradients(net: FdesNetwork, q0, target, h: float = 1e-6, weights=None, loss=None) -> GradientSet:
    """Central-difference estimate of every partial derivative of the cost.

    Perturbations never push an entry outside [0, 1]: the step shrinks near a
    bound and becomes a second-order one-sided difference on the bound itself.
    ``loss`` overrides the cost, as a callable taking a network.
    """
    if not h > 0:
        raise ParameterError(f"step must be > 0, got {h}")
    if loss is None:
        def loss(m):
            return network_cost(m, q0, target, weights)

    work = net.copy()
    grads = np.zeros_like(net.layers)
    for idx in np.ndindex(*net.layers.shape):
        a = net.layers[idx]
        room = min(a, 1.0 - a)

        def at(v):
            work.layers[idx] = v
            return loss(work)

        if room > 0:
            step = min(h, room)
            grads[idx] = (at(a + step) - at(a - step)) / (2 * step)
        else:
            sign = 1.0 if a <= 0.0 else -1.0
            f0, f1, f2 = at(a), at(a + sign * h), at(a + 2 * sign * h)
            grads[idx] = sign * (-3 * f0 + 4 * f1 - f2) / (2 * h)
        work.layers[idx] = a

    d_delta = None
    if net.train_delta:
        d = net.delta
        step = min(h, d / 2)
        d_delta = (loss(replace(work, delta=d + step)) - loss(replace(work, delta=d - step))) / (2 * step)
    return GradientSet(grads, d_delta)


def relative_error(analytic: GradientSet, numeric: GradientSet, floor: float = 1e-12) -> float:
    """Max absolute discrepancy scaled by the larger gradient magnitude.

    Entry-wise ratios are meaningless for entries whose softmax weight is
    ~exp(-delta); normalising by the largest gradient entry keeps the measure
    scale-aware without dividing by round-off.
    """
    a, b = analytic.flat(), numeric.flat()
    if a.shape != b.shape:
        raise DimensionError("gradient sets differ in shape")
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


GRADCHECK_DIMS = (2, 4, 8)
GRADCHECK_DEPTHS = (1, 2, 4)
GRADCHECK_DELTAS = (1.0, 5.0, 20.0)


@dataclass(frozen=True)
class GradcheckCase:
    index: int
    n: int
    depth: int
    delta: float
    error: float


def gradcheck_case(index: int, seed: int = 0, h: float = 1e-6, batch: int = 3, corrupt: float = 0.0) -> GradcheckCase:
    """Compare analytic and finite-difference gradients on one random instance.

    Instance ``index`` cycles through every (N, L, delta) combination of the
    grid and draws matrices, start states and targets uniformly from [0, 1]
    with a generator seeded by ``(seed, index)``. ``delta`` is trainable so its
    derivative is checked too. ``corrupt`` scales the analytic gradient by
    ``1 + corrupt`` to exercise the failure path.
    """
    grid = list(itertools.product(GRADCHECK_DIMS, GRADCHECK_DEPTHS, GRADCHECK_DELTAS))
    n, depth, delta = grid[index % len(grid)]
    rng = np.random.default_rng([seed, index])
    net = FdesNetwork(rng.uniform(0.0, 1.0, size=(depth, n, n)), delta, train_delta=True)
    q0 = rng.uniform(0.0, 1.0, size=(batch, n))
    target = rng.uniform(0.0, 1.0, size=(batch, n))
    analytic = gradients(net, q0, target)
    if corrupt:
        analytic = GradientSet(analytic.layers * (1.0 + corrupt),
                               None if analytic.delta is None else analytic.delta * (1.0 + corrupt))
    err = relative_error(analytic, finite_diff_gradients(net, q0, target, h))
    return GradcheckCase(index, n, depth, delta, err)


def gradcheck_sweep(instances: int = 100, seed: int = 0, h: float = 1e-6, corrupt: float = 0.0) -> list[GradcheckCase]:
    if instances < 1:
        raise ParameterError("need at least one instance")
    return [gradcheck_case(k, seed, h, corrupt=corrupt) for k in range(instances)]


def sgd_step(net: FdesNetwork, grads: GradientSet, rate: float) -> FdesNetwork:
    """Projected gradient step: ``a <- clip(a - rate * g, 0, 1)``.

    ``delta`` moves only when the network is flagged trainable; it is kept at or
    above ``DELTA_FLOOR``.
    """
    if not rate >= 0:
        raise ParameterError(f"learning rate must be >= 0, got {rate}")
    g = np.asarray(grads.layers, dtype=float)
    if g.shape != net.layers.shape:
        raise DimensionError(f"gradient shape {g.shape} != layer shape {net.layers.shape}")
    if not np.all(np.isfinite(g)) or (grads.delta is not None and not math.isfinite(grads.delta)):
        raise NumericalError("non-finite gradient")
    layers = np.clip(net.layers - rate * g, 0.0, 1.0)
    delta = net.delta
    if net.train_delta and grads.delta is not None:
        delta = max(delta - rate * grads.delta, DELTA_FLOOR)
    return replace(net, layers=layers, delta=delta)


@dataclass
class TrainConfig:
    """Full-batch training settings.

    ``tol`` stops training once the weighted mean cost drops to or below it;
    the loss history then holds one entry per epoch actually run.
    """

    epochs: int = 1000
    rate: float = 0.5
    seed: int = 0
    tol: float = 0.0
    train_delta: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if not self.rate > 0:
            raise ParameterError("rate must be > 0")


@dataclass
class TrainResult:
    """Trained network, its cost on the training batch, and the per-epoch history."""

    net: FdesNetwork
    history: list[float] = field(default_factory=list)
    final_cost: float = float("nan")


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Turn ``(q0, target, weight)`` triples into batch arrays."""
    samples = list(samples)
    if not samples:
        raise InputError("no training samples")
    q0 = np.array([np.asarray(s[0], dtype=float) for s in samples])
    tgt = np.array([np.asarray(s[1], dtype=float) for s in samples])
    w = np.array([float(s[2]) if len(s) > 2 else 1.0 for s in samples])
    if q0.ndim != 2 or q0.shape != tgt.shape:
        raise DimensionError("samples must share one state dimension")
    return q0, tgt, w


def train(net: FdesNetwork | None, samples, config: TrainConfig | None = None) -> TrainResult:
    """Full-batch projected gradient descent on the weighted mean cost.

    Args:
        net: starting network; ``None`` draws one from ``config.seed`` with
            depth 1 and the sample dimension.
        samples: iterable of ``(q0, target, weight)``.
        config: training settings.

    Returns:
        The trained network, its cost, and the per-epoch cost history. Each
        history entry is the cost of the parameters *before* that epoch's update.
    """
    config = config or TrainConfig()
    q0, tgt, w = stack_samples(samples)
    if net is None:
        net = init_network(q0.shape[1], 1, config.seed)
    if q0.shape[1] != net.dimension:
        raise DimensionError(f"samples have dimension {q0.shape[1]}, network {net.dimension}")
    _sample_weights(len(w), w)
    if config.train_delta and not net.train_delta:
        net = replace(net, train_delta=True)

    history: list[float] = []
    c = float("nan")
    for epoch in range(config.epochs):
        states = trace(net, q0)
        c = cost(states[-1], tgt, w)
        history.append(c)
        if c <= config.tol:
            break
        net = sgd_step(net, backward(net, states, tgt, w), config.rate)
    else:
        c = cost(forward(net, q0)[-1], tgt, w)
    logger.debug("trained %d epochs, final cost %.3g", len(history), c)
    return TrainResult(net, history, c)


# -- text format ----------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def dumps_network(net: FdesNetwork) -> str:
    """Serialize to the ``fdes v1 N L delta`` text format.

    Floats carry 17 significant digits, which round-trips float64 exactly.
    Layer labels ride along as ``# label <k> <text>`` comment lines.
    """
    lines = [f"fdes v1 {net.dimension} {net.depth} {_fmt(net.delta)}"]
    for k, (a, label) in enumerate(zip(net.layers, net.labels)):
        if label:
            lines.append(f"# label {k} {label}")
        lines.extend(" ".join(_fmt(x) for x in row) for row in a)
    return "\n".join(lines) + "\n"


def loads_network(text: str, source: str | None = None) -> FdesNetwork:
    labels: dict[int, str] = {}
    rows: list[tuple[int, list[float]]] = []
    header = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split(None, 2)
            if len(parts) >= 2 and parts[0] == "label":
                labels[int(parts[1])] = parts[2] if len(parts) > 2 else ""
            continue
        if header is None:
            parts = line.split()
            if len(parts) != 5 or parts[:2] != ["fdes", "v1"]:
                raise ParseError("expected header 'fdes v1 N L delta'", lineno, source)
            try:
                header = (int(parts[2]), int(parts[3]), float(parts[4]))
            except ValueError:
                raise ParseError("bad header values", lineno, source) from None
            continue
        if line.startswith(("disc ", "scaler ", "view ")):
            break
        try:
            rows.append((lineno, [float(x) for x in line.split()]))
        except ValueError:
            raise ParseError("non-numeric matrix entry", lineno, source) from None
    if header is None:
        raise ParseError("missing header", None, source)
    n, depth, delta = header
    if len(rows) != n * depth:
        raise ParseError(f"expected {n * depth} matrix rows, found {len(rows)}", None, source)
    for lineno, r in rows:
        if len(r) != n:
            raise ParseError(f"expected {n} entries, found {len(r)}", lineno, source)
    layers = np.array([r for _, r in rows]).reshape(depth, n, n)
    return FdesNetwork(layers, delta, tuple(labels.get(k, "") for k in range(depth)))


def save_network(net: FdesNetwork, path) -> None:
    try:
        Path(path).write_text(dumps_network(net))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_network(path) -> FdesNetwork:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return loads_network(text, str(path))
