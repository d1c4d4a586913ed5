"""Layer-by-layer error propagation for activation substitution in normalized networks.

Every node computes act(a . h + b) with ||a||_1 + |b| <= 1, so values stay in [-1, 1].
Replacing activations by eps_j-accurate surrogates changes the output by at most
E_M = sum_m L^m eps_(M-m), where L bounds the Lipschitz constants of the originals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BoundViolation, ResourceError
from .numerics import Grid, PrecisionContext
from .rational_core import RationalFn

NORM_SLACK = 1e-12
RANGE_CHECK_POINTS = 201
MAX_INPUT_DIM = 3
MAX_GRID_POINTS = 2_000_000


@dataclass(frozen=True, eq=False)
class Activation:
    """Scalar activation with a kind tag: "rational", "gelu" or "surrogate"."""

    kind: str
    fn: Callable
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("rational", "gelu", "surrogate"):
            raise ValueError(f"unknown activation kind {self.kind!r}")

    def __call__(self, x):
        return self.fn(x)

    @classmethod
    def rational(cls, r: RationalFn, ctx: PrecisionContext, label: str = "") -> "Activation":
        return cls("rational", lambda x: r(x, ctx), label)

    @classmethod
    def gelu(cls, ctx: PrecisionContext) -> "Activation":
        from .gelu_gadgets import gelu

        return cls("gelu", lambda x: gelu(x, ctx), "gelu")

    @classmethod
    def surrogate(cls, fn: Callable, label: str = "") -> "Activation":
        return cls("surrogate", fn, label)


def check_activation_range(act: Activation, points: int = RANGE_CHECK_POINTS) -> float:
    """Max |act(x)| on a grid of [-1, 1]; raises if it exceeds 1."""
    worst = 0.0
    for i in range(points):
        x = -1.0 + 2.0 * i / (points - 1)
        worst = max(worst, abs(float(act(x))))
    if worst > 1 + NORM_SLACK:
        raise ValueError(f"activation {act.label or act.kind} leaves [-1,1]: max |value| = {worst:.6g}")
    return worst


@dataclass(frozen=True)
class LayerSpec:
    """Rows (a, b) with one activation per node."""

    weights: tuple
    activations: tuple

    def __post_init__(self):
        rows = tuple((tuple(float(v) for v in a), float(b)) for a, b in self.weights)
        object.__setattr__(self, "weights", rows)
        acts = self.activations
        if isinstance(acts, Activation):
            acts = (acts,) * len(rows)
        acts = tuple(acts)
        object.__setattr__(self, "activations", acts)
        if not rows:
            raise ValueError("layer needs at least one node")
        if len(acts) != len(rows):
            raise ValueError("one activation per node required")
        fan_in = len(rows[0][0])
        for i, (a, b) in enumerate(rows):
            if len(a) != fan_in:
                raise ValueError("ragged weight matrix")
            norm = sum(abs(v) for v in a) + abs(b)
            if norm > 1 + NORM_SLACK:
                raise ValueError(f"node {i}: ||a||_1 + |b| = {norm:.6g} > 1")
        for act in {id(a): a for a in acts}.values():
            check_activation_range(act)

    @property
    def width(self) -> int:
        return len(self.weights)

    @property
    def fan_in(self) -> int:
        return len(self.weights[0][0])


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("network needs at least one layer")
        fan = self.input_dim
        for j, layer in enumerate(self.layers):
            if layer.fan_in != fan:
                raise ValueError(f"layer {j} expects {layer.fan_in} inputs, got {fan}")
            fan = layer.width
        if fan != 1:
            raise ValueError("last layer must have a single node")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def max_width(self) -> int:
        return max(layer.width for layer in self.layers)

    def activations(self) -> list[Activation]:
        seen = {}
        for layer in self.layers:
            for act in layer.activations:
                seen.setdefault(id(act), act)
        return list(seen.values())

    def evaluate(self, x: Sequence, replace: dict | None = None, clamp: bool = False, trace: list | None = None):
        """Forward pass; ``replace`` maps id(activation) to a substitute callable."""
        h = list(x)
        for layer in self.layers:
            out = []
            for (a, b), act in zip(layer.weights, layer.activations):
                z = sum(ai * hi for ai, hi in zip(a, h)) + b
                fn = replace.get(id(act), act) if replace else act
                y = fn(z)
                if clamp:
                    y = min(1, max(-1, y))
                if trace is not None:
                    trace.append(max(abs(float(z)), abs(float(y))))
                out.append(y)
            h = out
        return h[0]


# ---------------------------------------------------------------- random networks


def normalized_row(rng: np.random.Generator, fan_in: int, total: float = 0.95) -> tuple[tuple, float]:
    """Uniform weights rescaled so ||a||_1 + |b| = total."""
    v = rng.uniform(-1.0, 1.0, size=fan_in + 1)
    v *= total / np.sum(np.abs(v))
    return tuple(float(t) for t in v[:-1]), float(v[-1])


def random_safe_rational(rng: np.random.Generator, m: int = 3, n: int = 2, total: float = 0.95) -> RationalFn:
    """P / (1 + |Q|) with ||P coefficients||_1 = total, so |r| <= total on [-1, 1]."""
    a = rng.uniform(-1.0, 1.0, size=m + 1)
    a *= total / np.sum(np.abs(a))
    b = rng.uniform(-1.0, 1.0, size=n + 1)
    return RationalFn(tuple(float(t) for t in a), tuple(float(t) for t in b), safe=True)


def random_network(
    widths: Sequence[int],
    rng: np.random.Generator,
    activation_factory: Callable[[np.random.Generator, int, int], Activation],
    input_dim: int = 1,
) -> NetworkSpec:
    """Hidden widths followed by a single-node output layer."""
    layers, fan = [], input_dim
    for j, w in enumerate(list(widths) + [1]):
        rows = [normalized_row(rng, fan) for _ in range(w)]
        acts = [activation_factory(rng, j, i) for i in range(w)]
        layers.append(LayerSpec(tuple(rows), tuple(acts)))
        fan = w
    return NetworkSpec(tuple(layers), input_dim)


def rational_factory(ctx: PrecisionContext, m: int = 3, n: int = 2):
    def make(rng, j, i):
        return Activation.rational(random_safe_rational(rng, m, n), ctx, f"r[{j},{i}]")

    return make


def gelu_factory(ctx: PrecisionContext):
    act = Activation.gelu(ctx)
    return lambda rng, j, i: act


# ---------------------------------------------------------------- budgets


def geometric_budget(L, M: int, ctx: PrecisionContext | None = None):
    """S_M(L) = sum_{j<M} L^j, summed with guard bits."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if L < 0:
        raise ValueError("L must be >= 0")
    ctx = ctx or PrecisionContext(53)
    g = ctx.extra()
    Lg, s, p = g.mpf(L), g.mpf(0), g.mpf(1)
    for _ in range(M):
        s += p
        p *= Lg
    return ctx.mpf(s)


def geometric_closed_form(L, M: int, ctx: PrecisionContext | None = None):
    ctx = ctx or PrecisionContext(53)
    g = ctx.extra()
    Lg = g.mpf(L)
    if Lg == 1:
        return ctx.mpf(M)
    return ctx.mpf((Lg ** M - 1) / (Lg - 1))


def propagate_error_bound(L, per_layer_tol: Sequence, ctx: PrecisionContext | None = None) -> list:
    """E_0 = 0, E_{j+1} = L E_j + eps_{j+1}; returns [E_0, ..., E_M]."""
    ctx = ctx or PrecisionContext(53)
    g = ctx.extra()
    Lg = g.mpf(L)
    E = g.mpf(0)
    out = [ctx.mpf(0)]
    for t in per_layer_tol:
        if t < 0:
            raise ValueError("per-layer tolerances must be nonnegative")
        E = Lg * E + g.mpf(t)
        out.append(ctx.mpf(E))
    return out


@dataclass(frozen=True)
class LiftBudget:
    L: float
    M: int
    s_m: object
    per_layer_tol: tuple

    @classmethod
    def uniform(cls, epsilon, L, M: int, ctx: PrecisionContext | None = None) -> "LiftBudget":
        ctx = ctx or PrecisionContext(53)
        s = geometric_budget(L, M, ctx)
        tol = ctx.mpf(epsilon) / s
        return cls(L, M, s, (tol,) * M)

    def final_bound(self, ctx: PrecisionContext | None = None):
        return propagate_error_bound(self.L, self.per_layer_tol, ctx)[-1]


# ---------------------------------------------------------------- empirical check


def lipschitz_estimate(fn: Callable, points: int = 4001, headroom: float = 0.01) -> float:
    """Max finite-difference slope on [-1, 1], one local refinement, plus headroom."""
    xs = np.linspace(-1.0, 1.0, points)
    ys = np.array([float(fn(float(x))) for x in xs])
    slopes = np.abs(np.diff(ys)) / np.diff(xs)
    i = int(np.argmax(slopes))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 2, points - 1)]
    fine = np.linspace(lo, hi, 401)
    fy = np.array([float(fn(float(x))) for x in fine])
    best = max(float(slopes[i]), float(np.max(np.abs(np.diff(fy)) / np.diff(fine))))
    return best * (1 + headroom)


def _surrogate_error(fn: Callable, sub: Callable, points: int = 2001) -> float:
    worst = 0.0
    for i in range(points):
        x = -1.0 + 2.0 * i / (points - 1)
        y = min(1.0, max(-1.0, float(sub(x))))
        worst = max(worst, abs(y - float(fn(x))))
    return worst


@dataclass(frozen=True)
class SubstitutionResult:
    measured: float
    bound: float
    L: float
    s_m: float
    tol: float
    max_abs_value: float
    surrogate_error: float
    points: int


def simulate_substitution(
    net: NetworkSpec,
    surrogate_for: str,
    surrogate: Callable[[Activation], Callable],
    measured_tol: float,
    grid: Grid,
    ctx: PrecisionContext,
    L: float | None = None,
    check_points: int = 2001,
) -> SubstitutionResult:
    """Evaluate the original and substituted networks on a product grid of [-1,1]^d.

    ``surrogate`` maps an original activation to its replacement callable.  The
    theoretical bound S_M(L) * measured_tol is asserted against the measurement.
    """
    d = net.input_dim
    if d > MAX_INPUT_DIM:
        raise ResourceError(f"input dimension {d} exceeds the desk-scale cap {MAX_INPUT_DIM}")
    if grid.n ** d > MAX_GRID_POINTS:
        raise ResourceError(f"grid of {grid.n}^{d} points is too large")
    replace = {}
    checked: dict = {}
    for act in net.activations():
        if act.kind == surrogate_for:
            sub = surrogate(act)
            replace[id(act)] = sub
            key = (id(act), id(sub))
            if check_points and key not in checked:
                checked[key] = _surrogate_error(act, sub, check_points)
    sub_err = max(checked.values(), default=0.0)
    if sub_err > measured_tol:
        raise ValueError(f"surrogate sup-error {sub_err:.3g} exceeds measured_tol {measured_tol:.3g}")
    if L is None:
        L = max(lipschitz_estimate(a) for a in net.activations())
    axis = [float(x) for x in grid.points(PrecisionContext(53))]
    measured, peak = 0.0, 0.0
    count = 0
    for x in itertools.product(axis, repeat=d):
        trace: list = []
        y0 = net.evaluate(x, trace=trace)
        y1 = net.evaluate(x, replace=replace, clamp=True, trace=trace)
        peak = max(peak, max(trace))
        measured = max(measured, abs(float(y1) - float(y0)))
        count += 1
    if peak > 1 + NORM_SLACK:
        raise BoundViolation(f"range invariant broken: |value| reached {peak:.6g}")
    s = float(geometric_budget(L, net.depth))
    bound = s * measured_tol
    if measured > bound:
        raise BoundViolation(f"measured deviation {measured:.6g} exceeds S_M(L)*tol = {bound:.6g}")
    return SubstitutionResult(measured, bound, float(L), s, float(measured_tol), peak, sub_err, count)


def lift_rows(results: Sequence[tuple[int, NetworkSpec, SubstitutionResult]]) -> list[tuple]:
    """CSV rows (seed, M, k, L_estimate, tol, measured, bound)."""
    return [
        (seed, net.depth, net.max_width, repr(r.L), repr(r.tol), repr(r.measured), repr(r.bound))
        for seed, net, r in results
    ]
