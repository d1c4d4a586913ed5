"""GELU square/product gadgets, inexact Clenshaw, and the rational-to-GELU pipeline.

The square gadget combines the even part S_s(u) = (G(su) + G(-su)) / (alpha s^2) at
geometric scales s gamma^-j with Richardson weights a_j so that the O(s^2), ..., O(s^2J)
terms cancel.  Products come from polarization, and Chebyshev sums from a Clenshaw
recurrence whose only multiplications are product gadgets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

from .errors import DomainError, RangeInvariantError
from .numerics import ErrorReport, Grid, PrecisionContext, refined_max, sup_error
from .rational_blocks import BETA_STR
from .rational_core import (
    ChebyshevExpansion,
    RationalFn,
    cheb_expand,
    eval_rational,
    truncation_degree,
)

LAMBDA = 1 + math.sqrt(2)
C_MULT = 1.5


class SmallArgumentViolation(AssertionError):
    """A GELU unit inside a gadget was called with |P(z)| > 1/2."""


@dataclass(frozen=True)
class GeluConstants:
    alpha: object
    beta: object
    s0: object

    def cubic(self, x):
        return self.alpha * (x + self.beta * x * x * x)


@lru_cache(maxsize=None)
def gelu_constants(ctx: PrecisionContext) -> GeluConstants:
    alpha = ctx.sqrt(2 / ctx.pi)
    beta = ctx.mpf(BETA_STR)
    return GeluConstants(alpha, beta, 1 / (2 * alpha * (1 + beta)))


def gelu(x, ctx: PrecisionContext):
    """x/2 (1 + tanh(alpha (x + beta x^3)))."""
    k = gelu_constants(ctx)
    x = ctx.mpf(x)
    return x / 2 * (1 + ctx.tanh(k.cubic(x)))


def gelu_prime(x, ctx: PrecisionContext):
    k = gelu_constants(ctx)
    t = ctx.tanh(k.cubic(x))
    dp = k.alpha * (1 + 3 * k.beta * x * x)
    return (1 + t) / 2 + x / 2 * (1 - t * t) * dp


def gelu_second(x, ctx: PrecisionContext):
    k = gelu_constants(ctx)
    t = ctx.tanh(k.cubic(x))
    sech2 = 1 - t * t
    dp = k.alpha * (1 + 3 * k.beta * x * x)
    ddp = 6 * k.alpha * k.beta * x
    return sech2 * dp + x / 2 * (sech2 * ddp - 2 * t * sech2 * dp * dp)


@dataclass
class GeluProbe:
    """Counts GELU unit calls and tracks max |P(z)| over them."""

    calls: int = 0
    max_cubic: float = 0.0

    def record(self, p):
        self.calls += 1
        a = abs(float(p))
        if a > self.max_cubic:
            self.max_cubic = a


def _gelu_unit(z, ctx: PrecisionContext, consts: GeluConstants, probe: GeluProbe | None):
    p = consts.cubic(z)
    if abs(p) > 0.5:
        raise SmallArgumentViolation(f"|P(z)| = {float(abs(p)):.6g} > 1/2 at z={z}")
    if probe is not None:
        probe.record(p)
    return z / 2 * (1 + ctx.tanh(p))


def s_family(s, u, ctx: PrecisionContext, probe: GeluProbe | None = None):
    """(G(su) + G(-su)) / (alpha s^2), two GELU units."""
    k = gelu_constants(ctx)
    s, u = ctx.mpf(s), ctx.mpf(u)
    if not 0 < s <= k.s0:
        raise DomainError(f"scale s={s} outside (0, s0]")
    if abs(u) > 1:
        raise DomainError(f"|u|={abs(u)} > 1")
    return _s_eval(s, u, ctx, k, probe)


def _s_eval(s, u, ctx, k, probe):
    z = s * u
    return (_gelu_unit(z, ctx, k, probe) + _gelu_unit(-z, ctx, k, probe)) / (k.alpha * s * s)


def richardson_coeffs(J: int, gamma, ctx: PrecisionContext) -> list:
    """a_j = prod_{k != j} 1 / (1 - gamma^(-2(j-k))), j = 0..J."""
    if J < 0:
        raise DomainError("J must be >= 0")
    g = ctx.mpf(gamma)
    if not g > 1:
        raise DomainError("gamma must exceed 1")
    g2 = g * g
    out = []
    for j in range(J + 1):
        a = ctx.mpf(1)
        for k in range(J + 1):
            if k != j:
                a /= 1 - g2 ** (k - j)
        out.append(a)
    return out


def moment_residuals(coeffs, gamma, ctx: PrecisionContext) -> list:
    """[sum a_j - 1, sum a_j gamma^(-2 l j) for l = 1..J]."""
    g2 = ctx.mpf(gamma) ** 2
    J = len(coeffs) - 1
    res = [sum(coeffs) - 1]
    for l in range(1, J + 1):
        res.append(sum(a * g2 ** (-l * j) for j, a in enumerate(coeffs)))
    return res


@dataclass(frozen=True)
class RichardsonPlan:
    gamma: object
    J: int
    s: object
    coeffs: tuple

    def scales(self) -> list:
        return [self.s / self.gamma ** j for j in range(self.J + 1)]


def richardson_plan(J: int, gamma, ctx: PrecisionContext, s_star=None) -> RichardsonPlan:
    """Plan with s = s*/gamma (s* = s0 by default); checks the moment conditions."""
    k = gelu_constants(ctx)
    g = ctx.mpf(gamma)
    s_star = k.s0 if s_star is None else ctx.mpf(s_star)
    coeffs = richardson_coeffs(J, g, ctx)
    tol = ctx.ldexp(ctx.mpf(1), -ctx.bits + 16) * max(1, sum(abs(a) for a in coeffs))
    for r in moment_residuals(coeffs, g, ctx):
        if abs(r) > tol:
            raise ArithmeticError(f"Richardson moment residual {r} above {tol}")
    return RichardsonPlan(g, J, s_star / g, tuple(coeffs))


def extrapolated_square(plan: RichardsonPlan, v, ctx: PrecisionContext, probe: GeluProbe | None = None):
    """T_J(v; s) = sum_j a_j S_{s gamma^-j}(v) for |v| <= 1."""
    k = gelu_constants(ctx)
    total = ctx.mpf(0)
    s = plan.s
    for a in plan.coeffs:
        total += a * _s_eval(s, v, ctx, k, probe)
        s = s / plan.gamma
    return total


@lru_cache(maxsize=None)
def _plan_cached(J: int, gamma: float, ctx: PrecisionContext) -> RichardsonPlan:
    return richardson_plan(J, gamma, ctx)


def square_error(J: int, gamma, ctx: PrecisionContext, points: int = 33) -> object:
    """sup_{|v|<=1} |T_J(v) - v^2| (grid on [0,1] by evenness, refined)."""
    plan = _plan_cached(J, float(gamma), ctx)
    pts = Grid(0.0, 1.0, points, "chebyshev").points(ctx)
    best, _ = refined_max(lambda v: abs(extrapolated_square(plan, v, ctx) - v * v), pts, ctx, candidates=2)
    return best


@lru_cache(maxsize=None)
def square_error_table(gamma: float, ctx: PrecisionContext, j_max: int = 16) -> tuple:
    return tuple(square_error(J, gamma, ctx) for J in range(j_max + 1))


def calibrate_J(delta, gamma, ctx: PrecisionContext, safety: float = 0.5, j_max: int = 40) -> int:
    """Smallest J whose measured T_J sup error on [-1, 1] is <= safety * delta."""
    target = ctx.mpf(delta) * ctx.mpf(safety)
    for J in range(j_max + 1):
        if square_error(J, gamma, ctx) <= target:
            return J
    raise RuntimeError(f"no J <= {j_max} reaches delta={delta} at {ctx.bits} bits")


@dataclass(frozen=True)
class GadgetConfig:
    """Range B (B' = B+1 for products), tolerance delta, Richardson order J and ratio gamma."""

    B: float
    delta: float
    J: int
    gamma: float = 2.0
    c4: float | None = None
    m_rho: float | None = None

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("range B must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.J < 0:
            raise ValueError("J must be >= 0")
        if self.c4 is not None and self.m_rho is not None and self.B < 2 * self.c4 * self.m_rho + 1:
            raise ValueError(f"B={self.B} below 2*C4*M + 1 = {2 * self.c4 * self.m_rho + 1}")

    @property
    def B_prime(self):
        return self.B + 1

    @staticmethod
    def c4_of(rho: float) -> float:
        return 2 / (1 - 1 / rho) ** 2

    @classmethod
    def for_clenshaw(cls, rho: float, m_rho: float, delta: float, J: int, gamma: float = 2.0) -> "GadgetConfig":
        c4 = cls.c4_of(rho)
        B = math.ceil(2 * c4 * m_rho) + 1
        return cls(B, delta, J, gamma, c4, m_rho)

    def plan(self, ctx: PrecisionContext) -> RichardsonPlan:
        return _plan_cached(self.J, float(self.gamma), ctx)


def _square(range_, plan, u, ctx, probe):
    r = ctx.mpf(range_)
    return r * r * extrapolated_square(plan, u / r, ctx, probe)


def square_block(cfg: GadgetConfig, plan: RichardsonPlan, u, ctx: PrecisionContext,
                 probe: GeluProbe | None = None):
    """B^2 T_J(u / B) approximating u^2 on [-B, B]."""
    u = ctx.mpf(u)
    if abs(u) > cfg.B:
        raise DomainError(f"|u|={abs(u)} exceeds range B={cfg.B}")
    return _square(cfg.B, plan, u, ctx, probe)


def mult_block(cfg: GadgetConfig, a, b, ctx: PrecisionContext, probe: GeluProbe | None = None):
    """(S_{B'}(a+b) - S_{B'}(a) - S_{B'}(b)) / 2 for |a| <= 1, |b| <= B."""
    a, b = ctx.mpf(a), ctx.mpf(b)
    if abs(a) > 1 or abs(b) > cfg.B:
        raise DomainError(f"product arguments out of range: |a|={abs(a)}, |b|={abs(b)}, B={cfg.B}")
    plan = cfg.plan(ctx)
    bp = cfg.B_prime
    return (_square(bp, plan, a + b, ctx, probe) - _square(bp, plan, a, ctx, probe)
            - _square(bp, plan, b, ctx, probe)) / 2


# ---------------------------------------------------------------- Clenshaw

@dataclass(frozen=True)
class ClenshawTrace:
    """states[i] = b~_{i+1} (i = 0..d+1); local_errors in evaluation order k = d..1, then final."""

    states: tuple
    local_errors: tuple
    in_range: bool
    lambda_: float = LAMBDA


def clenshaw(coeffs, x, mult: Callable | None, cfg: GadgetConfig | None, ctx: PrecisionContext,
             check_range: bool = True):
    """Backward Clenshaw for sum c_k T_k(x) with products x*b routed through ``mult``.

    b~_{d+1} = b~_{d+2} = 0, b~_k = 2 mult(x, b~_{k+1}) - b~_{k+2} + c_k for k = d..1,
    result c_0 + mult(x, b~_1) - b~_2.  ``mult=None`` is the exact product.
    """
    c = ctx.vector(coeffs.coeffs if isinstance(coeffs, ChebyshevExpansion) else coeffs)
    x = ctx.mpf(x)
    d = len(c) - 1
    bound = cfg.B if cfg is not None else None
    gadget = mult is not None

    def prod(b):
        exact = x * b
        if not gadget:
            return exact, ctx.mpf(0)
        v = mult(x, b)
        return v, v - exact

    b1, b2 = ctx.mpf(0), ctx.mpf(0)  # b~_{k+1}, b~_{k+2}
    states = [b1, b2]
    local = []
    in_range = True
    for k in range(d, 0, -1):
        p, err = prod(b1)
        bk = 2 * p - b2 + c[k]
        local.append(err)
        if bound is not None and abs(bk) > bound:
            in_range = False
            if gadget and check_range:
                raise RangeInvariantError(k, bk, bound)
        b1, b2 = bk, b1
        states.insert(0, bk)
    p, err = prod(b1)
    local.append(err)
    value = c[0] + p - b2
    return value, ClenshawTrace(tuple(states), tuple(local), in_range)


def clenshaw_majorant(d: int) -> tuple[float, float, float]:
    """(mu_1, mu_2, max_k mu_k) for m_k = 2 m_{k+1} + m_{k+2} + 2, m_{d+1} = m_{d+2} = 0.

    With local product errors <= D, the state errors obey |e_k| <= D mu_k and the output
    error is <= D (1 + mu_1 + mu_2).
    """
    m1, m2 = 0.0, 0.0
    top = 0.0
    for _ in range(d, 0, -1):
        mk = 2 * m1 + m2 + 2
        m1, m2 = mk, m1
        top = max(top, mk)
    return m1, m2, top


@dataclass(frozen=True)
class PipelineReport(ErrorReport):
    epsilon: float = 0.0
    d: int = 0
    J: int = 0
    delta: float = 0.0
    B: int = 0
    C_R: float = 0.0
    c_range: float = 0.0
    max_state: float = 0.0
    max_cubic: float = 0.0
    range_ok: bool = True


def pipeline_size(d: int, J: int) -> int:
    """(d+1) products, 3 squares each, 2(J+1) GELU units per square."""
    return (d + 1) * 3 * 2 * (J + 1)


def approx_rational_by_gelu(
    r: RationalFn,
    rho: float,
    m_rho: float | None,
    epsilon: float,
    ctx: PrecisionContext,
    grid: Grid | None = None,
    gamma: float = 2.0,
):
    """GELU-network approximant of r on [-1, 1] to sup error epsilon.

    Returns (value_fn, PipelineReport).  ``m_rho=None`` uses the coefficient-based constant.
    """
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    grid = grid or Grid(-1.0, 1.0, 2001)
    probe_exp = cheb_expand(r, 0, ctx, rho=rho, m_rho=m_rho)
    m_rho = probe_exp.m_rho
    d = truncation_degree(epsilon, rho, m_rho)
    expansion = cheb_expand(r, d, ctx, rho=rho, m_rho=m_rho)

    c4 = GadgetConfig.c4_of(rho)
    B = math.ceil(2 * c4 * m_rho) + 1
    Bp = B + 1
    mu1, mu2, mu_top = clenshaw_majorant(d)
    growth = C_MULT * (1 + mu1 + mu2)
    delta_acc = epsilon / (4 * growth * Bp ** 2)
    delta_rng = (B / 2) / (C_MULT * Bp ** 2 * mu_top) if mu_top > 0 else math.inf
    delta = min(delta_acc, delta_rng)
    J = calibrate_J(delta, gamma, ctx)
    cfg = GadgetConfig(B, delta, J, gamma, c4, m_rho)
    probe = GeluProbe()
    norm = 1 + ctx.mpf(epsilon) / 2

    def mult(a, b):
        return mult_block(cfg, a, b, ctx, probe)

    state_max = [0.0]

    def value_fn(x):
        y, tr = clenshaw(expansion, x, mult, cfg, ctx)
        state_max[0] = max(state_max[0], max(abs(float(s)) for s in tr.states))
        return y / norm

    pts = grid.points(ctx)
    target = [eval_rational(r, x, ctx) for x in pts]
    if max(abs(float(t)) for t in target) > 1 + 1e-12:
        raise DomainError("target rational leaves [-1, 1] on the grid")
    lookup = {id(x): t for x, t in zip(pts, target)}
    size = pipeline_size(d, J)
    rep = sup_error(value_fn, lambda x: lookup[id(x)], grid, ctx, size=size, points=pts)
    report = PipelineReport(
        sup_error=rep.sup_error,
        argmax=rep.argmax,
        size=size,
        epsilon=epsilon,
        d=d,
        J=J,
        delta=delta,
        B=B,
        C_R=growth / LAMBDA ** d,
        c_range=delta_rng * Bp ** 2 * LAMBDA ** d,
        max_state=state_max[0],
        max_cubic=probe.max_cubic,
        range_ok=state_max[0] <= B,
    )
    return value_fn, report


def pipeline_rows(reports, ctx: PrecisionContext) -> list[tuple]:
    """CSV rows (epsilon, d, J, delta_decimal, B, size, sup_error_decimal)."""
    return [
        (repr(float(p.epsilon)), p.d, p.J, ctx.format(ctx.mpf(p.delta)), p.B, p.size, ctx.format(p.sup_error))
        for p in reports
    ]
