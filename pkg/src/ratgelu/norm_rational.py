"""Safe rational activations P(z) / (1 + |Q(z)|) placed after a normalization layer.

Affine maps fold into the coefficients, and the rescaling gamma -> e^eta gamma with
a_j -> e^(-j eta) a_j, b_k -> e^(-k eta) b_k leaves the composite output unchanged.
Evaluations run with 32 guard bits and round once, so two algebraically equal paths
agree to a few ulps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BoundViolation, DegenerateAffineError
from .numerics import Grid, PrecisionContext

GUARD = 32


@dataclass(frozen=True)
class SafeRational:
    a: tuple
    b: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(self.a))
        object.__setattr__(self, "b", tuple(self.b))
        if not self.a:
            raise ValueError("numerator needs at least one coefficient")

    @property
    def degrees(self) -> tuple[int, int]:
        return len(self.a) - 1, len(self.b) - 1


@dataclass(frozen=True)
class NormAffine:
    """z = gamma (u - mu) / sigma + beta_shift."""

    gamma: float = 1.0
    beta_shift: float = 0.0
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def apply(self, u, ctx: PrecisionContext):
        return ctx.mpf(self.gamma) * (u - ctx.mpf(self.mu)) / ctx.mpf(self.sigma) + ctx.mpf(self.beta_shift)


def _poly(coeffs, z):
    acc = 0
    for c in reversed(coeffs):
        acc = acc * z + c
    return acc


def _dpoly(coeffs, z):
    acc = 0
    for j in range(len(coeffs) - 1, 0, -1):
        acc = acc * z + j * coeffs[j]
    return acc


def _sign(v) -> int:
    return (v > 0) - (v < 0)


def _parts(theta: SafeRational, z, g: PrecisionContext):
    a, b = g.vector(theta.a), g.vector(theta.b)
    z = g.mpf(z)
    return a, b, z, _poly(a, z), _poly(b, z) if b else g.mpf(0)


def safe_eval(theta: SafeRational, z, ctx: PrecisionContext):
    """P(z) / (1 + |Q(z)|)."""
    g = ctx.extra(GUARD)
    _, _, _, p, q = _parts(theta, z, g)
    return ctx.mpf(p / (1 + abs(q)))


def _binomial_shift(coeffs: Sequence, s, t, g: PrecisionContext) -> list:
    """Coefficients of c(s x + t) in powers of x."""
    n = len(coeffs)
    out = [g.mpf(0)] * n
    spow = g.mpf(1)
    for i in range(n):
        acc = g.mpf(0)
        tpow = g.mpf(1)
        for j in range(i, n):
            acc += g.mpf(coeffs[j]) * math.comb(j, i) * tpow
            tpow *= t
        out[i] = acc * spow
        spow *= s
    return out


def absorb_affine(theta: SafeRational, s, t, ctx: PrecisionContext) -> SafeRational:
    """theta' with safe_eval(theta', x) = safe_eval(theta, s x + t)."""
    if s == 0:
        raise DegenerateAffineError("affine scale s must be nonzero")
    g = ctx.extra(GUARD)
    s, t = g.mpf(s), g.mpf(t)
    return SafeRational(tuple(_binomial_shift(theta.a, s, t, g)), tuple(_binomial_shift(theta.b, s, t, g)))


def absorb_norm(theta: SafeRational, norm: NormAffine, ctx: PrecisionContext) -> SafeRational:
    """Fold the normalization affine map into the activation coefficients."""
    g = ctx.extra(GUARD)
    s = g.mpf(norm.gamma) / g.mpf(norm.sigma)
    return absorb_affine(theta, s, g.mpf(norm.beta_shift) - s * g.mpf(norm.mu), ctx)


def scale_gauge(theta: SafeRational, gamma, eta, ctx: PrecisionContext) -> tuple:
    """(e^eta gamma, theta with a_j e^(-j eta) and b_k e^(-k eta))."""
    g = ctx.extra(GUARD)
    w = g.exp(-g.mpf(eta))
    a = [g.mpf(c) * w ** j for j, c in enumerate(theta.a)]
    b = [g.mpf(c) * w ** k for k, c in enumerate(theta.b)]
    return g.mpf(gamma) / w, SafeRational(tuple(a), tuple(b))


def gauge_output(theta: SafeRational, gamma, u, mu, sigma, ctx: PrecisionContext):
    """r_theta(gamma (u - mu) / sigma)."""
    g = ctx.extra(GUARD)
    z = g.mpf(gamma) * (g.mpf(u) - g.mpf(mu)) / g.mpf(sigma)
    return safe_eval(theta, z, ctx)


# ---------------------------------------------------------------- gradients


@dataclass(frozen=True)
class CoeffGradient:
    d_a: tuple
    d_b: tuple
    at_z: object
    sign_qtilde: int
    p_value: object = None

    def check_bounds(self, ctx: PrecisionContext) -> None:
        z = abs(self.at_z)
        slack = 1 + 4 * ctx.eps
        for j, d in enumerate(self.d_a):
            if abs(d) > z ** j * slack:
                raise BoundViolation(f"|d r/d a_{j}| = {float(abs(d)):.6g} exceeds |z|^{j}")
        for k, d in enumerate(self.d_b):
            if abs(d) > abs(self.p_value) * z ** k * slack:
                raise BoundViolation(f"|d r/d b_{k}| = {float(abs(d)):.6g} exceeds |P(z)| |z|^{k}")


def coeff_gradients(theta: SafeRational, z, ctx: PrecisionContext) -> CoeffGradient:
    """d r / d a_j = z^j / Q and d r / d b_k = -P sgn(Q~) z^k / Q^2 with Q = 1 + |Q~|."""
    g = ctx.extra(GUARD)
    a, b, zz, p, q = _parts(theta, z, g)
    sgn = _sign(q)
    Q = 1 + abs(q)
    d_a = tuple(ctx.mpf(zz ** j / Q) for j in range(len(a)))
    d_b = tuple(ctx.mpf(-p * sgn * zz ** k / (Q * Q)) for k in range(len(b)))
    grad = CoeffGradient(d_a, d_b, ctx.mpf(z), sgn, ctx.mpf(p))
    grad.check_bounds(ctx)
    return grad


def fd_coeff_gradients(theta: SafeRational, z, ctx: PrecisionContext) -> tuple[list, list]:
    """Central differences in each coefficient with step 2^(-bits/3)."""
    h = ctx.ldexp(ctx.mpf(1), -(ctx.bits // 3))
    a, b = list(ctx.vector(theta.a)), list(ctx.vector(theta.b))

    def bumped(which, idx, delta):
        aa, bb = list(a), list(b)
        (aa if which == "a" else bb)[idx] += delta
        return safe_eval(SafeRational(aa, bb), z, ctx)

    da = [(bumped("a", j, h) - bumped("a", j, -h)) / (2 * h) for j in range(len(a))]
    db = [(bumped("b", k, h) - bumped("b", k, -h)) / (2 * h) for k in range(len(b))]
    return da, db


def near_sign_flip(theta: SafeRational, z, ctx: PrecisionContext) -> bool:
    """True within a 2^(-bits/4) neighbourhood of a zero of Q~."""
    if not theta.b:
        return False
    g = ctx.extra(GUARD)
    b = g.vector(theta.b)
    zz = g.mpf(z)
    # |Q~(z)| small relative to its local slope means a zero lies within the neighbourhood
    q, dq = abs(_poly(b, zz)), abs(_dpoly(b, zz))
    return q <= g.ldexp(g.mpf(1), -(ctx.bits // 4)) * max(dq, g.mpf(1))


def gradient_fd_error(theta: SafeRational, z, ctx: PrecisionContext):
    """Max relative deviation between analytic and finite-difference gradients (None near a flip)."""
    if near_sign_flip(theta, z, ctx):
        return None
    grad = coeff_gradients(theta, z, ctx)
    da, db = fd_coeff_gradients(theta, z, ctx)
    worst = ctx.mpf(0)
    for exact, approx in zip(grad.d_a + grad.d_b, da + db):
        worst = max(worst, abs(exact - approx) / max(abs(exact), ctx.ldexp(ctx.mpf(1), -(ctx.bits // 4))))
    return worst


# ---------------------------------------------------------------- gauge flatness


def _gauge_derivative(theta: SafeRational, z, ctx: PrecisionContext):
    """d/d eta at 0 of r_{theta_eta}(e^eta z): coefficient motion plus argument motion."""
    a, b, zz, p, q = _parts(theta, z, ctx)
    sgn = _sign(q)
    Q = 1 + abs(q)
    coeff = -sum((j * aj * zz ** j for j, aj in enumerate(a)), ctx.mpf(0)) / Q
    coeff += p * sgn * sum((k * bk * zz ** k for k, bk in enumerate(b)), ctx.mpf(0)) / (Q * Q)
    dr = _dpoly(a, zz) / Q - p * sgn * (_dpoly(b, zz) if b else 0) / (Q * Q)
    return coeff + dr * zz


def gauge_flatness_probe(
    theta: SafeRational, gamma, grid: Grid, ctx: PrecisionContext, mu=0.0, sigma=1.0
):
    """Max |d/d eta| of the gauge-transported composite output over the grid (chain rule)."""
    best = ctx.mpf(0)
    for u in grid.points(ctx):
        z = ctx.mpf(gamma) * (u - ctx.mpf(mu)) / ctx.mpf(sigma)
        best = max(best, abs(_gauge_derivative(theta, z, ctx)))
    return best


def gauge_flatness_fd(
    theta: SafeRational, gamma, grid: Grid, ctx: PrecisionContext, mu=0.0, sigma=1.0, step: float = 1e-6
):
    """Same probe by central difference in eta."""
    gp, tp = scale_gauge(theta, gamma, step, ctx)
    gm, tm = scale_gauge(theta, gamma, -step, ctx)
    h = ctx.mpf(step)
    best = ctx.mpf(0)
    for u in grid.points(ctx):
        d = (gauge_output(tp, gp, u, mu, sigma, ctx) - gauge_output(tm, gm, u, mu, sigma, ctx)) / (2 * h)
        best = max(best, abs(d))
    return best


# ---------------------------------------------------------------- noise moments


@dataclass(frozen=True)
class NoiseMoments:
    z0: float
    scale: float
    mean: tuple
    variance: tuple
    second_moment: tuple  # empirical E[z^(2j) / Q(z)^2]


def gradient_noise_moments(
    theta: SafeRational, z0: float, scale: float, samples: int, rng: np.random.Generator, ctx: PrecisionContext
) -> NoiseMoments:
    """Numerator-coefficient gradients at z0 + scale * N(0, 1)."""
    zs = z0 + scale * rng.standard_normal(samples)
    rows = np.array([[float(v) for v in coeff_gradients(theta, float(z), ctx).d_a] for z in zs])
    return NoiseMoments(
        float(z0),
        float(scale),
        tuple(float(v) for v in rows.mean(axis=0)),
        tuple(float(v) for v in rows.var(axis=0)),
        tuple(float(v) for v in (rows ** 2).mean(axis=0)),
    )


def random_safe_rational(rng: np.random.Generator, m: int = 5, n: int = 4) -> SafeRational:
    return SafeRational(tuple(rng.uniform(-1, 1, m + 1)), tuple(rng.uniform(-1, 1, n + 1)))


def gradient_rows(theta: SafeRational, zs: Sequence, ctx: PrecisionContext) -> list[tuple]:
    """CSV rows (z, coefficient, gradient, bound, margin)."""
    rows = []
    for z in zs:
        gr = coeff_gradients(theta, z, ctx)
        za = abs(ctx.mpf(z))
        for j, d in enumerate(gr.d_a):
            bound = za ** j
            rows.append((ctx.format(ctx.mpf(z)), f"a{j}", ctx.format(d), ctx.format(bound), ctx.format(bound - abs(d))))
        for k, d in enumerate(gr.d_b):
            bound = abs(gr.p_value) * za ** k
            rows.append((ctx.format(ctx.mpf(z)), f"b{k}", ctx.format(d), ctx.format(bound), ctx.format(bound - abs(d))))
    return rows
