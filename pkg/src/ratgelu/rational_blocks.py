"""Rational-network blocks for x^(1/p), log, artanh, tanh and GELU.

Every block is built once (at which point its constants may be computed with the
context's transcendental functions) and then evaluated with +, -, *, / only.

Size accounting (one unit per rational activation, affine maps free):

* p-th root block with k updates: k units.
* AGM log block: 1 (q = 1/x) + 2 * m_ell (incremental theta series terms)
  + 2 (squares) + l_log * (root-block size per AGM step) + 1 (pi / 4a).
* artanh block: two log blocks (log 2 is a constant).
* Halley tanh block with k steps: k * (artanh size + 1).
* GELU block: 1 (cubic P) + Halley size + m (ladder) + 1 (output product).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import DomainError
from .numerics import Grid, PrecisionContext, refined_max

BETA_STR = "0.044715"


def gelu_alpha(ctx: PrecisionContext):
    return ctx.sqrt(2 / ctx.pi)


def gelu_beta(ctx: PrecisionContext):
    return ctx.mpf(BETA_STR)


@dataclass(frozen=True)
class BlockResult:
    value_fn: Callable
    size: int
    trace: tuple = ()
    info: dict = field(default_factory=dict, compare=False)


def trace_rows(name: str, trace: Sequence, ctx: PrecisionContext) -> list[tuple]:
    """CSV rows (block_name, k, sup_error_decimal, bits)."""
    return [(name, k, ctx.format(e), ctx.bits) for k, e in enumerate(trace)]


# ---------------------------------------------------------------- p-th root

def _root(x, p: int, ctx: PrecisionContext):
    if p == 2:
        return ctx.sqrt(x)
    if ctx.native:
        return x ** (1.0 / p)
    return ctx.mp.root(x, p)


def mu(alpha, p: int, ctx: PrecisionContext):
    """((alpha - alpha^p) / ((p-1)(1-alpha)))^(1/p), evaluated without the 0/0 cancellation."""
    alpha = ctx.mpf(alpha)
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if p < 2:
        raise DomainError("p must be >= 2")
    geo = sum(alpha ** i for i in range(p - 1))  # (1 - alpha^(p-1)) / (1 - alpha)
    return _root(alpha * geo / (p - 1), p, ctx)


@dataclass(frozen=True)
class RootIterConfig:
    p: int = 2
    alpha0: float = 0.5
    iterations: int = 6

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if not 0 < float(self.alpha0) < 1:
            raise ValueError("alpha0 must lie in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def alpha_sequence(cfg: RootIterConfig, ctx: PrecisionContext) -> tuple[list, list]:
    """(alpha_0..alpha_k, mu_0..mu_{k-1}) of the coupled scalar recursion."""
    p = cfg.p
    alphas = [ctx.mpf(cfg.alpha0)]
    mus = []
    for _ in range(cfg.iterations):
        a = alphas[-1]
        if a >= 1:
            # alpha has reached 1 in working precision; the iteration is at its fixed point
            mus.append(ctx.mpf(1))
            alphas.append(ctx.mpf(1))
            continue
        m = mu(a, p, ctx)
        mus.append(m)
        alphas.append(p * a / ((p - 1) * m + a ** p / m ** (p - 1)))
    return alphas, mus


def root_error_identity(cfg: RootIterConfig, ctx: PrecisionContext) -> list:
    """(1 - alpha_k) / (1 + alpha_k) for k = 0..iterations."""
    alphas, _ = alpha_sequence(cfg, ctx)
    return [(1 - a) / (1 + a) for a in alphas]


class _RootEvaluator:
    """Scaled iterate f~_j(x) for all j <= k, using precomputed alpha/mu constants."""

    def __init__(self, cfg: RootIterConfig, ctx: PrecisionContext):
        self.cfg = cfg
        self.ctx = ctx
        alphas, mus = alpha_sequence(cfg, ctx)
        p = cfg.p
        self.scales = [2 * a / (1 + a) for a in alphas]
        self.c1 = [(p - 1) * m / p for m in mus]
        self.c2 = [1 / (p * m ** (p - 1)) for m in mus]
        self.lo = ctx.mpf(cfg.alpha0) ** p
        self.hi = ctx.mpf(1)

    def iterates(self, x) -> list:
        p = self.cfg.p
        f = self.ctx.mpf(1)
        out = [self.scales[0] * f]
        for j in range(self.cfg.iterations):
            f = self.c1[j] * f + self.c2[j] * x / f ** (p - 1)
            out.append(self.scales[j + 1] * f)
        return out

    def __call__(self, x):
        p = self.cfg.p
        f = self.ctx.mpf(1)
        for j in range(self.cfg.iterations):
            f = self.c1[j] * f + self.c2[j] * x / f ** (p - 1)
        return self.scales[-1] * f


def pth_root_block(cfg: RootIterConfig, ctx: PrecisionContext, trace_points: int = 201) -> BlockResult:
    """x^(1/p) on [alpha0^p, 1] with trace = sup relative error of f~_0..f~_k."""
    ev = _RootEvaluator(cfg, ctx)

    def value_fn(x):
        x = ctx.mpf(x)
        if not ev.lo <= x <= ev.hi:
            raise DomainError(f"x={x} outside [alpha0^p, 1]")
        return ev(x)

    pts = Grid(float(ev.lo), 1.0, trace_points).points(ctx)
    pts[0] = ev.lo
    roots = {id(x): _root(x, cfg.p, ctx) for x in pts}
    trace = []
    for j in range(cfg.iterations + 1):
        def rel(x, j=j):
            r = roots.get(id(x))
            if r is None:
                r = _root(x, cfg.p, ctx)
            return abs(ev.iterates(x)[j] / r - 1)
        best, _ = refined_max(rel, pts, ctx, candidates=3)
        trace.append(best)
    return BlockResult(value_fn, cfg.iterations, tuple(trace), {"alpha": alpha_sequence(cfg, ctx)[0]})


class ScaledSqrt:
    """sqrt(z) on [lo, hi] as sqrt(hi) * f~_k(z / hi) with a p=2 root block.

    ``iterations`` is the smallest k whose relative error bound (1-a_k)/(1+a_k),
    times sqrt(hi), is at most ``tol``.
    """

    def __init__(self, lo, hi, tol, ctx: PrecisionContext, max_iter: int = 64):
        self.ctx = ctx
        self.lo, self.hi = ctx.mpf(lo), ctx.mpf(hi)
        self.root_hi = ctx.sqrt(self.hi)
        alpha0 = ctx.sqrt(self.lo / self.hi)
        tol = ctx.mpf(tol)
        k = 0
        a = alpha0
        while (1 - a) / (1 + a) * self.root_hi > tol and k < max_iter and a < 1:
            m = ctx.sqrt(a)
            a = 2 * a / (m + a * a / m)
            k += 1
        self.cfg = RootIterConfig(2, alpha0, k)
        self.ev = _RootEvaluator(self.cfg, ctx)
        self.iterations = k

    def __call__(self, z):
        return self.root_hi * self.ev(z / self.hi)


# ---------------------------------------------------------------- theta / AGM log

def theta_reference(q, which: str, ctx: PrecisionContext):
    """Jacobi theta_2(0,q) or theta_3(0,q) by its q-series (reference oracle)."""
    q = ctx.mpf(q)
    if not 0 < q < 1:
        raise DomainError("nome q must lie in (0, 1)")
    stop = ctx.ldexp(ctx.mpf(1), -ctx.bits - 8)
    if which in ("theta3", "3", 3):
        total, n = ctx.mpf(1), 1
        while True:
            term = q ** (n * n)
            if term < stop:
                return total
            total += 2 * term
            n += 1
    if which in ("theta2", "2", 2):
        total, n = ctx.mpf(0), 0
        while True:
            term = q ** (n * (n + 1))
            if term < stop:
                break
            total += term
            n += 1
        return 2 * _root(q, 4, ctx) * total
    raise ValueError("which must be 'theta2' or 'theta3'")


def agm_reference(a, b, ctx: PrecisionContext, steps: int = 64):
    for _ in range(steps):
        a, b = (a + b) / 2, ctx.sqrt(a * b)
    return a


@dataclass(frozen=True)
class AGMLogConfig:
    sigma: float = 0.125
    tau: float = 1e-3
    m_ell: int = 12
    l_log: int = 10
    sqrt_tol: float = 1e-40

    def __post_init__(self):
        if not 0 < self.sigma < 1 or not 0 < self.tau < 1:
            raise ValueError("sigma and tau must lie in (0, 1)")
        if 1 / self.tau <= 1 + self.sigma:
            raise ValueError("domain D is empty for this (sigma, tau)")
        if self.m_ell < 1 or self.l_log < 0 or not self.sqrt_tol > 0:
            raise ValueError("need m_ell >= 1, l_log >= 0, sqrt_tol > 0")

    def in_domain(self, x) -> bool:
        return x > 0 and abs(x - 1) >= self.sigma and self.tau <= x <= 1 / self.tau

    @classmethod
    def for_tolerance(cls, epsilon, ctx: PrecisionContext, sigma: float = 0.125, tau: float = 1e-3) -> "AGMLogConfig":
        """Parameters whose three error sources are each <= epsilon/4 on D.

        * theta truncation: a relative perturbation eta of both AGM inputs moves the AGM by
          at most eta relatively (homogeneity + monotonicity), i.e. log x by <= log(1/tau) eta;
        * AGM truncation: pi/4 |1/a_L - 1/M| <= pi/4 (a_L - b_L) / (a_L b_L), evaluated at the
          slowest point x = 1/tau;
        * root blocks: absolute error delta on values >= lo is a relative error delta/lo per step.
        """
        eps = ctx.mpf(epsilon)
        sig, ta = ctx.mpf(sigma), ctx.mpf(tau)
        log_max = -ctx.log(ta)
        q_max = 1 / (1 + sig)
        eta = eps / (4 * log_max)
        m = 1
        while max(4 * q_max ** (4 * m * (m + 1)), 8 * q_max ** (4 * (m + 1) ** 2)) > eta:
            m += 1
        a = theta_reference(ta ** 4, "theta2", ctx) ** 2
        b = theta_reference(ta ** 4, "theta3", ctx) ** 2
        L = 0
        while ctx.pi / 4 * abs(a - b) / (a * b) > eps / 4:
            a, b = (a + b) / 2, ctx.sqrt(a * b)
            L += 1
            if L > 200:
                raise RuntimeError("AGM failed to converge")
        lo = theta_reference(ta ** 4, "theta2", ctx) ** 2
        delta = eps * lo / (4 * max(L, 1) * log_max)
        return cls(sigma, tau, m, L, float(delta) if ctx.native else delta)


class AGMLog:
    """log x on D_{sigma,tau} via the theta-AGM identity with root-block square roots."""

    def __init__(self, cfg: AGMLogConfig, ctx: PrecisionContext):
        self.cfg = cfg
        self.ctx = ctx
        sig, tau = ctx.mpf(cfg.sigma), ctx.mpf(cfg.tau)
        self.sigma, self.tau = sig, tau
        self.quarter_pi = ctx.pi / 4
        # bounds on every AGM iterate for q in [tau, 1/(1+sigma)]
        lo = self._theta2(tau) ** 2
        hi = self._theta3(1 / (1 + sig)) ** 2
        lo, hi = lo * (1 - ctx.mpf(2) ** -20), hi * (1 + ctx.mpf(2) ** -20)
        self.sqrt = ScaledSqrt(lo * lo, hi * hi, cfg.sqrt_tol, ctx)
        self.size = 1 + 2 * cfg.m_ell + 2 + cfg.l_log * self.sqrt.iterations + 1

    def _theta2(self, q):
        # theta_2(0, q^4) = 2 q sum_{n<m} q^(4n(n+1)); products only
        q4 = q ** 4
        q8 = q4 * q4
        term, step, total = self.ctx.mpf(1), q8, self.ctx.mpf(0)
        for _ in range(self.cfg.m_ell):
            total += term
            term *= step
            step *= q8
        return 2 * q * total

    def _theta3(self, q):
        # theta_3(0, q^4) = 1 + 2 sum_{1<=n<=m} q^(4n^2)
        q4 = q ** 4
        q8 = q4 * q4
        term, step, total = q4, q4 * q8, self.ctx.mpf(0)
        for _ in range(self.cfg.m_ell):
            total += term
            term *= step
            step *= q8
        return 1 + 2 * total

    def agm_states(self, x) -> list:
        """a_0..a_L for x > 1."""
        q = 1 / x
        a, b = self._theta2(q) ** 2, self._theta3(q) ** 2
        out = [a]
        for _ in range(self.cfg.l_log):
            a, b = (a + b) / 2, self.sqrt(a * b)
            out.append(a)
        return out

    def _log_gt1(self, x):
        return self.quarter_pi / self.agm_states(x)[-1]

    def __call__(self, x):
        x = self.ctx.mpf(x)
        if not self.cfg.in_domain(x):
            raise DomainError(f"x={x} outside D_(sigma={self.cfg.sigma}, tau={self.cfg.tau})")
        if x > 1:
            return self._log_gt1(x)
        return -self._log_gt1(1 / x)


def agm_log_block(cfg: AGMLogConfig, x, ctx: PrecisionContext):
    return AGMLog(cfg, ctx)(x)


def agm_log_result(cfg: AGMLogConfig, ctx: PrecisionContext, grid: Grid | None = None) -> BlockResult:
    """Log block plus trace: sup |pi/(4 a_j) - log x| over the grid (x > 1 part), j = 0..l_log."""
    block = AGMLog(cfg, ctx)
    grid = grid or Grid(1.75, 2.25, 101)
    pts = [x for x in grid.points(ctx) if cfg.in_domain(x)]
    exact = [ctx.log(x if x > 1 else 1 / x) for x in pts]
    worst = [ctx.mpf(0)] * (cfg.l_log + 1)
    for x, ex in zip(pts, exact):
        states = block.agm_states(x if x > 1 else 1 / x)
        for j, a in enumerate(states):
            e = abs(block.quarter_pi / a - ex)
            if e > worst[j]:
                worst[j] = e
    return BlockResult(block, block.size, tuple(worst), {"sqrt_iterations": block.sqrt.iterations})


# ---------------------------------------------------------------- artanh / Halley

class Artanh:
    """artanh on [-1/8, 1/8] as (L(1+z) - L(1-z))/2 with L(u) = log(2u) - log 2."""

    def __init__(self, tol, ctx: PrecisionContext, log_cfg: AGMLogConfig | None = None):
        self.ctx = ctx
        self.tol = tol
        # two log calls -> each gets tol / (2 * 2) per the uniform split
        self.log_cfg = log_cfg or AGMLogConfig.for_tolerance(ctx.mpf(tol) / 4, ctx)
        self.log = AGMLog(self.log_cfg, ctx)
        self.log2 = self.log(ctx.mpf(2))
        self.eighth = ctx.mpf(1) / 8
        self.size = 2 * self.log.size

    def shifted_log(self, u):
        if u == 1:
            return self.ctx.mpf(0)
        return self.log._log_gt1(2 * u) - self.log2

    def __call__(self, z):
        z = self.ctx.mpf(z)
        if abs(z) > self.eighth:
            raise DomainError(f"|z|={abs(z)} exceeds 1/8")
        if z == 0:
            return self.ctx.mpf(0)
        return (self.shifted_log(1 + z) - self.shifted_log(1 - z)) / 2


def artanh_block(z, tol, ctx: PrecisionContext):
    return Artanh(tol, ctx)(z)


@dataclass(frozen=True)
class HalleyConfig:
    """Halley iterations for tanh; ``artanh_tol=None`` uses the exact artanh oracle."""

    iterations: int = 3
    artanh_tol: float | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def halley_step(t, s, atanh_t):
    r = atanh_t - s
    return t - (1 - t * t) * r / (1 - t * r)


def halley_iterates(s, k: int, ctx: PrecisionContext, artanh: Callable | None = None) -> list:
    s = ctx.mpf(s)
    at = artanh or ctx.atanh
    t = s
    out = [t]
    for _ in range(k):
        t = halley_step(t, s, at(t))
        out.append(t)
    return out


class HalleyTanh:
    def __init__(self, cfg: HalleyConfig, ctx: PrecisionContext, artanh: Artanh | None = None):
        self.cfg = cfg
        self.ctx = ctx
        if artanh is None and cfg.artanh_tol is not None:
            artanh = Artanh(cfg.artanh_tol, ctx)
        self.artanh = artanh
        self.eighth = ctx.mpf(1) / 8
        unit = artanh.size if artanh is not None else 1
        self.size = cfg.iterations * (unit + 1)

    def iterates(self, s) -> list:
        return halley_iterates(s, self.cfg.iterations, self.ctx, self.artanh)

    def __call__(self, s):
        s = self.ctx.mpf(s)
        if abs(s) > self.eighth:
            raise DomainError(f"|s|={abs(s)} exceeds 1/8")
        return self.iterates(s)[-1]


def halley_tanh_block(cfg: HalleyConfig, ctx: PrecisionContext, grid: Grid | None = None) -> BlockResult:
    """Halley tanh block; trace[k] = grid sup |t_k - tanh| over [-1/8, 1/8]."""
    block = HalleyTanh(cfg, ctx)
    grid = grid or Grid(-0.125, 0.125, 41)
    worst = [ctx.mpf(0)] * (cfg.iterations + 1)
    for s in grid.points(ctx):
        ref = ctx.tanh(s)
        for k, t in enumerate(block.iterates(s)):
            e = abs(t - ref)
            if e > worst[k]:
                worst[k] = e
    return BlockResult(block, block.size, tuple(worst))


def halley_tanh(cfg: HalleyConfig, s, ctx: PrecisionContext):
    return HalleyTanh(cfg, ctx)(s)


# ---------------------------------------------------------------- GELU

def psi(t):
    return 2 * t / (1 + t * t)


def ladder(t, m: int):
    for _ in range(m):
        t = psi(t)
    return t


@dataclass(frozen=True)
class GeluLadderConfig:
    m: int = 3
    inner: HalleyConfig | None = None

    def __post_init__(self):
        u = math.sqrt(2 / math.pi) * (1 + 0.044715)
        if u / 2 ** self.m > 0.125:
            raise ValueError(f"ladder depth m={self.m} leaves |P(x)/2^m| = {u / 2 ** self.m:.5f} > 1/8")


def _halley_for_tolerance(eps_tanh, ctx: PrecisionContext, max_iter: int = 12) -> tuple[int, tuple]:
    """Smallest k whose ideal (exact-artanh) sup error on [-1/8, 1/8] is <= eps_tanh / 2."""
    pts = Grid(-0.125, 0.125, 9).points(ctx)
    target = ctx.mpf(eps_tanh) / 2
    trace = []
    for k in range(max_iter + 1):
        worst = max(abs(halley_iterates(s, k, ctx)[-1] - ctx.tanh(s)) for s in pts)
        trace.append(worst)
        if worst <= target:
            return max(k, 1), tuple(trace)
    return max_iter, tuple(trace)


def gelu_rational_block(cfg: GeluLadderConfig | None, epsilon, ctx: PrecisionContext) -> BlockResult:
    """Rational GELU block (x/2)(1 + Psi^(m)(R_tanh(P(x)/2^m))) on [-1, 1].

    The ladder multiplies tanh errors by at most 2^m and the outer factor by 1/2, so the
    tanh block is built for eps' = eps / 2^(m+1); half of eps' goes to the ideal Halley error
    and half to the k artanh calls (eps' / (2k) each).
    """
    if not 0 < float(epsilon) < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    cfg = cfg or GeluLadderConfig()
    eps = ctx.mpf(epsilon)
    eps_tanh = eps / 2 ** (cfg.m + 1)
    inner = cfg.inner
    halley_trace = ()
    if inner is None:
        k, halley_trace = _halley_for_tolerance(eps_tanh, ctx)
        inner = HalleyConfig(k, eps_tanh / (2 * k))
    tanh_block = HalleyTanh(inner, ctx)
    alpha, beta = gelu_alpha(ctx), gelu_beta(ctx)
    a1 = alpha / 2 ** cfg.m
    a3 = alpha * beta / 2 ** cfg.m
    m = cfg.m
    one = ctx.mpf(1)

    def value_fn(x):
        x = ctx.mpf(x)
        if abs(x) > one:
            raise DomainError(f"x={x} outside [-1, 1]")
        s = x * (a1 + a3 * x * x)
        return x / 2 * (1 + ladder(tanh_block(s), m))

    size = 1 + tanh_block.size + m + 1
    info = {"halley_iterations": inner.iterations, "artanh_tol": inner.artanh_tol, "ladder": m}
    return BlockResult(value_fn, size, halley_trace, info)
