"""Rational functions, Chebyshev expansions and degree bookkeeping for rational networks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, PoleError
from .numerics import PrecisionContext

SCAN_POINTS = 10001


def _horner(coeffs: Sequence, x):
    acc = 0 * x
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


@dataclass(frozen=True)
class RationalFn:
    """P(x)/Q(x) with ascending-power coefficients.

    With ``safe=True`` the effective denominator is 1 + |Q(x)| and never vanishes.
    ``numer``/``denom`` may hold floats, ints, decimal strings or mpf values; they are
    converted to the evaluation context on use.
    """

    numer: tuple
    denom: tuple
    safe: bool = False
    domain: tuple = (-1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "numer", tuple(self.numer))
        object.__setattr__(self, "denom", tuple(self.denom))
        if not self.safe:
            if not self.denom:
                raise ValueError("plain rational needs a nonempty denominator")
            x0 = denominator_zero(self.denom, *self.domain)
            if x0 is not None:
                raise PoleError(x0, f"denominator has a real zero near x={x0:.6g} on {self.domain}")

    def __call__(self, x, ctx: PrecisionContext | None = None):
        return eval_rational(self, x, ctx or PrecisionContext(53))

    def coefficients(self, ctx: PrecisionContext) -> tuple[list, list]:
        return ctx.vector(self.numer), ctx.vector(self.denom)

    def complex_poles(self) -> np.ndarray:
        """Roots of the denominator polynomial (double precision)."""
        b = np.trim_zeros(np.array([float(c) for c in self.denom]), "b")
        if self.safe or len(b) <= 1:
            return np.array([], dtype=complex)
        return np.roots(b[::-1]).astype(complex)


def denominator_zero(denom: Sequence, lo: float, hi: float, n: int = SCAN_POINTS):
    """Sign scan of Q on a dense grid plus a derivative-bound refinement.

    Returns an approximate zero location, or None if Q keeps one sign on [lo, hi].
    """
    b = np.array([float(c) for c in denom])
    if not b.any():
        return float(lo)
    xs = np.linspace(float(lo), float(hi), n)
    q = np.polynomial.polynomial.polyval(xs, b)
    hit = np.nonzero(q == 0)[0]
    if hit.size:
        return float(xs[hit[0]])
    flip = np.nonzero(np.sign(q[:-1]) != np.sign(q[1:]))[0]
    if flip.size:
        return float(xs[flip[0]])
    # |Q'| <= sum j |b_j| r^(j-1): an interval whose endpoint values exceed D*h/2 cannot hide a zero
    r = max(abs(float(lo)), abs(float(hi)), 1.0)
    dbound = sum(j * abs(bj) * r ** (j - 1) for j, bj in enumerate(b) if j)
    h = xs[1] - xs[0]
    suspicious = np.nonzero(np.abs(q[:-1]) + np.abs(q[1:]) <= dbound * h)[0]
    if suspicious.size:
        roots = np.roots(np.trim_zeros(b, "b")[::-1]) if len(np.trim_zeros(b, "b")) > 1 else []
        for z in roots:
            if abs(z.imag) <= 1e-12 * max(1.0, abs(z.real)) and lo <= z.real <= hi:
                return float(z.real)
    return None


def eval_rational(r: RationalFn, x, ctx: PrecisionContext):
    """P(x)/Q(x), or P(x)/(1+|Q(x)|) for a safe rational."""
    x = ctx.mpf(x)
    p = _horner(ctx.vector(r.numer), x)
    q = _horner(ctx.vector(r.denom), x) if r.denom else ctx.mpf(0)
    if r.safe:
        return p / (1 + abs(q))
    if q == 0:
        raise PoleError(x)
    return p / q


def bernstein_rho(z: complex) -> float:
    """Bernstein parameter |z + sqrt(z^2 - 1)| of the ellipse through z (branch giving rho >= 1)."""
    w = complex(z)
    s = np.sqrt(w * w - 1)
    return float(max(abs(w + s), abs(w - s)))


def nearest_pole_rho(r: RationalFn) -> float:
    """Largest rho such that r is analytic inside the open Bernstein ellipse E_rho."""
    poles = r.complex_poles()
    if poles.size == 0:
        return math.inf
    return min(bernstein_rho(z) for z in poles)


@dataclass(frozen=True)
class ChebyshevExpansion:
    """Chebyshev coefficients c_0..c_d with Bernstein-ellipse metadata (rho, M_rho)."""

    coeffs: tuple
    degree: int
    rho: float
    m_rho: float
    noise: float = 0.0  # absolute slack for rounding-level coefficients

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        if self.degree < 0 or len(self.coeffs) != self.degree + 1:
            raise ValueError("coefficient count must equal degree + 1")
        if not self.rho > 1 or not self.m_rho > 0:
            raise ValueError("need rho > 1 and m_rho > 0")
        worst = decay_violation(self.coeffs, self.rho, self.m_rho, noise=self.noise)
        if worst is not None:
            raise ValueError(
                f"coefficient decay |c_k| <= 2 M rho^-k violated at k={worst} "
                f"(rho={self.rho}, M={self.m_rho})"
            )

    def truncation_bound(self) -> float:
        """Bound 2 M rho^-d / (rho - 1) on the uniform truncation error."""
        return 2 * self.m_rho * self.rho ** (-self.degree) / (self.rho - 1)

    def __call__(self, x, ctx: PrecisionContext):
        return chebyshev_sum(self.coeffs, x, ctx)


def decay_violation(coeffs: Sequence, rho: float, m_rho: float, rel: float = 1e-9, noise: float = 0.0):
    for k, c in enumerate(coeffs):
        lim = 2 * m_rho * float(rho) ** (-k)
        if abs(float(c)) > lim * (1 + rel) + noise:
            return k
    return None


def chebyshev_sum(coeffs: Sequence, x, ctx: PrecisionContext):
    """Direct summation of sum c_k T_k(x) using the three-term recurrence for T_k."""
    x = ctx.mpf(x)
    c = ctx.vector(coeffs)
    t0, t1 = ctx.mpf(1), x
    total = c[0] * t0
    if len(c) > 1:
        total += c[1] * t1
    for k in range(2, len(c)):
        t0, t1 = t1, 2 * x * t1 - t0
        total += c[k] * t1
    return total


def _plain_on_interval(r: RationalFn, ctx: PrecisionContext) -> RationalFn:
    """Rewrite a safe rational as a plain one on [-1,1] when Q keeps a constant sign there."""
    if not r.safe:
        if denominator_zero(r.denom, -1.0, 1.0) is not None:
            raise DomainError("rational has a pole on [-1, 1]")
        return r
    if not r.denom or not any(float(b) for b in r.denom):
        return RationalFn(r.numer, (1,), safe=False)
    if denominator_zero(r.denom, -1.0, 1.0) is not None:
        raise DomainError("safe rational with sign-changing Q is not analytic on [-1, 1]")
    sign = 1 if float(_horner([float(b) for b in r.denom], 0.0)) > 0 else -1
    denom = [sign * b for b in ctx.vector(r.denom)]
    denom[0] += 1
    return RationalFn(r.numer, tuple(denom), safe=False)


def chebyshev_coefficients(fun, n: int, ctx: PrecisionContext) -> list:
    """Coefficients of the degree-n interpolant at the n+1 second-kind points cos(pi j/n)."""
    if n == 0:
        return [fun(ctx.mpf(1))]
    cos_table = [ctx.cos(ctx.pi * m / n) for m in range(2 * n)]
    vals = [fun(cos_table[j]) for j in range(n + 1)]
    vals[0] /= 2
    vals[n] /= 2
    out = []
    for k in range(n + 1):
        s = ctx.mpf(0)
        for j in range(n + 1):
            s += vals[j] * cos_table[(j * k) % (2 * n)]
        s = 2 * s / n
        if k == 0 or k == n:
            s /= 2
        out.append(s)
    return out


def resolved_coefficients(fun, ctx: PrecisionContext, min_points: int = 16, max_points: int = 4096):
    """Interpolation coefficients at growing point counts until the tail is at rounding level.

    The trailing coefficients then stand in for the (aliasing-free) expansion coefficients.
    """
    n = min_points
    while True:
        c = chebyshev_coefficients(fun, n, ctx)
        scale = max(abs(v) for v in c) or ctx.mpf(1)
        tail = max(abs(v) for v in c[-max(4, n // 8):])
        if tail <= 64 * ctx.eps * scale or n >= max_points:
            return c
        n *= 2


def effective_m_rho(coeffs: Sequence, rho: float, noise: float = 0.0) -> float:
    """Smallest M with |c_k| <= 2 M rho^-k over the coefficients above the noise level."""
    vals = [abs(float(c)) * float(rho) ** k / 2 for k, c in enumerate(coeffs) if abs(float(c)) > noise]
    return max(vals) if vals else 0.0


def ellipse_sup(r: RationalFn, rho: float, n: int = 4096) -> float:
    """Sampled max |R| on the Bernstein ellipse E_rho (rho must sit below the nearest pole)."""
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    z = 0.5 * (rho * np.exp(1j * th) + np.exp(-1j * th) / rho)
    p = np.polynomial.polynomial.polyval(z, np.array([float(c) for c in r.numer]))
    q = np.polynomial.polynomial.polyval(z, np.array([float(c) for c in r.denom]))
    if r.safe:
        raise DomainError("ellipse sup is defined for plain rationals only")
    return float(np.max(np.abs(p / q)))


def cheb_expand(
    r: RationalFn,
    d: int,
    ctx: PrecisionContext,
    rho: float | None = None,
    m_rho: float | None = None,
) -> ChebyshevExpansion:
    """Degree-d Chebyshev truncation of r on [-1, 1].

    Coefficients come from second-kind interpolation with enough points that aliasing is
    below rounding.  Without an explicit ``rho`` the nearest-pole Bernstein parameter is
    used; without ``m_rho`` the coefficient-based constant max_k |c_k| rho^k / 2 is used.
    """
    if d < 0:
        raise ValueError("degree must be >= 0")
    plain = _plain_on_interval(r, ctx)
    scratch = RationalFn(plain.numer, plain.denom, safe=False, domain=(-1.0, 1.0))

    def f(x):
        return eval_rational(scratch, x, ctx)

    full = resolved_coefficients(f, ctx, min_points=max(16, 2 * (d + 1)))
    if len(full) < d + 1:
        full = full + [ctx.mpf(0)] * (d + 1 - len(full))
    if rho is None:
        rho = nearest_pole_rho(scratch)
        if not math.isfinite(rho):
            rho = 2.0
    scale = max(abs(float(c)) for c in full)
    noise = 1024 * float(ctx.eps) * max(scale, 1e-300)
    if m_rho is None:
        m_rho = effective_m_rho(full, rho, noise) or float(ctx.eps)
    return ChebyshevExpansion(tuple(full[: d + 1]), d, float(rho), float(m_rho), noise)


def truncation_degree(epsilon: float, rho: float, m_rho: float) -> int:
    """d = ceil(log(8 M / ((rho - 1) eps)) / log rho), clipped at 0."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not rho > 1 or not m_rho > 0:
        raise ValueError("need rho > 1 and m_rho > 0")
    val = math.log(8 * m_rho / ((rho - 1) * epsilon)) / math.log(rho)
    return max(0, math.ceil(val - 1e-9))


def truncation_bound(d: int, rho: float, m_rho: float) -> float:
    return 2 * m_rho * rho ** (-d) / (rho - 1)


@dataclass(frozen=True)
class DegreeBudget:
    width: int
    depth: int
    c_deg: float = 1.0

    @property
    def degree_cap(self) -> float:
        return degree_cap(self)


def degree_cap(budget: DegreeBudget) -> float:
    """C_deg * W * 3^L."""
    cap = budget.c_deg * budget.width * 3 ** budget.depth
    return int(cap) if float(cap).is_integer() else cap


def min_size_witness(n_required: int, c_deg: float = 1.0) -> DegreeBudget:
    """(W, L) minimizing W*L subject to c_deg * W * 3^L >= n_required, with W, L >= 1."""
    if n_required <= 0:
        return DegreeBudget(1, 1, c_deg)
    top = max(1, math.floor(math.log(max(n_required / c_deg, 1), 3)) + 1)
    best = None
    for L in range(1, top + 1):
        W = max(1, math.ceil(n_required / (c_deg * 3 ** L)))
        while c_deg * W * 3 ** L < n_required:
            W += 1
        while W > 1 and c_deg * (W - 1) * 3 ** L >= n_required:
            W -= 1
        if best is None or W * L < best.width * best.depth:
            best = DegreeBudget(W, L, c_deg)
    return best


def min_size_from_degree(n_required: int, c_deg: float = 1.0) -> int:
    w = min_size_witness(n_required, c_deg)
    return w.width * w.depth


# plain-text records

def dumps_rational(r: RationalFn, ctx: PrecisionContext) -> str:
    lines = [
        "kind=RationalFn",
        f"bits={ctx.bits}",
        f"safe={int(r.safe)}",
        "domain=" + ",".join(ctx.format(ctx.mpf(v)) for v in r.domain),
        "numer=" + ",".join(ctx.format(c) for c in ctx.vector(r.numer)),
        "denom=" + ",".join(ctx.format(c) for c in ctx.vector(r.denom)),
    ]
    return "\n".join(lines) + "\n"


def dumps_expansion(e: ChebyshevExpansion, ctx: PrecisionContext) -> str:
    lines = [
        "kind=ChebyshevExpansion",
        f"bits={ctx.bits}",
        f"degree={e.degree}",
        f"rho={e.rho!r}",
        f"m_rho={e.m_rho!r}",
        f"noise={e.noise!r}",
        "coeffs=" + ",".join(ctx.format(c) for c in ctx.vector(e.coeffs)),
    ]
    return "\n".join(lines) + "\n"


def _parse_record(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _split(value: str) -> list:
    return [v for v in value.split(",") if v] if value else []


def loads_record(text: str, ctx: PrecisionContext | None = None):
    """Inverse of dumps_rational / dumps_expansion; coefficients parsed in ``ctx`` (default: record bits)."""
    rec = _parse_record(text)
    ctx = ctx or PrecisionContext(int(rec.get("bits", 53)))
    kind = rec.get("kind")
    if kind == "RationalFn":
        return RationalFn(
            tuple(ctx.mpf(v) for v in _split(rec["numer"])),
            tuple(ctx.mpf(v) for v in _split(rec["denom"])),
            safe=rec["safe"] == "1",
            domain=tuple(float(v) for v in _split(rec["domain"])),
        )
    if kind == "ChebyshevExpansion":
        return ChebyshevExpansion(
            tuple(ctx.mpf(v) for v in _split(rec["coeffs"])),
            int(rec["degree"]),
            float(rec["rho"]),
            float(rec["m_rho"]),
            float(rec.get("noise", 0.0)),
        )
    raise ValueError(f"unknown record kind {kind!r}")
