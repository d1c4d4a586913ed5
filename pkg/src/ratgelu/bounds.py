"""Lower-bound tools: GELU poles, rate curves, curvature requirements and budgets, AAA fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, NumericalError, VacuousBoundError
from .gelu_gadgets import gelu_constants, gelu_prime, gelu_second
from .numerics import Grid, PrecisionContext, refined_max
from .rational_core import min_size_from_degree

# ---------------------------------------------------------------- poles


@dataclass(frozen=True)
class PoleReport:
    k_index: int
    roots: tuple
    nearest_distance: object
    zeta_eff: object = None
    residuals: tuple = ()


def segment_distance(z, ctx: PrecisionContext):
    """Distance from z to the real segment [-1, 1]."""
    re, im = z.real, z.imag
    if -1 <= re <= 1:
        return abs(im)
    return ctx.cabs(z - (1 if re > 0 else -1))


def _cubic_roots(c, ctx: PrecisionContext) -> list:
    """Roots of alpha beta z^3 + alpha z - i c = 0 via Cardano plus Newton polish."""
    k = gelu_constants(ctx)
    ab = k.alpha * k.beta
    p = 1 / k.beta
    q = ctx.mpc(0, -c / ab)
    disc = ctx.csqrt(q * q / 4 + p * p * p / 27)
    u = ctx.ccbrt(-q / 2 + disc)
    if ctx.cabs(u) == 0:
        u = ctx.ccbrt(-q / 2 - disc)
    omega = ctx.mpc(-0.5, ctx.sqrt(ctx.mpf(3)) / 2)
    target = ctx.mpc(0, c)

    def F(z):
        return k.alpha * (z + k.beta * z * z * z) - target

    def dF(z):
        return k.alpha * (1 + 3 * k.beta * z * z)

    roots = []
    w = u
    for _ in range(3):
        z = w - p / (3 * w)
        for _ in range(3):
            z = z - F(z) / dF(z)
        roots.append(z)
        w = w * omega
    return roots, [ctx.cabs(F(z)) for z in roots]


def _root_key(z):
    return (round(float(z.imag), 12), round(float(z.real), 12))


def find_gelu_poles(k_range: Iterable[int], ctx: PrecisionContext) -> list[PoleReport]:
    """Three poles per branch k of tanh(P(z)): alpha (z + beta z^3) = i (pi/2 + k pi)."""
    ks = list(k_range)
    if not ks:
        raise ValueError("k_range must be nonempty")
    tol = ctx.ldexp(ctx.mpf(1), -(ctx.bits // 2))
    reports = []
    for kk in ks:
        c = ctx.pi / 2 + kk * ctx.pi
        roots, res = _cubic_roots(c, ctx)
        if max(res) > tol:
            raise NumericalError(f"cubic residuals {[float(r) for r in res]} above 2^-{ctx.bits // 2} for k={kk}")
        order = sorted(range(3), key=lambda i: _root_key(roots[i]))
        roots = tuple(roots[i] for i in order)
        res = tuple(res[i] for i in order)
        dist = min(segment_distance(z, ctx) for z in roots)
        reports.append(PoleReport(kk, roots, dist, None, res))
    nearest = min(
        ((segment_distance(z, ctx), z) for rep in reports for z in rep.roots), key=lambda t: t[0]
    )[1]
    zeta = abs(nearest.imag)
    return [PoleReport(r.k_index, r.roots, r.nearest_distance, zeta, r.residuals) for r in reports]


def pole_checks(rep: PoleReport, ctx: PrecisionContext) -> dict:
    """Residual, reflection-symmetry and Vieta defects for one branch."""
    k = gelu_constants(ctx)
    z1, z2, z3 = rep.roots
    sym = max(min(ctx.cabs(w + z.conjugate()) for w in rep.roots) for z in rep.roots)
    c = ctx.pi / 2 + rep.k_index * ctx.pi
    prod_target = ctx.mpc(0, c / (k.alpha * k.beta))
    return {
        "residual": max(rep.residuals),
        "symmetry": sym,
        "vieta_sum": ctx.cabs(z1 + z2 + z3),
        "vieta_pair": ctx.cabs(z1 * z2 + z1 * z3 + z2 * z3 - 1 / k.beta),
        "vieta_product": ctx.cabs(z1 * z2 * z3 - prod_target),
    }


def pole_rows(reports: Sequence[PoleReport], ctx: PrecisionContext) -> list[tuple]:
    """CSV rows (k, re, im, distance)."""
    rows = []
    for rep in reports:
        for z in rep.roots:
            rows.append((rep.k_index, ctx.format(z.real), ctx.format(z.imag), ctx.format(segment_distance(z, ctx))))
    return rows


# ---------------------------------------------------------------- rate bound


def _base(zeta: float) -> float:
    return zeta + math.sqrt(1 + zeta * zeta)


@dataclass(frozen=True)
class RateBound:
    zeta: float
    C: float = 1.0

    def __post_init__(self):
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")

    @property
    def capacity(self) -> float:
        return 2 * math.log(_base(self.zeta))

    @property
    def ratio(self) -> float:
        return 1 / _base(self.zeta)

    def lower_curve(self, n: int) -> float:
        return rate_lower_bound(self.zeta, n, self.C)


def rate_lower_bound(zeta: float, n: int, C: float = 1.0) -> float:
    """C (zeta + sqrt(1 + zeta^2))^-n, built by repeated division so consecutive ratios are exact."""
    if not zeta > 0 or n < 0:
        raise ValueError("need zeta > 0 and n >= 0")
    base = _base(float(zeta))
    v = float(C)
    for _ in range(n):
        v /= base
    return v


def min_rational_degree(epsilon: float, zeta: float, C: float = 1.0) -> int:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if epsilon >= C:
        raise VacuousBoundError(f"epsilon={epsilon} >= C={C}: the lower bound is vacuous")
    val = math.log(C / epsilon) / math.log(_base(float(zeta)))
    return max(0, math.ceil(val - 1e-9))


def min_rational_size(epsilon: float, zeta: float, C: float = 1.0, c_deg: float = 1.0) -> int:
    return min_size_from_degree(min_rational_degree(epsilon, zeta, C), c_deg)


# ---------------------------------------------------------------- curvature


def _check_curvature_params(epsilon, eta):
    if not 0 < epsilon < 0.125:
        raise DomainError("need 0 < epsilon < 1/8")
    if not 0 < eta < epsilon ** 0.25:
        raise DomainError("need 0 < eta < epsilon^(1/4)")


def curvature_requirement(epsilon, eta, ctx: PrecisionContext):
    _check_curvature_params(float(epsilon), float(eta))
    return 1 / (2 * ctx.mpf(epsilon))


@dataclass(frozen=True)
class CurvatureChain:
    fd_curvature: object
    lower: object
    requirement: object
    premise: bool
    holds: bool


def curvature_chain(f: Callable, epsilon, eta, ctx: PrecisionContext, grid: Grid | None = None) -> CurvatureChain:
    """fd = |f(eta)+f(-eta)-2f(0)|/eta^2 against (1-4 eps eta^2)/eta^4 >= 1/(2 eps).

    The premise ||f - R_eta|| <= eps is checked on the grid together with 0 and +-eta.
    """
    _check_curvature_params(float(epsilon), float(eta))
    eps, h = ctx.mpf(epsilon), ctx.mpf(eta)
    h2 = h * h

    def R(x):
        return 1 / (x * x + h2)

    pts = list((grid or Grid(-1.0, 1.0, 401)).points(ctx)) + [ctx.mpf(0), h, -h]
    premise = all(abs(f(x) - R(x)) <= eps for x in pts)
    fd = abs(f(h) + f(-h) - 2 * f(ctx.mpf(0))) / h2
    lower = (1 - 4 * eps * h2) / (h2 * h2)
    req = 1 / (2 * eps)
    holds = (not premise) or (fd >= lower and lower >= req)
    return CurvatureChain(fd, lower, req, premise, holds)


def verify_curvature_chain(f: Callable, epsilon, eta, ctx: PrecisionContext) -> bool:
    return curvature_chain(f, epsilon, eta, ctx).holds


@dataclass(frozen=True)
class CurvatureBudget:
    C: float
    B: float
    widths: tuple
    L: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        if not self.widths:
            raise ValueError("widths must be nonempty")
        if self.L == 0:
            object.__setattr__(self, "L", len(self.widths))
        if self.L != len(self.widths):
            raise ValueError("L must equal the number of widths")

    @property
    def upper(self) -> float:
        return curvature_upper(self)


def curvature_upper(budget: CurvatureBudget) -> float:
    """L (C B)^(2L+1) prod W_k^2."""
    L = budget.L
    out = L * (budget.C * budget.B) ** (2 * L + 1)
    for w in budget.widths:
        out *= w * w
    return out


@dataclass(frozen=True)
class GeluNet:
    """Scalar GELU network x -> c . h_L + d with h_l = G(A_l h_{l-1} + b_l)."""

    layers: tuple  # ((A as tuple of rows, b), ...)
    out_w: tuple
    out_b: float

    @property
    def widths(self) -> tuple:
        return tuple(len(b) for _, b in self.layers)

    def max_abs_param(self) -> float:
        vals = [abs(v) for A, b in self.layers for row in A for v in row]
        vals += [abs(v) for _, b in self.layers for v in b]
        vals += [abs(v) for v in self.out_w] + [abs(self.out_b)]
        return max(vals)

    def eval_array(self, x: np.ndarray) -> np.ndarray:
        k = gelu_constants(PrecisionContext(53))
        h = x[None, :]
        for A, b in self.layers:
            z = np.asarray(A) @ h + np.asarray(b)[:, None]
            h = z / 2 * (1 + np.tanh(k.alpha * (z + k.beta * z ** 3)))
        return np.asarray(self.out_w) @ h + self.out_b

    def eval_scalar(self, x, ctx: PrecisionContext):
        k = gelu_constants(ctx)
        h = [ctx.mpf(x)]
        for A, b in self.layers:
            z = [sum((ctx.mpf(a) * v for a, v in zip(row, h)), ctx.mpf(0)) + ctx.mpf(bi) for row, bi in zip(A, b)]
            h = [zi / 2 * (1 + ctx.tanh(k.cubic(zi))) for zi in z]
        return sum((ctx.mpf(c) * v for c, v in zip(self.out_w, h)), ctx.mpf(0)) + ctx.mpf(self.out_b)


def random_gelu_net(widths: Sequence[int], rng: np.random.Generator, B: float = 1.0) -> GeluNet:
    layers = []
    fan_in = 1
    for w in widths:
        A = rng.uniform(-B, B, size=(w, fan_in))
        b = rng.uniform(-B, B, size=w)
        layers.append((tuple(tuple(float(v) for v in row) for row in A), tuple(float(v) for v in b)))
        fan_in = w
    out_w = tuple(float(v) for v in rng.uniform(-B, B, size=fan_in))
    return GeluNet(tuple(layers), out_w, float(rng.uniform(-B, B)))


def measure_curvature(net: GeluNet, grid: Grid, ctx: PrecisionContext, B: float | None = None) -> float:
    """Max over the grid of |F(x+h) - 2F(x) + F(x-h)| / h^2 with h = 2^(-bits/3)."""
    if B is not None and net.max_abs_param() > B:
        raise ValueError(f"network parameter {net.max_abs_param()} exceeds bound B={B}")
    h = 2.0 ** (-ctx.bits / 3)
    if ctx.native:
        x = np.linspace(float(grid.lo), float(grid.hi), grid.n)
        fd = (net.eval_array(x + h) - 2 * net.eval_array(x) + net.eval_array(x - h)) / h ** 2
        return float(np.max(np.abs(fd)))
    hh = ctx.ldexp(ctx.mpf(1), -(ctx.bits // 3))
    best = ctx.mpf(0)
    for x in grid.points(ctx):
        v = abs(net.eval_scalar(x + hh, ctx) - 2 * net.eval_scalar(x, ctx) + net.eval_scalar(x - hh, ctx)) / (hh * hh)
        best = max(best, v)
    return float(best)


# ---------------------------------------------------------------- Lipschitz constants

_DERIVS = {
    "G": lambda x, ctx: x / 2 * (1 + ctx.tanh(gelu_constants(ctx).cubic(x))),
    "G'": gelu_prime,
    "G''": gelu_second,
}


def lipschitz_sup(which: str, interval: tuple, ctx: PrecisionContext, points: int = 2001):
    """Grid-plus-refinement maximum of |G|, |G'| or |G''| on a closed interval."""
    if which not in _DERIVS:
        raise ValueError(f"which must be one of {sorted(_DERIVS)}")
    fn = _DERIVS[which]
    lo, hi = float(interval[0]), float(interval[1])
    if lo > hi:
        raise ValueError("interval must satisfy lo <= hi")
    if lo == hi:
        return abs(fn(ctx.mpf(lo), ctx))
    pts = Grid(lo, hi, points).points(ctx)
    best, _ = refined_max(lambda x: abs(fn(x, ctx)), pts, ctx)
    return best


def curvature_constant(ctx: PrecisionContext, interval=(-20.0, 20.0)) -> float:
    """C = max{1, sup|G'|, sqrt(sup|G''|)}."""
    c1 = float(lipschitz_sup("G'", interval, ctx))
    c2 = float(lipschitz_sup("G''", interval, ctx))
    return max(1.0, c1, math.sqrt(c2))


# ---------------------------------------------------------------- AAA


@dataclass(frozen=True)
class AAAFit:
    errors: tuple  # best type-(n, n) error available by degree n (running minimum)
    raw_errors: tuple  # error of the degree-n AAA iterate itself
    support: tuple


def _null_vector_np(A: np.ndarray) -> np.ndarray:
    if A.shape[1] == 1:
        return np.ones(1)
    _, _, vh = np.linalg.svd(A, full_matrices=False) if A.shape[0] >= A.shape[1] else np.linalg.svd(A)
    w = vh[-1].conj()
    if not np.all(np.isfinite(w)):
        raise NumericalError("non-finite AAA weights")
    return w


def _aaa_numpy(F: Callable, Z: np.ndarray, max_degree: int) -> AAAFit:
    Fv = np.array([float(F(z)) for z in Z])
    if not np.all(np.isfinite(Fv)):
        raise NumericalError("target non-finite on the sample set")
    mask = np.ones(len(Z), dtype=bool)
    R = np.full_like(Fv, Fv.mean())
    support, raw = [], []
    for _ in range(max_degree + 1):
        j = int(np.argmax(np.where(mask, np.abs(Fv - R), -1.0)))
        support.append(j)
        mask[j] = False
        z, f = Z[support], Fv[support]
        C = 1.0 / (Z[mask, None] - z[None, :])
        A = (Fv[mask, None] - f[None, :]) * C
        w = _null_vector_np(A)
        N, D = C @ (w * f), C @ w
        if np.any(D == 0) or not np.all(np.isfinite(N / D)):
            raise NumericalError("degenerate AAA denominator")
        R = Fv.copy()
        R[mask] = N / D
        raw.append(float(np.max(np.abs(Fv - R))))
    best = np.minimum.accumulate(np.array(raw))
    return AAAFit(tuple(float(e) for e in best), tuple(raw), tuple(float(Z[i]) for i in support))


def _aaa_mp(F: Callable, Z: list, max_degree: int, ctx: PrecisionContext) -> AAAFit:
    mp = ctx.mp
    Fv = [ctx.mpf(F(z)) for z in Z]
    n = len(Z)
    mask = [True] * n
    mean = sum(Fv) / n
    R = [mean] * n
    support, raw = [], []
    for _ in range(max_degree + 1):
        j = max((i for i in range(n) if mask[i]), key=lambda i: abs(Fv[i] - R[i]))
        support.append(j)
        mask[j] = False
        rows = [i for i in range(n) if mask[i]]
        m = len(support)
        Cm = [[1 / (Z[i] - Z[s]) for s in support] for i in rows]
        if m == 1:
            w = [ctx.mpf(1)]
        else:
            A = mp.matrix([[(Fv[i] - Fv[s]) * Cm[r][c] for c, s in enumerate(support)] for r, i in enumerate(rows)])
            G = A.T * A
            evals, evecs = mp.eigsy(G)
            idx = min(range(m), key=lambda t: evals[t])
            w = [evecs[t, idx] for t in range(m)]
        R = list(Fv)
        for r, i in enumerate(rows):
            N = sum(Cm[r][c] * w[c] * Fv[s] for c, s in enumerate(support))
            D = sum(Cm[r][c] * w[c] for c in range(m))
            if D == 0:
                raise NumericalError("degenerate AAA denominator")
            R[i] = N / D
        raw.append(max(abs(a - b) for a, b in zip(Fv, R)))
    best, out = None, []
    for e in raw:
        best = e if best is None or e < best else best
        out.append(best)
    return AAAFit(tuple(out), tuple(raw), tuple(Z[i] for i in support))


def aaa_fit(target: Callable, interval: tuple, max_degree: int, ctx: PrecisionContext, samples: int | None = None) -> AAAFit:
    lo, hi = float(interval[0]), float(interval[1])
    if ctx.native:
        samples = samples or 2000
        Z = np.linspace(lo, hi, samples)
        return _aaa_numpy(target, Z, max_degree)
    samples = samples or 400
    return _aaa_mp(target, Grid(lo, hi, samples).points(ctx), max_degree, ctx)


def aaa_rational_fit(target: Callable, interval: tuple, max_degree: int, ctx: PrecisionContext) -> list:
    """Per-degree sup error on the sample set, n = 0..max_degree."""
    return list(aaa_fit(target, interval, max_degree, ctx).errors)


def fitted_decay_ratio(errors: Sequence, floor: float) -> tuple[float, tuple[int, int]]:
    """exp(slope) of the least-squares line through (n, log e_n) over entries above ``floor``."""
    idx = [i for i, e in enumerate(errors) if float(e) > floor]
    stop = 0
    while stop < len(errors) and float(errors[stop]) > floor:
        stop += 1
    if stop < 3:
        raise ValueError("need at least three errors above the floor")
    n = np.arange(stop, dtype=float)
    y = np.log(np.array([float(e) for e in errors[:stop]]))
    slope, _ = np.polyfit(n, y, 1)
    return float(math.exp(slope)), (0, stop)


def rate_rows(zeta: float, aaa_errors: Sequence, ctx: PrecisionContext, C: float = 1.0) -> list[tuple]:
    """CSV rows (n, lower_bound, aaa_error)."""
    return [(n, repr(rate_lower_bound(zeta, n, C)), repr(float(e))) for n, e in enumerate(aaa_errors)]
