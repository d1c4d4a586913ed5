"""Precision contexts, evaluation grids, sup-norm errors and log(-log) slope fits.

A :class:`PrecisionContext` fixes the binary precision of every scalar used by
the constructions.  Contexts above 53 bits are backed by a private
``mpmath.MPContext``; the 53-bit context uses native IEEE doubles so that
large sweeps (random networks, Lipschitz scans) stay fast.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import mpmath
import numpy as np

from .errors import EvaluationError, InsufficientDataError

_MP_CONTEXTS: dict[int, mpmath.MPContext] = {}
_LOG_CTX = mpmath.MPContext()
_LOG_CTX.prec = 80


def _mp_context(bits: int) -> mpmath.MPContext:
    mp = _MP_CONTEXTS.get(bits)
    if mp is None:
        mp = mpmath.MPContext()
        mp.prec = bits
        _MP_CONTEXTS[bits] = mp
    return mp


@dataclass(frozen=True)
class PrecisionContext:
    """Binary working precision with round-to-nearest-even arithmetic."""

    bits: int = 256
    rounding: str = "nearest-even"

    def __post_init__(self):
        if not isinstance(self.bits, int) or self.bits < 53:
            raise ValueError(f"bits must be an integer >= 53, got {self.bits!r}")
        if self.rounding != "nearest-even":
            raise ValueError("only nearest-even rounding is supported")

    @property
    def native(self) -> bool:
        return self.bits == 53

    @cached_property
    def mp(self) -> mpmath.MPContext:
        return _mp_context(self.bits)

    @cached_property
    def eps(self):
        """Machine epsilon 2^(1-bits)."""
        return self.ldexp(self.mpf(1), 1 - self.bits)

    @property
    def floor(self):
        """Precision floor used to cut slope-fit windows."""
        return 4 * self.eps

    @property
    def digits(self) -> int:
        return math.ceil(self.bits * math.log10(2)) + 2

    def extra(self, guard: int = 32) -> "PrecisionContext":
        return PrecisionContext(self.bits + guard)

    # scalar construction
    def mpf(self, x):
        if self.native:
            return float(x)
        if isinstance(x, float) or isinstance(x, int):
            return self.mp.mpf(x)
        if isinstance(x, str):
            return self.mp.mpf(x)
        if isinstance(x, mpmath.mpf) or hasattr(x, "_mpf_"):
            return self.mp.mpf(x)
        return self.mp.mpf(x)

    def mpc(self, re, im=0):
        if self.native:
            return complex(float(re), float(im))
        return self.mp.mpc(re, im)

    def vector(self, xs) -> list:
        return [self.mpf(x) for x in xs]

    # constants
    @cached_property
    def pi(self):
        return math.pi if self.native else +self.mp.pi

    @cached_property
    def ln2(self):
        return math.log(2.0) if self.native else self.mp.log(2)

    # elementary functions (correctly rounded oracles in the mp case)
    def sqrt(self, x):
        return math.sqrt(x) if self.native else self.mp.sqrt(x)

    def exp(self, x):
        return math.exp(x) if self.native else self.mp.exp(x)

    def log(self, x):
        return math.log(x) if self.native else self.mp.log(x)

    def tanh(self, x):
        return math.tanh(x) if self.native else self.mp.tanh(x)

    def atanh(self, x):
        return math.atanh(x) if self.native else self.mp.atanh(x)

    def sin(self, x):
        return math.sin(x) if self.native else self.mp.sin(x)

    def cos(self, x):
        return math.cos(x) if self.native else self.mp.cos(x)

    def cbrt(self, x):
        """Real cube root (sign preserving)."""
        if self.native:
            return math.copysign(abs(x) ** (1.0 / 3.0), x)
        return self.mp.cbrt(x)

    def power(self, x, y):
        return x ** y if self.native else self.mp.power(x, y)

    def ldexp(self, x, n: int):
        return math.ldexp(x, n) if self.native else self.mp.ldexp(x, n)

    def isfinite(self, x) -> bool:
        if self.native:
            return math.isfinite(x)
        return bool(self.mp.isfinite(x))

    # complex helpers
    def csqrt(self, z):
        return cmath.sqrt(z) if self.native else self.mp.sqrt(z)

    def ccbrt(self, z):
        """Principal complex cube root."""
        if self.native:
            return cmath.exp(cmath.log(z) / 3) if z != 0 else 0j
        return self.mp.cbrt(z)

    def cabs(self, z):
        return abs(z) if self.native else self.mp.fabs(z)

    def format(self, x) -> str:
        """Decimal string with ceil(bits*log10 2)+2 significant digits."""
        if isinstance(x, complex) or hasattr(x, "_mpc_"):
            raise TypeError("format expects a real scalar")
        if isinstance(x, int):
            return str(x)
        return mpmath.nstr(self.mp.mpf(x), self.digits, min_fixed=-4, max_fixed=self.digits)


def as_float(x) -> float:
    return float(x)


@dataclass(frozen=True)
class Grid:
    """Evaluation grid on [lo, hi]; uniform grids always include both endpoints."""

    lo: float = -1.0
    hi: float = 1.0
    n: int = 2001
    spacing: str = "uniform"

    def __post_init__(self):
        if not float(self.lo) < float(self.hi):
            raise ValueError("grid requires lo < hi")
        if self.n < 2:
            raise ValueError("grid requires n >= 2")
        if self.spacing not in ("uniform", "chebyshev"):
            raise ValueError(f"unknown spacing {self.spacing!r}")

    def points(self, ctx: PrecisionContext) -> list:
        lo, hi = ctx.mpf(self.lo), ctx.mpf(self.hi)
        m = self.n - 1
        if self.spacing == "uniform":
            pts = [lo + (hi - lo) * i / m for i in range(self.n)]
        else:
            mid, half = (lo + hi) / 2, (hi - lo) / 2
            pts = [mid - half * ctx.cos(ctx.pi * i / m) for i in range(self.n)]
        pts[0], pts[-1] = lo, hi
        return pts


@dataclass(frozen=True)
class ErrorReport:
    sup_error: object
    argmax: object
    size: int = 0
    per_step_errors: tuple = ()


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    window: tuple[int, int]  # half-open index range [start, stop)


def sup_error(
    f: Callable,
    g: Callable,
    grid: Grid,
    ctx: PrecisionContext,
    size: int = 0,
    points: Sequence | None = None,
) -> ErrorReport:
    """Maximum of |f(x) - g(x)| over the grid points."""
    pts = grid.points(ctx) if points is None else points
    best, arg = None, None
    for x in pts:
        fx, gx = f(x), g(x)
        for v in (fx, gx):
            if not ctx.isfinite(v):
                raise EvaluationError(x, v)
        d = abs(fx - gx)
        if best is None or d > best:
            best, arg = d, x
    return ErrorReport(sup_error=best, argmax=arg, size=size)


def admissible_window(errors: Sequence, ctx: PrecisionContext) -> tuple[int, int]:
    """First maximal run of entries strictly between the precision floor and 1."""
    floor = ctx.floor
    ok = [floor < e < 1 for e in errors]
    try:
        start = ok.index(True)
    except ValueError:
        return (0, 0)
    stop = start
    while stop < len(ok) and ok[stop]:
        stop += 1
    return (start, stop)


def log_neg_log(e) -> float:
    v = _LOG_CTX.mpf(e)
    return float(_LOG_CTX.log(-_LOG_CTX.log(v)))


def fit_double_exp_slope(errors: Sequence, ctx: PrecisionContext) -> SlopeFit:
    """Least-squares line through (k, log(-log e_k)) over the admissible window."""
    start, stop = admissible_window(errors, ctx)
    if stop - start < 3:
        raise InsufficientDataError(
            f"need at least 3 errors in (4*eps, 1); window {start}..{stop} has {stop - start}"
        )
    k = np.arange(start, stop, dtype=float)
    y = np.array([log_neg_log(errors[i]) for i in range(start, stop)])
    slope, intercept = np.polyfit(k, y, 1)
    resid = y - (slope * k + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - float(np.sum(resid ** 2)) / ss_tot)
    return SlopeFit(float(slope), float(intercept), r2, (start, stop))


def golden_max(fun: Callable, a, b, ctx: PrecisionContext, max_iter: int | None = None):
    """Golden-section search for a maximizer of fun on [a, b]."""
    invphi = (ctx.sqrt(ctx.mpf(5)) - 1) / 2
    tol = ctx.ldexp(abs(b - a) + 0, -(ctx.bits // 2) - 2)
    if max_iter is None:
        max_iter = int(ctx.bits * 0.75) + 20
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (fc, c) if fc >= fd else (fd, d)


def refined_max(fun: Callable, pts: Sequence, ctx: PrecisionContext, candidates: int = 4):
    """Grid maximum of fun followed by golden-section refinement around the best local maxima.

    Returns (value, location).
    """
    vals = [fun(x) for x in pts]
    n = len(vals)
    peaks = [
        i for i in range(n)
        if (i == 0 or vals[i] >= vals[i - 1]) and (i == n - 1 or vals[i] >= vals[i + 1])
    ]
    peaks.sort(key=lambda i: vals[i], reverse=True)
    best_i = max(range(n), key=lambda i: vals[i])
    best, arg = vals[best_i], pts[best_i]
    for i in peaks[:candidates]:
        lo = pts[max(i - 1, 0)]
        hi = pts[min(i + 1, n - 1)]
        if not lo < hi:
            continue
        v, x = golden_max(fun, lo, hi, ctx)
        if v > best:
            best, arg = v, x
    return best, arg
