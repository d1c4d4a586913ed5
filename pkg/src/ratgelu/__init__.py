"""Rational-network and GELU-network simulation constructions in arbitrary precision."""

from .numerics import ErrorReport, Grid, PrecisionContext, SlopeFit, fit_double_exp_slope, sup_error
from .rational_core import ChebyshevExpansion, DegreeBudget, RationalFn, cheb_expand, eval_rational

__all__ = [
    "ChebyshevExpansion",
    "DegreeBudget",
    "ErrorReport",
    "Grid",
    "PrecisionContext",
    "RationalFn",
    "SlopeFit",
    "cheb_expand",
    "eval_rational",
    "fit_double_exp_slope",
    "sup_error",
]
