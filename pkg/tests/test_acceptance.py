"""Acceptance suite: one PASS/FAIL line per criterion, each at its stated tolerance.

Run directly (``python tests/test_acceptance.py``) or through pytest.
"""

import functools
import math
import sys
import time

import numpy as np
import pytest

from ratgelu import bounds, cli, gelu_gadgets, network_lift, norm_rational, rational_blocks
from ratgelu.errors import BoundViolation
from ratgelu.gelu_gadgets import GadgetConfig, calibrate_J, mult_block, square_block, square_error
from ratgelu.numerics import Grid, PrecisionContext, fit_double_exp_slope, sup_error
from ratgelu.rational_core import cheb_expand, chebyshev_sum, eval_rational, truncation_bound

NATIVE = PrecisionContext(53)
LN2, LN3 = math.log(2), math.log(3)

CRITERIA = []


def criterion(number, title, budget_s):
    def register(fn):
        CRITERIA.append((number, title, budget_s, fn))
        return fn

    return register


def _fail(msgs, cond, msg):
    if not cond:
        msgs.append(msg)


@criterion(1, "doubly exponential slopes at 1024 bits", 60)
def check_slopes():
    ctx = PrecisionContext(1024)
    traces = cli.convergence_traces(1024)
    bands = {"pth_root": (LN2, 0.07), "agm_log": (LN2, 0.07), "halley_tanh": (LN3, 0.12)}
    msgs, parts = [], []
    for name, (centre, half) in bands.items():
        slope = fit_double_exp_slope(traces[name], ctx).slope
        parts.append(f"{name}={slope:.4f}")
        _fail(msgs, abs(slope - centre) <= half, f"{name} slope {slope:.4f} outside {centre:.4f}+-{half}")
    return msgs, ", ".join(parts)


@criterion(2, "GELU rational block sup error <= eps at 256 bits", 120)
def check_gelu_block():
    ctx = PrecisionContext(256)
    grid = Grid(-1.0, 1.0, 2001)
    pts = grid.points(ctx)
    oracle = {id(x): gelu_gadgets.gelu(x, ctx) for x in pts}
    msgs, parts = [], []
    for eps in (1e-6, 1e-9, 1e-12):
        block = rational_blocks.gelu_rational_block(None, eps, ctx)
        err = sup_error(block.value_fn, lambda x: oracle[id(x)], grid, ctx, points=pts).sup_error
        parts.append(f"eps={eps:g}: {float(err):.2e}")
        _fail(msgs, err <= eps, f"eps={eps:g} sup error {float(err):.3e}")
    return msgs, "; ".join(parts)


@criterion(3, "Chebyshev truncation bound for 1/(1+x^2)", 10)
def check_truncation():
    ctx = PrecisionContext(128)
    r, rho = cli.lorentzian()
    grid = Grid(-1.0, 1.0, 2001)
    pts = grid.points(ctx)
    target = {id(x): eval_rational(r, x, ctx) for x in pts}
    msgs, parts = [], []
    for d in (5, 10, 15, 20):
        e = cheb_expand(r, d, ctx, rho=rho)
        err = sup_error(lambda x: chebyshev_sum(e.coeffs, x, ctx), lambda x: target[id(x)], grid, ctx, points=pts).sup_error
        bound = truncation_bound(d, rho, e.m_rho)
        parts.append(f"d={d}: {float(err) / bound:.3f} of bound")
        _fail(msgs, err <= bound, f"d={d}: {float(err):.3e} > {bound:.3e}")
    return msgs, "; ".join(parts)


@criterion(4, "square/product gadget bounds and per-J ratio", 60)
def check_gadgets():
    ctx = PrecisionContext(128)
    msgs, parts = [], []
    for delta in (1e-4, 1e-8):
        J = calibrate_J(delta, 2.0, ctx)
        for B in (1, 4):
            cfg = GadgetConfig(B, delta, J)
            plan = cfg.plan(ctx)
            sq = max(abs(square_block(cfg, plan, u, ctx) - u * u) for u in Grid(-B, B, 201).points(ctx))
            _fail(msgs, sq <= delta * B * B, f"square delta={delta:g} B={B}: {float(sq):.3e}")
            mu = max(
                abs(mult_block(cfg, a, b, ctx) - a * b)
                for a in Grid(-1, 1, 21).points(ctx)
                for b in Grid(-B, B, 21).points(ctx)
            )
            _fail(msgs, mu <= 1.5 * delta * cfg.B_prime ** 2, f"mult delta={delta:g} B={B}: {float(mu):.3e}")
            parts.append(f"d={delta:g},B={B}: sq {float(sq / (delta * B * B)):.2g}, mult {float(mu / (1.5 * delta * cfg.B_prime ** 2)):.2g}")
    gamma2 = 4.0
    floor = float(ctx.eps) * 1e6
    errs = [square_error(J, 2.0, ctx) for J in range(0, 17)]
    ratios = [float(a / b) for a, b in zip(errs, errs[1:]) if float(b) > floor]
    bad = [q for q in ratios if not gamma2 / 2 <= q <= 2 * gamma2]
    parts.append("per-J ratios " + ", ".join(f"{q:.3g}" for q in ratios[:6]))
    _fail(msgs, not bad and ratios, f"{len(bad)}/{len(ratios)} per-J ratios outside [{gamma2 / 2}, {2 * gamma2}]")
    return msgs, "; ".join(parts)


@criterion(5, "inexact Clenshaw pipeline for 1/(1+x^2)", 180)
def check_pipeline():
    ctx = PrecisionContext(128)
    r, rho = cli.lorentzian()
    grid = Grid(-1.0, 1.0, 2001)
    msgs, parts, sizes = [], [], []
    epsilons = (1e-2, 1e-3, 1e-4)
    for eps in epsilons:
        _, rep = gelu_gadgets.approx_rational_by_gelu(r, rho, None, eps, ctx, grid)
        sizes.append(rep.size)
        parts.append(f"eps={eps:g}: err {float(rep.sup_error):.2e}, size {rep.size}")
        _fail(msgs, rep.sup_error <= eps, f"eps={eps:g} sup error {float(rep.sup_error):.3e}")
        _fail(msgs, rep.range_ok, f"eps={eps:g} range invariant: max state {rep.max_state:.3g} > B={rep.B}")
    x = np.log([math.log(1 / e) for e in epsilons])
    slope = float(np.polyfit(x, np.log(sizes), 1)[0])
    parts.append(f"log-log size slope {slope:.3f}")
    _fail(msgs, slope <= 2.3, f"size slope {slope:.3f} > 2.3")
    return msgs, "; ".join(parts)


@criterion(6, "pole geometry and AAA rate bound", 60)
def check_poles_and_rate():
    ctx = PrecisionContext(256)
    tol = 2.0 ** -128
    msgs = []
    reports = bounds.find_gelu_poles(range(0, 3), ctx)
    worst = {}
    for rep in reports:
        for key, val in bounds.pole_checks(rep, ctx).items():
            worst[key] = max(worst.get(key, 0.0), float(val))
    for key, val in worst.items():
        _fail(msgs, val <= tol, f"{key} defect {val:.3e} > 2^-128")
    zeta = float(reports[0].zeta_eff)
    theory = bounds.RateBound(zeta).ratio
    fit = bounds.aaa_fit(lambda x: gelu_gadgets.gelu(x, NATIVE), (-1.0, 1.0), cli.AAA_DEGREE, NATIVE)
    fitted, window = bounds.fitted_decay_ratio(fit.errors, 1e3 * float(NATIVE.eps))
    _fail(msgs, fitted >= theory / 2,
          f"AAA per-degree ratio {fitted:.4f} decays faster than theory {theory:.4f} / 2")
    detail = (f"max defect {max(worst.values()):.1e}; zeta_eff={zeta:.5f}; AAA ratio {fitted:.4f} "
              f"over degrees {window[0]}..{window[1] - 1} vs theory {theory:.4f}")
    return msgs, detail


@criterion(7, "curvature separation chain and GELU Lipschitz bounds", 120)
def check_curvature():
    ctx = PrecisionContext(128)
    msgs = []
    for eps in (0.002, 0.01, 0.03, 0.07, 0.12):
        for frac in (0.2, 0.4, 0.6, 0.8, 0.95):
            eta = frac * eps ** 0.25
            h2 = ctx.mpf(eta) ** 2

            # a premise-satisfying perturbation of R_eta
            def f(x, h2=h2, eps=eps):
                return 1 / (x * x + h2) + ctx.mpf(eps) / 2 * ctx.sin(7 * x)

            chain = bounds.curvature_chain(f, eps, eta, ctx)
            _fail(msgs, chain.premise and chain.holds, f"chain fails at eps={eps}, eta={eta:.4f}")
    C = bounds.curvature_constant(NATIVE)
    rng = np.random.default_rng(2024)
    grid = Grid(-1.0, 1.0, 2001)
    worst = 0.0
    for _ in range(50):
        depth = int(rng.integers(1, 3))
        widths = tuple(int(w) for w in rng.integers(1, 5, size=depth))
        net = bounds.random_gelu_net(widths, rng, B=1.0)
        meas = bounds.measure_curvature(net, grid, NATIVE, B=1.0)
        upper = bounds.CurvatureBudget(C, 1.0, widths).upper
        worst = max(worst, meas / upper)
        _fail(msgs, meas <= upper, f"net {widths}: curvature {meas:.4g} > {upper:.4g}")
    g1 = float(bounds.lipschitz_sup("G'", (-1.0, 1.0), ctx))
    g20 = float(bounds.lipschitz_sup("G'", (-20.0, 20.0), ctx))
    _fail(msgs, g1 <= 1.083, f"sup|G'| on [-1,1] = {g1:.6f} > 1.083")
    _fail(msgs, g20 <= 1.129, f"sup|G'| on [-20,20] = {g20:.6f} > 1.129")
    return msgs, f"25 chains; worst curvature/upper {worst:.3g}; sup|G'| {g1:.5f} / {g20:.5f}; C={C:.5f}"


@criterion(8, "network lift deviation within S_M(L) tol", 120)
def check_lift():
    eps = 1e-8
    grid = Grid(-1.0, 1.0, 101)
    block = rational_blocks.gelu_rational_block(None, eps, NATIVE)
    block = rational_blocks.BlockResult(functools.lru_cache(maxsize=None)(block.value_fn), block.size)
    L_gelu = float(bounds.lipschitz_sup("G'", (-1.0, 1.0), NATIVE))
    msgs, worst, cases = [], {}, 0
    for direction in ("rational", "gelu"):
        for M in (1, 2, 3):
            for seed in range(50):
                try:
                    _, res = cli.lift_case(M, seed, direction, eps, grid, NATIVE, block, L_gelu)
                except BoundViolation as exc:
                    msgs.append(f"{direction} M={M} seed={seed}: {exc}")
                    continue
                cases += 1
                worst[direction] = max(worst.get(direction, 0.0), res.measured / res.bound)
    ctx = PrecisionContext(256)
    for L in (0.5, 1.0, L_gelu, 2.0):
        for M in range(1, 9):
            final = network_lift.LiftBudget.uniform(eps, L, M, ctx).final_bound(ctx)
            _fail(msgs, abs(final - ctx.mpf(eps)) <= ctx.eps * ctx.mpf(eps), f"E_M != eps at L={L}, M={M}")
    parts = ", ".join(f"{k} worst measured/bound {v:.4g}" for k, v in worst.items())
    return msgs, f"{cases} cases; {parts}"


@criterion(9, "gauge identity, flatness and coefficient gradients", 30)
def check_gauge():
    ctx = PrecisionContext(256)
    grid = Grid(-1.0, 1.0, 101)
    msgs = []
    worst_ulps, worst_flat, worst_fd = 0.0, 0.0, 0.0
    for seed in range(3):
        theta = norm_rational.random_safe_rational(np.random.default_rng(seed), 5, 4)
        for eta in cli.GAUGE_ETAS:
            worst_ulps = max(worst_ulps, float(cli.gauge_identity_ulps(theta, eta, grid, ctx)))
        flat = norm_rational.gauge_flatness_probe(theta, cli.GAUGE_GAMMA, grid, ctx, cli.GAUGE_MU, cli.GAUGE_SIGMA)
        worst_flat = max(worst_flat, float(flat))
        for z in cli.GRADIENT_PROBES:
            try:
                norm_rational.coeff_gradients(theta, z, ctx).check_bounds(ctx)
            except BoundViolation as exc:
                msgs.append(f"seed={seed} z={z}: {exc}")
            err = norm_rational.gradient_fd_error(theta, z, ctx)
            if err is not None:
                worst_fd = max(worst_fd, float(err))
    _fail(msgs, worst_ulps <= 8, f"gauge identity {worst_ulps:.2f} ulps > 8")
    _fail(msgs, worst_flat <= 1e-70, f"flatness {worst_flat:.3e} > 1e-70")
    _fail(msgs, worst_fd <= 1e-6, f"gradient FD relative error {worst_fd:.3e} > 1e-6")
    return msgs, f"identity {worst_ulps:.2f} ulps; flatness {worst_flat:.2e}; FD rel {worst_fd:.2e}"


@criterion(10, "byte-identical CSV across two runs", None)
def check_determinism():
    msgs = []
    for command in cli.COMMANDS:
        first, second = (cli.run(cli.build_config({"command": command})).to_csv() for _ in range(2))
        _fail(msgs, first.encode() == second.encode(), f"{command} output differs between runs")
    return msgs, f"{len(cli.COMMANDS)} commands compared"


def evaluate(number):
    _, title, budget, fn = next(c for c in CRITERIA if c[0] == number)
    t0 = time.perf_counter()
    msgs, detail = fn()
    elapsed = time.perf_counter() - t0
    if budget is not None and elapsed > budget:
        msgs.append(f"runtime {elapsed:.1f}s over budget {budget}s")
    status = "FAIL" if msgs else "PASS"
    line = f"{status} criterion {number}: {title} [{elapsed:.1f}s] {detail}"
    if msgs:
        line += " | " + "; ".join(msgs)
    return not msgs, line


@pytest.mark.parametrize("number", [c[0] for c in CRITERIA])
def test_criterion(number, capsys):
    ok, line = evaluate(number)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(c[0]) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
