"""CSV-emitting experiment runner.

    ratgelu --command convergence --bits 1024 --out conv.csv
    ratgelu --config run.cfg --epsilon 1e-9

Config files hold ``key = value`` lines (``#`` starts a comment); flags override them.
Exit status is 0 only when every embedded invariant held; otherwise the failed checks
are printed to stderr and the status is 1.
"""

from __future__ import annotations

import argparse
import csv
import functools
import io
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import bounds, gelu_gadgets, network_lift, norm_rational, rational_blocks
from .errors import BoundViolation, InsufficientDataError
from .numerics import Grid, PrecisionContext, fit_double_exp_slope, log_neg_log, sup_error
from .rational_core import RationalFn

COMMANDS = ("convergence", "gelu-approx", "rational-approx", "bounds", "lift", "gauge")

# per-command defaults for fields left unset
_DEFAULTS = {
    "convergence": {"bits": 1024, "epsilon": 1e-6, "grid_points": 201},
    "gelu-approx": {"bits": 256, "epsilon": 1e-12, "grid_points": 2001},
    "rational-approx": {"bits": 128, "epsilon": 1e-3, "grid_points": 2001},
    "bounds": {"bits": 256, "epsilon": 1e-6, "grid_points": 2001},
    "lift": {"bits": 256, "epsilon": 1e-8, "grid_points": 201},
    "gauge": {"bits": 256, "epsilon": 1e-6, "grid_points": 101},
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    bits: int = 256
    epsilon: float = 1e-6
    grid_points: int = 2001
    seed: int = 0
    out_path: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"command must be one of {', '.join(COMMANDS)}")
        if not isinstance(self.bits, int) or self.bits < 53:
            raise ValueError("bits must be an integer >= 53")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")

    @property
    def ctx(self) -> PrecisionContext:
        return PrecisionContext(self.bits)


@dataclass
class RunOutput:
    header: tuple
    rows: list
    failures: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()


def _sci(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- convergence


def convergence_blocks(bits: int) -> dict:
    """Iteration counts deep enough to reach the precision floor at ``bits``."""
    ctx = PrecisionContext(bits)
    depth = bits * math.log(2)
    root_iters = math.ceil(math.log2(depth / 2.4)) + 2
    halley_iters = math.ceil(math.log(depth / 7.0, 3)) + 2
    agm_cfg = rational_blocks.AGMLogConfig(
        m_ell=math.ceil(math.sqrt(depth / 2)) + 4,
        l_log=math.ceil(math.log2(bits)) + 2,
        sqrt_tol=ctx.ldexp(ctx.mpf(1), -(bits + 76)),
    )
    return {
        "pth_root": lambda: rational_blocks.pth_root_block(
            rational_blocks.RootIterConfig(2, 0.5, root_iters), ctx
        ).trace,
        "agm_log": lambda: rational_blocks.agm_log_result(agm_cfg, ctx).trace,
        "halley_tanh": lambda: rational_blocks.halley_tanh_block(
            rational_blocks.HalleyConfig(halley_iters), ctx
        ).trace,
    }


def convergence_traces(bits: int) -> dict:
    return {name: tuple(make()) for name, make in convergence_blocks(bits).items()}


def run_convergence(cfg: RunConfig) -> RunOutput:
    ctx = cfg.ctx
    rows, failures = [], []
    for name, trace in convergence_traces(cfg.bits).items():
        try:
            fit = fit_double_exp_slope(trace, ctx)
            slope = f"{fit.slope:.6f}"
        except InsufficientDataError as exc:
            # a short window is a property of the precision, not a broken invariant
            print(f"ratgelu: {name}: no slope at {cfg.bits} bits: {exc}", file=sys.stderr)
            slope = ""
        for k, e in enumerate(trace):
            lnl = f"{log_neg_log(e):.10f}" if 0 < e < 1 else ""
            rows.append((name, k, ctx.format(e), lnl, slope))
    return RunOutput(("block", "k", "error", "log_neg_log_error", "slope_fit"), rows, failures)


# ---------------------------------------------------------------- approximation


def run_gelu_approx(cfg: RunConfig) -> RunOutput:
    ctx = cfg.ctx
    block = rational_blocks.gelu_rational_block(None, cfg.epsilon, ctx)
    rep = sup_error(block.value_fn, lambda x: gelu_gadgets.gelu(x, ctx), Grid(-1.0, 1.0, cfg.grid_points), ctx)
    failures = []
    if not rep.sup_error <= cfg.epsilon:
        failures.append(f"gelu block sup_error {float(rep.sup_error):.3e} > epsilon {cfg.epsilon:.3e}")
    row = (
        _sci(cfg.epsilon), cfg.bits, block.size, block.info["halley_iterations"],
        ctx.format(rep.sup_error), ctx.format(rep.argmax),
    )
    return RunOutput(("epsilon", "bits", "size", "halley_iterations", "sup_error", "argmax"), [row], failures)


def lorentzian() -> tuple[RationalFn, float]:
    """1/(1+x^2) and the Bernstein parameter of its poles at +-i."""
    return RationalFn((1,), (1, 0, 1)), 1 + math.sqrt(2)


def run_rational_approx(cfg: RunConfig) -> RunOutput:
    ctx = cfg.ctx
    r, rho = lorentzian()
    _, rep = gelu_gadgets.approx_rational_by_gelu(r, rho, None, cfg.epsilon, ctx, Grid(-1.0, 1.0, cfg.grid_points))
    failures = []
    if not rep.sup_error <= cfg.epsilon:
        failures.append(f"pipeline sup_error {float(rep.sup_error):.3e} > epsilon {cfg.epsilon:.3e}")
    if not rep.range_ok:
        failures.append(f"range invariant |b_k| <= B broken: max state {rep.max_state:.3g} > B={rep.B}")
    if rep.max_cubic > 0.5:
        failures.append(f"small-argument regime left: max |P(z)| = {rep.max_cubic:.3g}")
    row = gelu_gadgets.pipeline_rows([rep], ctx)[0] + (_sci(rep.max_state), _sci(rep.max_cubic))
    header = ("epsilon", "d", "J", "delta", "B", "size", "sup_error", "max_state", "max_cubic")
    return RunOutput(header, [row], failures)


# ---------------------------------------------------------------- bounds


AAA_DEGREE = 12


def run_bounds(cfg: RunConfig) -> RunOutput:
    ctx = cfg.ctx
    failures = []
    reports = bounds.find_gelu_poles(range(0, 3), ctx)
    tol = ctx.ldexp(ctx.mpf(1), -(ctx.bits // 2))
    for rep in reports:
        for key, val in bounds.pole_checks(rep, ctx).items():
            scale = 1 if key != "vieta_product" else 100
            if val > tol * scale:
                failures.append(f"pole branch k={rep.k_index}: {key} defect {float(val):.3e}")
    zeta = float(reports[0].zeta_eff)
    native = PrecisionContext(53)
    fit = bounds.aaa_fit(lambda x: gelu_gadgets.gelu(x, native), (-1.0, 1.0), AAA_DEGREE, native)
    rows = [("pole", k, re, im, dist, "", "") for k, re, im, dist in bounds.pole_rows(reports, ctx)]
    for n, lb, ae in bounds.rate_rows(zeta, fit.errors, ctx):
        rows.append(("rate", n, "", "", "", lb, ae))
    header = ("record", "index", "re", "im", "distance", "lower_bound", "aaa_error")
    return RunOutput(header, rows, failures)


# ---------------------------------------------------------------- lift


LIFT_SEEDS = 3


def lift_networks(M: int, seed: int, direction: str, ctx: PrecisionContext):
    """Random width-4 (rational) or width-3 (GELU) network of depth M."""
    rng = np.random.default_rng([seed, M, 0 if direction == "rational" else 1])
    if direction == "rational":
        return network_lift.random_network([4] * (M - 1), rng, network_lift.rational_factory(PrecisionContext(53)))
    return network_lift.random_network([3] * (M - 1), rng, network_lift.gelu_factory(ctx))


def lift_case(M: int, seed: int, direction: str, epsilon: float, grid: Grid, ctx: PrecisionContext,
              gelu_block=None, L_gelu=None):
    net = lift_networks(M, seed, direction, ctx)
    if direction == "rational":
        def surrogate(act):
            return lambda x: act(x) + epsilon * math.sin(10 * x)

        res = network_lift.simulate_substitution(net, "rational", surrogate, epsilon, grid, PrecisionContext(53))
    else:
        res = network_lift.simulate_substitution(
            net, "gelu", lambda act: gelu_block.value_fn, epsilon, grid, ctx, L=L_gelu
        )
    return net, res


def run_lift(cfg: RunConfig) -> RunOutput:
    ctx = cfg.ctx
    grid = Grid(-1.0, 1.0, cfg.grid_points)
    block = rational_blocks.gelu_rational_block(None, cfg.epsilon, ctx)
    # the same shared block is probed at the same points by every case
    block = rational_blocks.BlockResult(functools.lru_cache(maxsize=None)(block.value_fn), block.size,
                                        block.trace, block.info)
    L_gelu = float(bounds.lipschitz_sup("G'", (-1.0, 1.0), PrecisionContext(53)))
    rows, failures = [], []
    for direction in ("rational", "gelu"):
        for M in (1, 2, 3):
            for s in range(LIFT_SEEDS):
                seed = cfg.seed + s
                try:
                    net, res = lift_case(M, seed, direction, cfg.epsilon, grid, ctx, block, L_gelu)
                except BoundViolation as exc:
                    failures.append(f"lift {direction} M={M} seed={seed}: {exc}")
                    continue
                rows.append(network_lift.lift_rows([(seed, net, res)])[0] + (direction,))
    budget = network_lift.LiftBudget.uniform(cfg.epsilon, L_gelu, 3, ctx)
    final = budget.final_bound(ctx)
    if abs(final - ctx.mpf(cfg.epsilon)) > ctx.eps * ctx.mpf(cfg.epsilon):
        failures.append(f"uniform budget identity: E_M = {final} != epsilon")
    header = ("seed", "M", "k", "L_estimate", "tol", "measured", "bound", "direction")
    return RunOutput(header, rows, failures)


# ---------------------------------------------------------------- gauge


GAUGE_GAMMA, GAUGE_MU, GAUGE_SIGMA = 1.1, 0.2, 1.3
GAUGE_ETAS = (-1.0, -0.3, 0.3, 1.0)
GRADIENT_PROBES = (-1.2, 0.3, 2.0)


def gauge_identity_ulps(theta, eta, grid: Grid, ctx: PrecisionContext):
    """Max deviation, in ulps of max(1, |output|), between the two gauge paths."""
    ge, te = norm_rational.scale_gauge(theta, GAUGE_GAMMA, eta, ctx)
    worst = ctx.mpf(0)
    for u in grid.points(ctx):
        base = norm_rational.gauge_output(theta, GAUGE_GAMMA, u, GAUGE_MU, GAUGE_SIGMA, ctx)
        moved = norm_rational.gauge_output(te, ge, u, GAUGE_MU, GAUGE_SIGMA, ctx)
        worst = max(worst, abs(moved - base) / (ctx.eps * max(1, abs(base))))
    return worst


def flatness_tolerance(ctx: PrecisionContext):
    return ctx.mpf("1e-70") if ctx.bits >= 256 else 64 * ctx.eps


def run_gauge(cfg: RunConfig) -> RunOutput:
    ctx = cfg.ctx
    theta = norm_rational.random_safe_rational(np.random.default_rng(cfg.seed), 5, 4)
    grid = Grid(-1.0, 1.0, cfg.grid_points)
    rows, failures = [], []
    for eta in GAUGE_ETAS:
        ulps = gauge_identity_ulps(theta, eta, grid, ctx)
        rows.append(("gauge_identity", repr(eta), "ulps", ctx.format(ulps), "8", ctx.format(8 - ulps)))
        if ulps > 8:
            failures.append(f"gauge identity at eta={eta}: {float(ulps):.2f} ulps > 8")
    tol = flatness_tolerance(ctx)
    for name, probe in (("analytic", norm_rational.gauge_flatness_probe), ("finite_difference", norm_rational.gauge_flatness_fd)):
        mag = probe(theta, GAUGE_GAMMA, grid, ctx, GAUGE_MU, GAUGE_SIGMA)
        if name == "finite_difference":
            ftol = tol if ctx.bits >= 256 else ctx.mpf("1e-8")
        else:
            ftol = tol
        rows.append(("flatness", "", name, ctx.format(mag), ctx.format(ftol), ctx.format(ftol - mag)))
        if mag > ftol:
            failures.append(f"gauge flatness ({name}) {float(mag):.3e} > {float(ftol):.3e}")
    try:
        for z, coef, val, bound, margin in norm_rational.gradient_rows(theta, GRADIENT_PROBES, ctx):
            rows.append(("gradient_bound", z, coef, val, bound, margin))
    except BoundViolation as exc:
        failures.append(f"gradient bound: {exc}")
    fd_tol = 1e-6
    for z in GRADIENT_PROBES:
        err = norm_rational.gradient_fd_error(theta, z, ctx)
        if err is None:
            continue
        rows.append(("gradient_fd", repr(z), "relative_error", ctx.format(err), repr(fd_tol), ctx.format(fd_tol - err)))
        if err > fd_tol:
            failures.append(f"gradient finite difference at z={z}: relative error {float(err):.3e}")
    header = ("record", "z", "name", "value", "bound", "margin")
    return RunOutput(header, rows, failures)


RUNNERS: dict[str, Callable[[RunConfig], RunOutput]] = {
    "convergence": run_convergence,
    "gelu-approx": run_gelu_approx,
    "rational-approx": run_rational_approx,
    "bounds": run_bounds,
    "lift": run_lift,
    "gauge": run_gauge,
}


# ---------------------------------------------------------------- config plumbing


def read_config_file(path: str) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "out":
            key = "out_path"
        out[key] = val
    return out


_CASTS = {"command": str, "bits": int, "epsilon": float, "grid_points": int, "seed": int, "out_path": str}


def build_config(flags: dict, file_values: dict | None = None) -> RunConfig:
    merged = {}
    for key, val in (file_values or {}).items():
        if key not in _CASTS:
            raise ValueError(f"unknown config key {key!r}")
        merged[key] = _CASTS[key](val)
    merged.update({k: v for k, v in flags.items() if v is not None})
    command = merged.get("command")
    if command is None:
        raise ValueError("no command given (use --command or a config file)")
    if command not in _DEFAULTS:
        raise ValueError(f"command must be one of {', '.join(COMMANDS)}")
    for key, val in _DEFAULTS[command].items():
        merged.setdefault(key, val)
    return RunConfig(**merged)


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ratgelu", description="Rational/GELU approximation experiments (CSV output).")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--bits", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_path")
    p.add_argument("--config")
    return p


def run(cfg: RunConfig) -> RunOutput:
    return RUNNERS[cfg.command](cfg)


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    flags = vars(args)
    cfg_path = flags.pop("config")
    try:
        cfg = build_config(flags, read_config_file(cfg_path) if cfg_path else None)
    except (ValueError, OSError) as exc:
        print(f"ratgelu: {exc}", file=sys.stderr)
        return 2
    out = run(cfg)
    text = out.to_csv()
    if cfg.out_path:
        try:
            with open(cfg.out_path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"ratgelu: cannot write {cfg.out_path}: {exc}", file=sys.stderr)
            return 2
    else:
        sys.stdout.write(text)
    for msg in out.failures:
        print(f"FAILED invariant: {msg}", file=sys.stderr)
    return 1 if out.failures else 0


if __name__ == "__main__":
    sys.exit(main())
