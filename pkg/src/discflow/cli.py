"""Command line entry point: simulation runs plus the verification suites.

Exit status contract: 0 all assertions pass, 1 an asserted tolerance failed
(or the run aborted), 2 usage or configuration error.  Every check is
written with a kind column, ASSERT or REPORT; REPORT rows never change the
exit status -- they cover constant-dependent estimates that the underlying
theory only guarantees to be finite, not small.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig, describe, parse_config
from .greens import BallGreens, volume_potential, volume_potential_fast
from .grid import PolarGrid, save_field_block, save_field_csv
from .lame import (
    LameProblem,
    decompose_flux,
    elliptic_constant_probe,
    lame_solve,
)
from .monitors import EstimateLedger, bootstrap_check, write_diagnostics_csv
from .solver import (
    StepError,
    compute_pressure,
    init_data,
    material_derivative,
    run,
)
from . import plots
from .zlotnik import PiecewiseForcing, brute_force_ode, find_zeta_bar, fuzz_check

VERIFY_HEADER = ("test", "n", "grid", "residual", "tolerance", "kind", "pass")


def _row(test, n, grid_name, value, tolerance, passed, kind="ASSERT"):
    return {
        "test": test,
        "n": n,
        "grid": grid_name,
        "residual": value,
        "tolerance": tolerance,
        "kind": kind,
        "pass": int(bool(passed)),
    }


def _finish(rows, out_dir, csv_name):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, csv_name)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=VERIFY_HEADER)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("residual", "tolerance"):
                out[key] = "%.17g" % out[key]
            writer.writerow(out)
    failed = [r for r in rows if r["kind"] == "ASSERT" and not r["pass"]]
    for row in rows:
        status = "PASS" if row["pass"] else ("FAIL" if row["kind"] == "ASSERT" else "note")
        print(
            "%s %-6s %-28s grid=%-9s value=%.6g tol=%.6g"
            % (status, row["kind"], row["test"], row["grid"], row["residual"], row["tolerance"])
        )
    print(f"wrote {path}")
    return 1 if failed else 0


def _grid_spec(text):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a grid like 48x48, got {text!r}")


# ----------------------------------------------------------------------
# verify-greens
# ----------------------------------------------------------------------


def run_verify_greens(args):
    rows = []
    errs = {}
    for n in (24, 48):
        g = PolarGrid(n, n)
        target = 1.0 - g.rr**2
        reproduced = volume_potential(g, np.full(g.shape, -4.0))
        errs[n] = g.lq_norm(target - reproduced, 2) / g.lq_norm(target, 2)
    rows.append(_row("green_reproduction", 2, "24x24", errs[24], math.nan, True, "REPORT"))
    rows.append(_row("green_reproduction", 2, "48x48", errs[48], 0.02, errs[48] <= 0.02))
    ratio = errs[24] / errs[48]
    rows.append(_row("green_reproduction_ratio", 2, "24->48", ratio, 1.7, ratio >= 1.7))

    g = PolarGrid(32, 32)
    target = (1 - g.rr**2) * np.exp(g.x)
    fast = volume_potential_fast(g, np.exp(g.x) * (-3 - 4 * g.x - g.rr**2))
    fast_rel = g.lq_norm(target - fast, 2) / g.lq_norm(target, 2)
    rows.append(_row("fast_route_residual", 2, "32x32", fast_rel, 0.01, fast_rel <= 0.01))

    bg = BallGreens(2)
    ntheta = 512
    theta = np.arange(ntheta) * (2 * np.pi / ntheta)
    ys = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(20):
        radius = 0.8 * np.sqrt(rng.uniform())
        ang = rng.uniform(0, 2 * np.pi)
        x = radius * np.array([np.cos(ang), np.sin(ang)])
        total = np.sum(bg.poisson_kernel(x, ys)) * (2 * np.pi / ntheta)
        worst = max(worst, abs(total - 1.0))
    rows.append(_row("harmonic_measure", 2, "Ntheta=512", worst, 1e-8, worst <= 1e-8))

    for n in (2, 3):
        bgn = BallGreens(n)
        xdir = rng.standard_normal((1000, n))
        xdir /= np.linalg.norm(xdir, axis=-1, keepdims=True)
        x = xdir * (0.95 * rng.uniform(size=(1000, 1)))
        ydir = rng.standard_normal((1000, n))
        y = ydir / np.linalg.norm(ydir, axis=-1, keepdims=True)
        res = float(bgn.boundary_identity_residual(x, y).max())
        rows.append(_row("boundary_identity", n, "1000 pairs", res, 1e-12, res <= 1e-12))
    return _finish(rows, args.out, "verify_greens.csv")


# ----------------------------------------------------------------------
# verify-lame
# ----------------------------------------------------------------------


def _mms_exact(g):
    phi = 1 - g.rr**2
    rot = np.stack([-g.y * phi, g.x * phi], axis=-1)
    pot = np.stack([-4 * g.x * phi, -4 * g.y * phi], axis=-1)
    return rot + pot


def _mms_source(g, mu, lam):
    return np.stack(
        [mu * 8 * g.y + (mu + lam) * 32 * g.x, -mu * 8 * g.x + (mu + lam) * 32 * g.y],
        axis=-1,
    )


def run_verify_lame(args):
    mu, lam = 1.0, 0.7
    base = args.grid[0] if args.grid else 32
    sizes = (base, 2 * base, 4 * base)
    rows = []
    errs = []
    for n in sizes:
        g = PolarGrid(n, n)
        u = lame_solve(LameProblem(g, mu, lam, body_force=_mms_source(g, mu, lam)))
        diff = u - _mms_exact(g)
        err = np.sqrt(g.integrate(diff[..., 0] ** 2 + diff[..., 1] ** 2))
        errs.append(err)
        rows.append(_row("mms_error", 2, f"{n}x{n}", err, math.nan, True, "REPORT"))
    for k in range(2):
        order = math.log2(errs[k] / errs[k + 1])
        rows.append(
            _row(
                "mms_order",
                2,
                f"{sizes[k]}->{sizes[k + 1]}",
                order,
                1.8,
                order >= 1.8,
            )
        )
    g = PolarGrid(base, base)
    f = _mms_source(g, mu, lam)
    u = lame_solve(LameProblem(g, mu, lam, body_force=f))
    dissipation = g.integrate(
        mu * g.grad_norm_sq(u, dirichlet=True) + lam * g.divergence(u, dirichlet=True) ** 2
    )
    work = -g.integrate(np.sum(f * u, axis=-1))
    rel = abs(dissipation - work) / abs(work)
    rows.append(_row("energy_identity", 2, f"{base}x{base}", rel, 0.02, rel <= 0.02))
    return _finish(rows, args.out, "verify_lame.csv")


# ----------------------------------------------------------------------
# verify-decomposition
# ----------------------------------------------------------------------


class _LastPair:
    """Recorder keeping only the most recent (previous, next, dt) triple."""

    def __init__(self):
        self.prev = None
        self.next = None
        self.dt = None

    def start(self, state0):
        self.next = state0

    def record(self, prev, nxt, dt):
        self.prev, self.next, self.dt = prev, nxt, dt


def run_verify_decomposition(args):
    cfg = RunConfig()
    fluid = cfg.fluid
    rows = []

    g = PolarGrid(24, 24, fluid.radius)
    p_flat = compute_pressure(np.full(g.shape, fluid.rho_tilde), fluid)
    parts = decompose_flux(g, fluid.mu, fluid.lam, np.zeros(g.shape + (2,)), p_flat, np.zeros(g.shape + (2,)))
    rows.append(
        _row("constant_state_closure", 2, "24x24", parts.closure_residual, 1e-12,
             parts.closure_residual <= 1e-12)
    )

    base = args.grid[0] if args.grid else 32
    init = dataclasses.replace(cfg.init, seed=args.seed, density_amplitude=0.2, velocity_amplitude=0.2)
    residuals = []
    for n in (base, 2 * base):
        g = PolarGrid(n, n, fluid.radius)
        state0, _ = init_data(g, fluid, init)
        pair = _LastPair()
        run(g, fluid, state0, t_end=0.04, recorder=pair)
        u_dot = material_derivative(g, pair.prev, pair.next, pair.dt)
        state = pair.next
        parts = decompose_flux(
            g, fluid.mu, fluid.lam, state.u, compute_pressure(state.rho, fluid),
            state.rho[..., None] * u_dot,
        )
        residuals.append(parts.closure_residual)
        rows.append(
            _row("mid_run_closure", 2, f"{n}x{n}", parts.closure_residual, 0.05,
                 parts.closure_residual <= 0.05)
        )
    rows.append(
        _row("mid_run_closure_decreasing", 2, f"{base}->{2 * base}",
             residuals[1] / residuals[0], 1.0, residuals[1] < residuals[0])
    )
    return _finish(rows, args.out, "verify_decomposition.csv")


# ----------------------------------------------------------------------
# probe-constants
# ----------------------------------------------------------------------


def run_probe_constants(args):
    nr, ntheta = args.grid if args.grid else (32, 32)
    g = PolarGrid(nr, ntheta)
    records = elliptic_constant_probe(g, mu=1.0, lam=0.7, q=args.q, ensemble=args.ensemble, seed=args.seed)
    report = [
        {
            "q": rec.q,
            "estimate_name": rec.estimate,
            "max_ratio": rec.max_ratio,
            "ensemble_size": rec.ensemble,
            "seed": rec.seed,
            "grid": f"{nr}x{ntheta}",
            "kind": "REPORT",
        }
        for rec in records
    ]
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "probe_report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    bad = [r for r in report if not math.isfinite(r["max_ratio"])]
    for r in report:
        print("%s max ratio %.6g (q=%g, %d samples)" % (r["estimate_name"], r["max_ratio"], r["q"], r["ensemble_size"]))
    print(f"wrote {path}")
    if bad:
        print("non-finite probe ratio", file=sys.stderr)
        return 1
    return 0


# ----------------------------------------------------------------------
# zlotnik-check
# ----------------------------------------------------------------------


def run_zlotnik_check(args):
    rows = []

    zeta = find_zeta_bar(lambda y: -y, 0.0, lo=0.0, hi=50.0)
    res = brute_force_ode(lambda y: -y, 5.0, PiecewiseForcing(), 2.0)
    err = max(abs(zeta), abs(res.y_end - 5.0 * math.exp(-2.0)))
    rows.append(_row("closed_form_decay", 1, "-", err, 1e-6, err <= 1e-6))

    zeta = find_zeta_bar(lambda y: 1.0 - y, 1.0, lo=0.0, hi=50.0)
    res = brute_force_ode(lambda y: 1.0 - y, 0.3, PiecewiseForcing((), (1.0,), ()), 1.7)
    err = max(abs(zeta - 2.0), abs(res.y_end - (2.0 - 1.7 * math.exp(-1.7))))
    rows.append(_row("closed_form_ramp", 1, "-", err, 1e-6, err <= 1e-6))

    a, b = 1.8, 2.0
    for _ in range(100):
        mid = 0.5 * (a + b)
        if math.sin(mid) - 0.5 * mid > 0:
            a = mid
        else:
            b = mid
    zeta = find_zeta_bar(lambda y: math.sin(y) - 0.5 * y, 0.0, lo=0.0, hi=30.0)
    err = abs(zeta - b)
    rows.append(_row("closed_form_transcendental", 1, "-", err, 1e-6, err <= 1e-6))

    report = fuzz_check(seed=args.seed, cases=args.cases)
    rows.append(
        _row("fuzz_violations", 1, f"{args.cases} cases", float(report["violations"]),
             0.0, report["violations"] == 0)
    )
    rows.append(_row("fuzz_max_excess", 1, f"{args.cases} cases", report["max_excess"],
                     report["slack"], report["max_excess"] <= report["slack"]))

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "zlotnik_report.json")
    with open(path, "w") as fh:
        json.dump({"closed_forms": rows, "fuzz": report}, fh, indent=1)
        fh.write("\n")
    return _finish(rows, args.out, "zlotnik_check.csv")


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------


def _stacked(state):
    return np.concatenate([state.rho[..., None], state.u], axis=-1)


def run_simulate(args):
    cfg = parse_config(args.config) if args.config else RunConfig()
    if args.grid:
        cfg.nr, cfg.ntheta = args.grid
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.init = dataclasses.replace(cfg.init, seed=args.seed)
    if args.emit_plots:
        cfg.emit_plots = True

    for line in describe(cfg):
        print(line)
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)

    grid = PolarGrid(cfg.nr, cfg.ntheta, cfg.fluid.radius)
    state0, init_report = init_data(grid, cfg.fluid, cfg.init, cfg.analysis)
    print(
        "init: E0=%.6g kinetic=%.6g potential=%.6g |rho|_q0=%.6g"
        % (init_report.e0, init_report.kinetic, init_report.potential, init_report.rho_q0)
    )

    ledger = EstimateLedger(grid, cfg.fluid, cfg.analysis)

    def snapshot(state, steps, final=False):
        name = "state_final.bin" if final else f"state_{steps:06d}.bin"
        save_field_block(grid, _stacked(state), os.path.join(out_dir, name))

    aborted = ""
    try:
        result = run(
            grid,
            cfg.fluid,
            state0,
            cfg.t_end,
            dt=cfg.dt,
            cfl_safety=cfg.cfl_safety,
            recorder=ledger,
            snapshot_cb=snapshot,
            snapshot_every=cfg.checkpoint_every,
        )
        final_state, steps = result.state, result.steps
    except StepError as exc:
        aborted = str(exc)
        print(f"run aborted: {aborted}", file=sys.stderr)
        final_state, steps = None, len(ledger.rows) - 1

    write_diagnostics_csv(os.path.join(out_dir, "diagnostics.csv"), ledger.rows)
    if final_state is not None:
        save_field_csv(grid, _stacked(final_state), os.path.join(out_dir, "final_state.csv"))

    mass0 = ledger.rows[0]["mass"]
    masses = [row["mass"] for row in ledger.rows]
    drift = max(abs(m - mass0) for m in masses) / max(abs(mass0), 1e-300)
    min_rho = float(final_state.rho.min()) if final_state is not None else math.nan
    finite = final_state is not None and bool(
        np.isfinite(final_state.rho).all() and np.isfinite(final_state.u).all()
    )
    checks = [
        {"name": "completed", "kind": "ASSERT", "value": 0.0 if not aborted else 1.0,
         "threshold": 0.0, "pass": int(not aborted)},
        {"name": "fields_finite", "kind": "ASSERT", "value": float(not finite),
         "threshold": 0.0, "pass": int(finite)},
        {"name": "mass_drift_rel", "kind": "ASSERT", "value": drift, "threshold": 1e-9,
         "pass": int(drift <= 1e-9)},
        {"name": "min_density", "kind": "ASSERT", "value": min_rho, "threshold": 0.0,
         "pass": int(min_rho >= 0.0 if math.isfinite(min_rho) else False)},
    ]
    boot = bootstrap_check(ledger)
    for name, ok in boot.items():
        checks.append(
            {"name": f"bootstrap_{name}", "kind": "REPORT",
             "value": float(ok), "threshold": 1.0, "pass": int(ok)}
        )

    summary = {
        "config": describe(cfg),
        "steps": steps,
        "dt": ledger.rows[1]["t"] - ledger.rows[0]["t"] if len(ledger.rows) > 1 else 0.0,
        "t_final": ledger.rows[-1]["t"],
        "aborted": aborted,
        "ledger": ledger.summary(),
        "bootstrap": boot,
        "checks": checks,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")

    if cfg.emit_plots:
        plot_dir = os.path.join(out_dir, "plots")
        plots.render_diagnostics(plot_dir, ledger.rows)
        if final_state is not None:
            plots.render_density(plot_dir, grid, final_state.rho)
        print(f"plots under {plot_dir}")

    for chk in checks:
        status = "PASS" if chk["pass"] else ("FAIL" if chk["kind"] == "ASSERT" else "note")
        print("%s %-6s %-28s value=%.6g" % (status, chk["kind"], chk["name"], chk["value"]))
    print("steps=%d t_final=%.6g wrote %s" % (steps, summary["t_final"], out_dir))
    failed = [c for c in checks if c["kind"] == "ASSERT" and not c["pass"]]
    return 1 if failed else 0


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------


def _common(sub, out_default="out"):
    sub.add_argument("--out", default=out_default, help="output directory")
    sub.add_argument("--seed", type=int, default=0, help="rng seed")
    sub.add_argument("--grid", type=_grid_spec, default=None, metavar="NxM",
                     help="grid override, e.g. 48x48")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="discflow",
        description="Compressible flow on the disc: simulation and verification suites.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the solver with monitors")
    p.add_argument("--config", default=None, help="INI run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="init seed override")
    p.add_argument("--grid", type=_grid_spec, default=None, metavar="NxM")
    p.add_argument("--emit-plots", action="store_true", help="write series files and figures")
    p.set_defaults(func=run_simulate)

    p = sub.add_parser("verify-greens", help="Green function identity suite")
    _common(p)
    p.set_defaults(func=run_verify_greens)

    p = sub.add_parser("verify-lame", help="Lame solver manufactured-solution suite")
    _common(p)
    p.set_defaults(func=run_verify_lame)

    p = sub.add_parser("verify-decomposition", help="flux decomposition closure suite")
    _common(p)
    p.set_defaults(func=run_verify_decomposition)

    p = sub.add_parser("probe-constants", help="empirical elliptic constants (report only)")
    _common(p)
    p.add_argument("--q", type=float, default=2.0, help="Lebesgue exponent")
    p.add_argument("--ensemble", type=int, default=20, help="number of random fields")
    p.set_defaults(func=run_probe_constants)

    p = sub.add_parser("zlotnik-check", help="ODE comparison bound: closed forms plus fuzz")
    _common(p)
    p.add_argument("--cases", type=int, default=100, help="number of fuzz cases")
    p.set_defaults(func=run_zlotnik_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
