"""Trajectory functionals, identity residuals, and bootstrap flags.

Every update here is a pure function of the states it is handed plus the
grid and parameters, so replaying saved snapshots reproduces the whole
diagnostics stream byte for byte.
"""

import math

import numpy as np

from .lame import effective_flux, lame_operator, op_A
from .solver import (
    compute_pressure,
    energy_parts,
    fv_divergence,
    material_derivative,
)

CSV_COLUMNS = (
    "t",
    "sigma",
    "E_kin",
    "E_pot",
    "mass",
    "A1",
    "A2",
    "A3",
    "rho_q0",
    "p_dev_q1",
    "p_dev_q2",
    "p_dev_q3",
    "p_dev_q4",
    "p_dev_q6",
    "flux_direct",
    "flux_momentum",
    "lq_ode_residual",
    "bs_h_rho",
    "bs_h_a12",
    "bs_h_a3",
    "bs_c_rho",
    "bs_c_a12",
    "bs_c_a3",
)

PRESSURE_QS = (1, 2, 3, 4, 6)


def sigma_weight(t):
    """Short-time weight min(1, t)."""
    return min(1.0, float(t))


def energy(grid, state, fluid):
    kin, pot = energy_parts(grid, state, fluid)
    return {"kinetic": kin, "potential": pot, "total": kin + pot}


def potential_density_bounds_probe(grid, rho, fluid, analysis, floor=1e-10):
    """Infima of G(rho)/|rho-rt|^2 (rho <= rho_bar) and G/|rho-rt|^gamma above.

    Nodes closer to the reference density than the floor are excluded; both
    infima must come out strictly positive for the convexity bounds to hold.
    """
    from .solver import potential_density

    dev = np.abs(rho - fluid.rho_tilde)
    g_vals = potential_density(rho, fluid)
    low = (dev >= floor) & (rho <= analysis.rho_bar)
    high = (dev >= floor) & (rho > analysis.rho_bar)
    report = {
        "quadratic_inf": float(np.min(g_vals[low] / dev[low] ** 2)) if low.any() else float("nan"),
        "quadratic_count": int(low.sum()),
        "growth_inf": float(np.min(g_vals[high] / dev[high] ** fluid.gamma)) if high.any() else float("nan"),
        "growth_count": int(high.sum()),
    }
    return report


def pressure_deviation_ratios(grid, state, fluid, e0, qs=PRESSURE_QS):
    """||p - pbar||_q / e0^(1/(q*gamma)); nan (skipped) when e0 is zero."""
    out = {}
    if e0 <= 0:
        return {q: float("nan") for q in qs}
    p = compute_pressure(state.rho, fluid)
    pbar = grid.integrate(p) / grid.area
    for q in qs:
        out[q] = grid.lq_norm(p - pbar, q) / e0 ** (1.0 / (q * fluid.gamma))
    return out


def boundary_flux_direct(grid, fluid, state):
    """Wall integral of the effective viscous flux, extrapolated trace."""
    p = compute_pressure(state.rho, fluid)
    flux = effective_flux(grid, fluid.mu, fluid.lam, state.u, p)
    return grid.boundary_integral(grid.boundary_trace(flux))


def _momentum_moment(grid, state):
    return grid.integrate(state.rho * (state.u[..., 0] * grid.x + state.u[..., 1] * grid.y))


def _bulk_term(grid, fluid, state):
    p = compute_pressure(state.rho, fluid)
    return grid.integrate(state.rho * np.sum(state.u**2, axis=-1) + 2.0 * p)


def boundary_flux_via_momentum(grid, fluid, prev, nxt, dt):
    """Momentum route: d/dt of the x-weighted momentum minus the bulk term.

    The bulk integrand is averaged over the two levels (midpoint value).
    """
    rate = (_momentum_moment(grid, nxt) - _momentum_moment(grid, prev)) / dt
    return rate - 0.5 * (_bulk_term(grid, fluid, prev) + _bulk_term(grid, fluid, nxt))


def _log_power(rho, alpha):
    """rho**alpha elementwise via logs; vacuum nodes underflow to zero."""
    out = np.zeros_like(rho)
    pos = rho > 0
    out[pos] = np.exp(alpha * np.log(rho[pos]))
    return out


def weighted_Ap_ratio(grid, rho, fluid, alpha):
    """integral(rho^alpha |A(p)|) over ||rho||_{alpha+gamma}^{alpha+gamma}."""
    denom = grid.integrate(_log_power(rho, alpha + fluid.gamma))
    if denom <= 0:
        raise ValueError("density power integral vanished")
    p = compute_pressure(rho, fluid)
    a_of_p = op_A(grid, p)
    num = grid.integrate(_log_power(rho, alpha) * np.abs(a_of_p))
    return num / denom


def density_lq_ode_residual(grid, prev, nxt, dt, alpha, mode="transport"):
    """Magnitude of the renormalized-moment identity residual.

    d/dt int(rho^alpha) + (alpha-1) int(rho^alpha div u) should vanish for
    no-slip transport.  mode="transport" measures div u with the scheme's
    own face fluxes (zero wall flux), which keeps the residual at O(dt) on
    solver trajectories.  mode="pointwise" uses the collocation stencils,
    which reproduces hand values on fields that cross the wall but carries
    an O(h^2) commutator against the transport step.
    """
    mom_prev = grid.integrate(_log_power(prev.rho, alpha))
    mom_next = grid.integrate(_log_power(nxt.rho, alpha))

    def dterm(state):
        if mode == "transport":
            div = fv_divergence(grid, state.u)
        elif mode == "pointwise":
            div = grid.divergence(state.u)
        else:
            raise ValueError(f"unknown divergence mode {mode!r}")
        return grid.integrate(_log_power(state.rho, alpha) * div)

    resid = (mom_next - mom_prev) / dt + (alpha - 1.0) * 0.5 * (dterm(prev) + dterm(nxt))
    return abs(resid)


def energy_law_residual(grid, fluid, prev, nxt, dt):
    """Per-step energy budget against the solver's own viscous operator.

    Uses -u.(Lame u) at the new level for the dissipation; with the scheme's
    implicit treatment this makes the residual first order in dt on smooth
    runs, whereas quadrature of mu|grad u|^2 + lam (div u)^2 by the stencils
    adds a grid commutator that does not shrink with the step.
    """
    e_prev = sum(energy_parts(grid, prev, fluid))
    e_next = sum(energy_parts(grid, nxt, fluid))
    mat = lame_operator(grid, fluid.mu, fluid.lam)
    flat = np.concatenate([nxt.u[..., 0].ravel(), nxt.u[..., 1].ravel()])
    applied = mat @ flat
    n = grid.size
    diss = -grid.integrate(
        nxt.u[..., 0] * applied[:n].reshape(grid.shape)
        + nxt.u[..., 1] * applied[n:].reshape(grid.shape)
    )
    return (e_next - e_prev) / dt + diss


class EstimateLedger:
    """Accumulates the running functionals and one CSV row per step."""

    def __init__(self, grid, fluid, analysis):
        self.grid = grid
        self.fluid = fluid
        self.analysis = analysis
        self.e0 = 0.0
        self.a1_sup = 0.0
        self.a1_int = 0.0
        self.a2_sup = 0.0
        self.a2_int = 0.0
        self.a3_sup = 0.0
        self.a3_sigma_sup = 0.0
        self.rho_q0_sup = 0.0
        self.pressure_ratio_sup = {q: 0.0 for q in PRESSURE_QS}
        self._j_prev = None
        self._g_prev = None
        self.rows = []

    # -- functional pieces --------------------------------------------

    @property
    def a1(self):
        return self.a1_sup + self.a1_int

    @property
    def a2(self):
        return self.a2_sup + self.a2_int

    @property
    def a3(self):
        return self.a3_sup

    def _grad_energy(self, u):
        return self.grid.integrate(self.grid.grad_norm_sq(u, dirichlet=True))

    def _flags(self):
        ana = self.analysis
        a12 = self.a1 + self.a2
        if self.e0 > 0:
            thr_a12 = self.e0 ** (1.0 / (2.0 * ana.gamma))
            thr_a3 = self.e0**ana.delta0
        else:
            thr_a12 = 0.0
            thr_a3 = 0.0
        return {
            "bs_h_rho": float(self.rho_q0_sup <= 2.0 * ana.rho_bar),
            "bs_h_a12": float(a12 <= 2.0 * thr_a12),
            "bs_h_a3": float(self.a3_sigma_sup <= 2.0 * thr_a3),
            "bs_c_rho": float(self.rho_q0_sup <= 1.75 * ana.rho_bar),
            "bs_c_a12": float(a12 <= thr_a12),
            "bs_c_a3": float(self.a3_sigma_sup <= thr_a3),
        }

    def _cubic_moment(self, state):
        speed = np.sqrt(np.sum(state.u**2, axis=-1))
        return self.grid.integrate(state.rho * speed**3)

    def _common_row(self, state):
        kin, pot = energy_parts(self.grid, state, self.fluid)
        row = {
            "t": state.t,
            "sigma": sigma_weight(state.t),
            "E_kin": kin,
            "E_pot": pot,
            "mass": self.grid.integrate(state.rho),
            "rho_q0": self.grid.lq_norm(state.rho, self.analysis.q0),
            "flux_direct": boundary_flux_direct(self.grid, self.fluid, state),
        }
        ratios = pressure_deviation_ratios(self.grid, state, self.fluid, self.e0)
        for q in PRESSURE_QS:
            row[f"p_dev_q{q}"] = ratios[q]
            if not math.isnan(ratios[q]):
                self.pressure_ratio_sup[q] = max(self.pressure_ratio_sup[q], ratios[q])
        return row

    # -- public protocol ------------------------------------------------

    def start(self, state0):
        kin, pot = energy_parts(self.grid, state0, self.fluid)
        self.e0 = kin + pot
        a3_now = self._cubic_moment(state0)
        self.a3_sup = a3_now
        if state0.t <= 1.0:
            self.a3_sigma_sup = a3_now
        sig = sigma_weight(state0.t)
        self.a1_sup = sig * self._grad_energy(state0.u)
        row = self._common_row(state0)
        self.rho_q0_sup = max(self.rho_q0_sup, row["rho_q0"])
        row.update(
            {
                "A1": self.a1,
                "A2": self.a2,
                "A3": self.a3,
                "flux_momentum": float("nan"),
                "lq_ode_residual": float("nan"),
            }
        )
        row.update(self._flags())
        self.rows.append(row)
        return self

    def record(self, prev, nxt, dt):
        """Fold one consecutive pair into the running functionals."""
        grid = self.grid
        u_dot = material_derivative(grid, prev, nxt, dt)
        update_functionals(self, nxt, u_dot, dt, t_prev=prev.t)
        row = self._common_row(nxt)
        self.rho_q0_sup = max(self.rho_q0_sup, row["rho_q0"])
        row.update(
            {
                "A1": self.a1,
                "A2": self.a2,
                "A3": self.a3,
                "flux_momentum": boundary_flux_via_momentum(grid, self.fluid, prev, nxt, dt),
                "lq_ode_residual": density_lq_ode_residual(
                    grid, prev, nxt, dt, self.analysis.q0
                ),
            }
        )
        row.update(self._flags())
        self.rows.append(row)
        return self

    def summary(self):
        return {
            "e0": self.e0,
            "A1": self.a1,
            "A2": self.a2,
            "A3": self.a3,
            "A3_sigma": self.a3_sigma_sup,
            "rho_q0_sup": self.rho_q0_sup,
            "pressure_ratio_sup": dict(self.pressure_ratio_sup),
            "degenerate": self.e0 <= 0,
            "flags": self._flags(),
        }


def update_functionals(ledger, state, u_dot, dt, t_prev=None, grad_u_dot_available=True):
    """Sup- and trapezoid-updates of A1, A2, A3 for the step ending at state.

    The sigma weight for the time integrals is taken at the step midpoint;
    the first step reuses the current integrand for the missing older one.
    """
    grid = ledger.grid
    t_next = state.t
    if t_prev is None:
        t_prev = t_next - dt
    sig_next = sigma_weight(t_next)
    sig_mid = sigma_weight(0.5 * (t_prev + t_next))

    ledger.a1_sup = max(ledger.a1_sup, sig_next * ledger._grad_energy(state.u))
    j_now = grid.integrate(state.rho * np.sum(u_dot**2, axis=-1))
    if grad_u_dot_available:
        g_now = grid.integrate(grid.grad_norm_sq(u_dot, dirichlet=True))
    else:
        g_now = ledger._g_prev if ledger._g_prev is not None else 0.0
    j_old = ledger._j_prev if ledger._j_prev is not None else j_now
    g_old = ledger._g_prev if ledger._g_prev is not None else g_now
    ledger.a1_int += dt * sig_mid * 0.5 * (j_old + j_now)
    ledger.a2_int += dt * sig_mid**3 * 0.5 * (g_old + g_now)
    ledger.a2_sup = max(ledger.a2_sup, sig_next**3 * j_now)
    a3_now = ledger._cubic_moment(state)
    ledger.a3_sup = max(ledger.a3_sup, a3_now)
    if t_next <= 1.0 + 1e-12:
        ledger.a3_sigma_sup = max(ledger.a3_sigma_sup, a3_now)
    ledger._j_prev = j_now
    ledger._g_prev = g_now
    return ledger


def bootstrap_check(ledger, analysis=None):
    """Six 0/1 flags: three bootstrap hypotheses, three conclusions."""
    del analysis  # thresholds live on the ledger's analysis parameters
    return ledger._flags()


def _fmt(value):
    return "%.17g" % value


def write_diagnostics_csv(path, rows):
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in CSV_COLUMNS) + "\n")


def replay(grid, fluid, analysis, states, dts):
    """Rebuild the ledger from saved consecutive states; purity check."""
    ledger = EstimateLedger(grid, fluid, analysis)
    ledger.start(states[0])
    for prev, nxt, dt in zip(states[:-1], states[1:], dts):
        ledger.record(prev, nxt, dt)
    return ledger
