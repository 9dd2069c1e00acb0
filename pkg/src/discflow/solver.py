"""Semi-implicit finite-volume scheme for isentropic flow on the disc.

Density moves by conservative first-order upwinding on the polar cells, so
total mass telescopes to roundoff and nonnegativity holds under the CFL
bound.  Momentum is updated in conservative form with explicit convection
and pressure gradient, then a backward viscous solve with the no-slip Lame
operator.  Given the transport velocity and densities of a step, the whole
momentum update is linear in the transported field; the superposition probe
(u against w1 + w2) leans on that.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .lame import lame_operator


class StepError(RuntimeError):
    """A time step left the admissible region (CFL, vacuum, NaN)."""


@dataclass(frozen=True)
class FluidParams:
    """Barotropic fluid: p = a rho^gamma, shear mu, bulk-ish lambda."""

    mu: float = 1.0
    lam: float = 0.0
    a: float = 1.0
    gamma: float = 1.5
    rho_tilde: float = 1.0
    radius: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.mu + self.lam < 0:
            raise ValueError("mu + lam must be nonnegative")
        if self.a < 0:
            raise ValueError("a must be nonnegative")
        if not 1.0 < self.gamma <= 2.0:
            raise ValueError("gamma must lie in (1, 2]")
        if self.rho_tilde < 0:
            raise ValueError("reference density must be nonnegative")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def p_tilde(self):
        return self.a * self.rho_tilde**self.gamma

    def sound_speed(self, rho):
        return np.sqrt(self.a * self.gamma * np.maximum(rho, 0.0) ** (self.gamma - 1.0))


@dataclass(frozen=True)
class AnalysisParams:
    """Exponents and thresholds used by the a-priori estimate monitors."""

    gamma: float
    beta: float = 1.0
    capital_m: float = 10.0
    rho_bar: float = 2.0
    rho_tilde: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.beta <= 1.0:
            raise ValueError("beta must lie in (1/2, 1]")
        if not 1.0 < self.gamma < 2.0:
            raise ValueError("gamma must lie in (1, 2) for the estimate exponents")
        if self.capital_m <= 0:
            raise ValueError("M must be positive")
        if self.rho_bar < self.rho_tilde + 1.0:
            raise ValueError("rho_bar must be at least rho_tilde + 1")

    @property
    def q0(self):
        return 12.0 * self.gamma / (self.gamma - 1.0)

    @property
    def delta0(self):
        return (2.0 * self.beta - 1.0) / (3.0 * self.beta)

    @classmethod
    def for_fluid(cls, fluid, beta=1.0, capital_m=10.0, rho_bar=None):
        if rho_bar is None:
            rho_bar = fluid.rho_tilde + 1.0
        return cls(
            gamma=fluid.gamma,
            beta=beta,
            capital_m=capital_m,
            rho_bar=rho_bar,
            rho_tilde=fluid.rho_tilde,
        )


@dataclass
class State:
    t: float
    rho: np.ndarray
    u: np.ndarray

    def copy(self):
        return State(self.t, self.rho.copy(), self.u.copy())


def compute_pressure(rho, fluid):
    if np.min(rho) < 0:
        raise ValueError("negative density")
    return fluid.a * np.power(rho, fluid.gamma)


def potential_density(rho, fluid):
    """G(rho): potential energy density, zero at the reference density."""
    g, rt = fluid.gamma, fluid.rho_tilde
    rho = np.maximum(rho, 0.0)
    return fluid.a * (
        (np.power(rho, g) - rho * rt ** (g - 1.0)) / (g - 1.0)
        + (rt - rho) * rt ** (g - 1.0)
    )


def energy_parts(grid, state, fluid):
    """(kinetic, potential) pieces of the basic energy."""
    kin = 0.5 * grid.integrate(state.rho * np.sum(state.u**2, axis=-1))
    pot = grid.integrate(potential_density(state.rho, fluid))
    return kin, pot


def material_derivative(grid, prev, nxt, dt):
    """u_dot = (u_next - u_prev)/dt + (u . grad) u at the next level."""
    du = (nxt.u - prev.u) / dt
    adv = np.empty_like(du)
    for c in range(2):
        g = grid.gradient(nxt.u[..., c], dirichlet=True)
        adv[..., c] = nxt.u[..., 0] * g[..., 0] + nxt.u[..., 1] * g[..., 1]
    return du + adv


def fv_divergence(grid, u):
    """Divergence of u by the scheme's own face fluxes (zero wall flux).

    Centered face averages, cell-volume weighting.  Integral identities of
    the transport step (mass budget, renormalized moment equations) close to
    O(dt) against this divergence, whereas the collocation stencils differ
    from it by an O(h^2) commutator that would mask the time error.
    """
    rf = (np.arange(grid.nr - 1) + 1.0) * grid.dr
    rad_n = np.stack([np.cos(grid.theta), np.sin(grid.theta)], axis=-1)
    thf = grid.theta + grid.dtheta / 2.0
    th_n = np.stack([-np.sin(thf), np.cos(thf)], axis=-1)
    u_rad = 0.5 * (u[:-1] + u[1:])
    un_rad = u_rad[..., 0] * rad_n[:, 0] + u_rad[..., 1] * rad_n[:, 1]
    flux_rad = (rf[:, None] * grid.dtheta) * un_rad
    u_th = 0.5 * (u + np.roll(u, -1, axis=1))
    un_th = u_th[..., 0] * th_n[:, 0] + u_th[..., 1] * th_n[:, 1]
    flux_th = grid.dr * un_th
    net = np.zeros(grid.shape)
    net[:-1] += flux_rad
    net[1:] -= flux_rad
    net += flux_th
    net -= np.roll(flux_th, 1, axis=1)
    return net / grid.weights


def cfl_dt(grid, fluid, state, safety=0.4):
    """Largest explicit-acoustics step: safety * min(cell width / wave speed)."""
    h = np.minimum(grid.dr, grid.rr * grid.dtheta)
    speed = np.sqrt(np.sum(state.u**2, axis=-1)) + fluid.sound_speed(state.rho)
    with np.errstate(divide="ignore"):
        dt = safety * float(np.min(h / np.maximum(speed, 1e-300)))
    if not math.isfinite(dt):
        raise StepError("wave speed vanished everywhere; supply an explicit dt")
    return dt


class DiscSolver:
    """Carries the grid, the Lame matrix and the factorized implicit solve."""

    def __init__(self, grid, fluid):
        self.grid = grid
        self.fluid = fluid
        self.lame = lame_operator(grid, fluid.mu, fluid.lam)
        # face geometry
        self._rf = (np.arange(grid.nr - 1) + 1.0) * grid.dr  # radial face radii
        self._rad_normal = np.stack([np.cos(grid.theta), np.sin(grid.theta)], axis=-1)
        thf = grid.theta + grid.dtheta / 2.0
        self._th_normal = np.stack([-np.sin(thf), np.cos(thf)], axis=-1)
        self._implicit = {}

    # -- linear implicit solve -----------------------------------------

    def _implicit_lu(self, dt):
        if dt not in self._implicit:
            n = self.grid.size
            diag = sp.diags(np.full(2 * n, self.fluid.rho_tilde / dt))
            self._implicit[dt] = splu((diag - self.lame).tocsc())
        return self._implicit[dt]

    def _implicit_solve(self, rho_new, rhs_flat, dt):
        """Solve (rho/dt - L) u = rhs by defect correction on a frozen LU.

        The preconditioner is the same system at the reference density; the
        iteration count is fixed by the density contrast alone, so the map
        rhs -> u stays linear and superposition of momentum splits survives
        to rounding error.
        """
        rt = self.fluid.rho_tilde
        dev = float(np.max(np.abs(rho_new - rt)))
        kappa = dev / rt if rt > 0 else np.inf
        rho2 = np.concatenate([rho_new.ravel(), rho_new.ravel()]) / dt
        if kappa < 0.5:
            lu = self._implicit_lu(dt)
            x = lu.solve(rhs_flat)
            if kappa > 1e-12:
                # contraction per sweep ~ kappa; stop once kappa^k < 1e-12
                iters = min(40, max(2, int(math.ceil(-12.0 / math.log10(kappa)))))
                for _ in range(iters):
                    resid = rhs_flat - (rho2 * x - self.lame @ x)
                    x += lu.solve(resid)
        else:
            mat = (sp.diags(rho2) - self.lame).tocsc()
            x = splu(mat).solve(rhs_flat)
        resid = np.linalg.norm(rhs_flat - (rho2 * x - self.lame @ x))
        scale = np.linalg.norm(rhs_flat)
        if scale > 0 and resid > 1e-8 * scale:
            raise StepError(f"implicit viscous solve stalled (residual {resid:.2e})")
        return x

    # -- upwind machinery ------------------------------------------------

    def prepare(self, state, dt):
        """Everything the (linear) momentum update needs: fluxes, densities."""
        g = self.grid
        rho, u = state.rho, state.u
        p = compute_pressure(rho, self.fluid)
        # radial faces between ring i and i+1
        u_rad = 0.5 * (u[:-1] + u[1:])
        un_rad = u_rad[..., 0] * self._rad_normal[:, 0] + u_rad[..., 1] * self._rad_normal[:, 1]
        up_rad = un_rad >= 0.0
        rho_rad = np.where(up_rad, rho[:-1], rho[1:])
        flux_rad = (self._rf[:, None] * g.dtheta) * un_rad * rho_rad
        # angular faces between column j and j+1 (periodic)
        u_th = 0.5 * (u + np.roll(u, -1, axis=1))
        un_th = u_th[..., 0] * self._th_normal[:, 0] + u_th[..., 1] * self._th_normal[:, 1]
        up_th = un_th >= 0.0
        rho_th = np.where(up_th, rho, np.roll(rho, -1, axis=1))
        flux_th = g.dr * un_th * rho_th
        rho_new = rho - dt * self._flux_div(flux_rad, flux_th)
        small = rho_new < 0.0
        if small.any():
            if rho_new.min() < -1e-13 * max(self.fluid.rho_tilde, 1.0):
                raise StepError("transport produced negative density; dt too large")
            rho_new = np.maximum(rho_new, 0.0)
        grad_p = g.gradient(p)
        return {
            "dt": dt,
            "rho": rho,
            "rho_new": rho_new,
            "flux_rad": flux_rad,
            "flux_th": flux_th,
            "up_rad": up_rad,
            "up_th": up_th,
            "grad_p": grad_p,
        }

    def _flux_div(self, flux_rad, flux_th):
        g = self.grid
        net = np.zeros(g.shape)
        net[:-1] += flux_rad
        net[1:] -= flux_rad
        net += flux_th
        net -= np.roll(flux_th, 1, axis=1)
        return net / g.weights

    def advance_velocity(self, prep, w, with_pressure):
        """One conservative momentum update of the field w; linear in w."""
        g = self.grid
        dt = prep["dt"]
        mom = prep["rho"][..., None] * w
        net = np.zeros(g.shape + (2,))
        for c in range(2):
            w_rad = np.where(prep["up_rad"], w[:-1, :, c], w[1:, :, c])
            w_th = np.where(prep["up_th"], w[..., c], np.roll(w[..., c], -1, axis=1))
            net[..., c] = self._flux_div(prep["flux_rad"] * w_rad, prep["flux_th"] * w_th)
        mstar = mom - dt * net
        if with_pressure:
            mstar -= dt * prep["grad_p"]
        rhs = np.concatenate([mstar[..., 0].ravel(), mstar[..., 1].ravel()]) / dt
        sol = self._implicit_solve(prep["rho_new"], rhs, dt)
        n = g.size
        return np.stack([sol[:n].reshape(g.shape), sol[n:].reshape(g.shape)], axis=-1)

    # -- public stepping --------------------------------------------------

    def step(self, state, dt):
        prep = self.prepare(state, dt)
        u_new = self.advance_velocity(prep, state.u, with_pressure=True)
        if not np.isfinite(u_new).all():
            raise StepError("velocity blew up (NaN/inf)")
        return State(state.t + dt, prep["rho_new"], u_new)

    def split_probe_step(self, state, w1, w2, dt):
        """Advance the two momentum halves with the frozen transport field.

        w1 carries the initial data (no pressure forcing), w2 the pressure;
        their sum tracks u exactly as long as every update stays linear.
        """
        prep = self.prepare(state, dt)
        return (
            self.advance_velocity(prep, w1, with_pressure=False),
            self.advance_velocity(prep, w2, with_pressure=True),
        )


# ----------------------------------------------------------------------
# initial data
# ----------------------------------------------------------------------


@dataclass
class InitConfig:
    seed: int = 0
    density_amplitude: float = 0.0
    velocity_amplitude: float = 0.0
    max_mode: int = 2
    target_e0: float | None = None
    pe_fraction: float = 0.5


@dataclass
class InitReport:
    e0: float
    kinetic: float
    potential: float
    rho_q0: float
    seminorm: float
    within_m: bool
    within_rho_bar: bool


def _random_poly(rng, grid, max_mode):
    """Low-degree polynomial in x, y with O(1) coefficients."""
    out = np.zeros(grid.shape)
    xs, ys = grid.x / grid.radius, grid.y / grid.radius
    for a in range(max_mode + 1):
        for b in range(max_mode + 1 - a):
            out += rng.uniform(-1, 1) * xs**a * ys**b
    return out


def _stream_velocity(rng, grid, max_mode):
    """grad-perp of (1-(r/R)^2)^2 T1 plus grad of the same envelope times T2.

    Both parts vanish at the wall together with their first derivatives, so
    the samples satisfy no-slip exactly.  Derivatives are analytic, not
    stencils.
    """
    R = grid.radius
    env = (1 - (grid.rr / R) ** 2) ** 2
    denv = -4 * (1 - (grid.rr / R) ** 2) / R**2  # d(env)/d(r^2/ ...) factor on (x, y)
    u = np.zeros(grid.shape + (2,))
    xs, ys = grid.x / R, grid.y / R
    for which in (0, 1):
        poly = np.zeros(grid.shape)
        poly_x = np.zeros(grid.shape)
        poly_y = np.zeros(grid.shape)
        for a in range(max_mode + 1):
            for b in range(max_mode + 1 - a):
                c = rng.uniform(-1, 1)
                poly += c * xs**a * ys**b
                if a > 0:
                    poly_x += c * a * xs ** (a - 1) * ys**b / R
                if b > 0:
                    poly_y += c * b * xs**a * ys ** (b - 1) / R
        fx = denv * grid.x * poly + env * poly_x
        fy = denv * grid.y * poly + env * poly_y
        if which == 0:  # rotated gradient: divergence-free part
            u[..., 0] += -fy
            u[..., 1] += fx
        else:
            u[..., 0] += fx
            u[..., 1] += fy
    return u


def init_data(grid, fluid, cfg, analysis=None):
    """Build a smooth admissible state; returns (state, report).

    With a target total energy the density bump amplitude is bisected so the
    potential part lands on pe_fraction * E0 and the velocity is rescaled
    exactly for the rest.
    """
    rng = np.random.default_rng(cfg.seed)
    bump = (1 - (grid.rr / grid.radius) ** 2) ** 3 * _random_poly(rng, grid, cfg.max_mode)
    peak = np.abs(bump).max()
    if peak > 0:
        bump /= peak
    u0 = _stream_velocity(rng, grid, cfg.max_mode)
    umax = np.sqrt(np.sum(u0**2, axis=-1)).max()
    if umax > 0:
        u0 /= umax

    def build_rho(amp):
        rho = np.maximum(fluid.rho_tilde * (1.0 + amp * bump), 0.0)
        total = grid.integrate(rho)
        if total <= 0:
            raise ValueError("density bump swallowed all mass")
        return rho * (fluid.rho_tilde * grid.area / total)

    amp_d = cfg.density_amplitude
    amp_u = cfg.velocity_amplitude
    if cfg.target_e0 is not None:
        e0 = cfg.target_e0
        pe_goal = e0 * (cfg.pe_fraction if amp_d > 0 and amp_u > 0 else (1.0 if amp_u == 0 else 0.0))
        if pe_goal > 0:
            lo, hi = 0.0, 0.999
            pot_hi = grid.integrate(potential_density(build_rho(hi), fluid))
            if pot_hi < pe_goal:
                raise ValueError("target energy unreachable with nonnegative density")
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if grid.integrate(potential_density(build_rho(mid), fluid)) < pe_goal:
                    lo = mid
                else:
                    hi = mid
            amp_d = 0.5 * (lo + hi)
        else:
            amp_d = 0.0
        rho0 = build_rho(amp_d)
        pot = grid.integrate(potential_density(rho0, fluid))
        ke_goal = e0 - pot
        if ke_goal < -1e-12 * max(e0, 1.0):
            raise ValueError("target energy below the potential floor")
        raw_ke = 0.5 * grid.integrate(rho0 * np.sum(u0**2, axis=-1))
        if ke_goal > 1e-300:
            if raw_ke <= 0:
                raise ValueError("no velocity modes to carry the kinetic energy")
            u0 = u0 * math.sqrt(max(ke_goal, 0.0) / raw_ke)
        else:
            u0 = np.zeros_like(u0)
    else:
        rho0 = build_rho(amp_d)
        u0 = amp_u * u0

    state = State(0.0, rho0, u0)
    kin, pot = energy_parts(grid, state, fluid)
    ana = analysis or AnalysisParams.for_fluid(fluid)
    rho_q0 = grid.lq_norm(rho0, ana.q0)
    if ana.beta >= 1.0:
        seminorm = math.sqrt(grid.integrate(grid.grad_norm_sq(u0, dirichlet=True)))
    else:
        seminorm = math.sqrt(grid.gagliardo_seminorm(u0, ana.beta, 2))
    report = InitReport(
        e0=kin + pot,
        kinetic=kin,
        potential=pot,
        rho_q0=rho_q0,
        seminorm=seminorm,
        within_m=bool(seminorm <= ana.capital_m),
        within_rho_bar=bool(rho_q0 <= ana.rho_bar),
    )
    return state, report


# ----------------------------------------------------------------------
# orchestration
# ----------------------------------------------------------------------


@dataclass
class RunResult:
    state: State
    steps: int
    dt: float
    aborted: bool = False
    reason: str = ""
    superposition_max: float = 0.0
    probe_history: list = field(default_factory=list)


def run(
    grid,
    fluid,
    state0,
    t_end,
    dt=None,
    cfl_safety=0.4,
    recorder=None,
    snapshot_cb=None,
    snapshot_every=0,
    probe_superposition=False,
    max_steps=10_000_000,
):
    """March to t_end with a fixed dt (from the initial CFL bound if absent).

    The CFL bound is re-checked every step; a violation aborts after handing
    the last valid state to snapshot_cb.  With probe_superposition the two
    momentum halves are advanced alongside and their drift from u recorded.
    """
    solver = DiscSolver(grid, fluid)
    if dt is None:
        dt = cfl_dt(grid, fluid, state0, cfl_safety)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if recorder is not None:
        recorder.start(state0)
    state = state0.copy()
    w1 = state0.u.copy() if probe_superposition else None
    w2 = np.zeros_like(state0.u) if probe_superposition else None
    result = RunResult(state, 0, dt)
    steps = 0
    while state.t < t_end - 1e-12 * max(1.0, t_end) and steps < max_steps:
        step_dt = min(dt, t_end - state.t)
        try:
            if cfl_dt(grid, fluid, state, cfl_safety) < step_dt * (1.0 - 1e-9):
                raise StepError(f"CFL bound violated at t={state.t:.6g}")
            nxt = solver.step(state, step_dt)
            if probe_superposition:
                w1, w2 = solver.split_probe_step(state, w1, w2, step_dt)
        except StepError as exc:
            if snapshot_cb is not None:
                snapshot_cb(state, steps, final=True)
            result.state = state
            result.steps = steps
            result.aborted = True
            result.reason = str(exc)
            raise
        if recorder is not None:
            recorder.record(state, nxt, step_dt)
        state = nxt
        steps += 1
        if probe_superposition:
            unorm = np.sqrt(grid.integrate(np.sum(state.u**2, axis=-1)))
            gap = np.sqrt(grid.integrate(np.sum((state.u - w1 - w2) ** 2, axis=-1)))
            dev = gap / max(unorm, 1e-300)
            result.probe_history.append(dev)
            result.superposition_max = max(result.superposition_max, dev)
        if snapshot_cb is not None and snapshot_every and steps % snapshot_every == 0:
            snapshot_cb(state, steps, final=False)
    if snapshot_cb is not None:
        snapshot_cb(state, steps, final=True)
    result.state = state
    result.steps = steps
    return result
