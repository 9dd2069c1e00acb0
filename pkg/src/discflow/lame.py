"""Lame system mu*Lap(u) + lam*grad(div u) with no-slip wall, plus the
decomposition of the effective viscous flux into interior, boundary and
body-force contributions.

Everything here treats the velocity in Cartesian components on the polar
grid, so the vector Laplacian acts componentwise and grad(div .) is a
composition of first-derivative matrices.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .greens import volume_potential_fast

RESIDUAL_TOL = 1e-10


def lame_operator(grid, mu, lam):
    """Sparse 2N x 2N matrix of the Lame operator on no-slip fields."""
    cache = getattr(grid, "_lame_ops", None)
    if cache is None:
        cache = grid._lame_ops = {}
    key = (float(mu), float(lam))
    if key not in cache:
        lap = grid.op("lap_noslip")
        dxd, dyd = grid.op("dx_noslip"), grid.op("dy_noslip")
        dxn, dyn = grid.op("dx"), grid.op("dy")
        visc = sp.block_diag((lap, lap))
        graddiv = sp.bmat(
            [[dxn @ dxd, dxn @ dyd], [dyn @ dxd, dyn @ dyd]]
        )
        cache[key] = (mu * visc + lam * graddiv).tocsr()
    return cache[key]


def _lame_lu(grid, mu, lam):
    cache = getattr(grid, "_lame_lus", None)
    if cache is None:
        cache = grid._lame_lus = {}
    key = (float(mu), float(lam))
    if key not in cache:
        cache[key] = splu(lame_operator(grid, mu, lam).tocsc())
    return cache[key]


@dataclass
class LameProblem:
    """Right-hand side data: mu*Lap(u) + lam*grad(div u) = grad(g) + f."""

    grid: object
    mu: float
    lam: float
    grad_source: np.ndarray | None = None  # scalar g
    body_force: np.ndarray | None = None  # vector f

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.mu + self.lam < 0:
            raise ValueError("mu + lam must be nonnegative")
        if self.grad_source is None and self.body_force is None:
            raise ValueError("need grad_source or body_force")

    def rhs(self):
        g = self.grid
        rhs = np.zeros(g.shape + (2,))
        if self.grad_source is not None:
            rhs += g.gradient(self.grad_source)
        if self.body_force is not None:
            rhs += self.body_force
        return rhs


def lame_solve(problem):
    """Direct solve; raises if the linear-system residual is not tiny."""
    g = problem.grid
    rhs = problem.rhs()
    flat = np.concatenate([rhs[..., 0].ravel(), rhs[..., 1].ravel()])
    lu = _lame_lu(g, problem.mu, problem.lam)
    sol = lu.solve(flat)
    mat = lame_operator(g, problem.mu, problem.lam)
    scale = np.linalg.norm(flat)
    if scale > 0:
        resid = np.linalg.norm(mat @ sol - flat) / scale
        if resid > RESIDUAL_TOL:
            raise RuntimeError(f"Lame solve residual {resid:.3e} above tolerance")
    n = g.size
    return np.stack([sol[:n].reshape(g.shape), sol[n:].reshape(g.shape)], axis=-1)


def split_velocity(grid, mu, lam, pressure, rho_udot):
    """Solve the two halves of the momentum balance.

    v carries the pressure gradient (mu*Lap v + lam*grad div v = grad p) and
    w the inertia (.. = rho * u_dot), both with no-slip walls; for a state on
    the momentum equation v + w tracks u.
    """
    v = lame_solve(LameProblem(grid, mu, lam, grad_source=pressure))
    w = lame_solve(LameProblem(grid, mu, lam, body_force=rho_udot))
    return v, w


# ----------------------------------------------------------------------
# effective viscous flux and its decomposition
# ----------------------------------------------------------------------


def effective_flux(grid, mu, lam, u, pressure):
    """F = (mu + lam) div u - p, with the no-slip wall stencils for div."""
    return (mu + lam) * grid.divergence(u, dirichlet=True) - pressure


def op_A(grid, g):
    """div G(grad g) - g: the interior, mean-free-in-spirit part of F."""
    grads = grid.gradient(g)
    pot = np.stack(
        [
            volume_potential_fast(grid, grads[..., 0]),
            volume_potential_fast(grid, grads[..., 1]),
        ],
        axis=-1,
    )
    return grid.divergence(pot, dirichlet=True) - g


def op_B(grid, mu, lam, flux_trace):
    """Wall average of F weighted by lam/(2 mu + lam)."""
    return (
        lam
        / (2.0 * np.pi * grid.radius * (2.0 * mu + lam))
        * grid.boundary_integral(flux_trace)
    )


def op_R(grid, mu, lam, f):
    """Body-force correction to the flux decomposition."""
    gf = np.stack(
        [volume_potential_fast(grid, f[..., 0]), volume_potential_fast(grid, f[..., 1])],
        axis=-1,
    )
    div_gf = grid.divergence(gf, dirichlet=True)
    divf = grid.divergence(f)
    xdivf = np.stack([grid.x * divf, grid.y * divf], axis=-1)
    g_xdivf = np.stack(
        [
            volume_potential_fast(grid, xdivf[..., 0]),
            volume_potential_fast(grid, xdivf[..., 1]),
        ],
        axis=-1,
    )
    div_g_xdivf = grid.divergence(g_xdivf, dirichlet=True)
    chi = volume_potential_fast(grid, divf)
    grad_chi = grid.gradient(chi, dirichlet=True)
    x_dot_grad_chi = grid.x * grad_chi[..., 0] + grid.y * grad_chi[..., 1]
    c = 2.0 * mu + lam
    return (2.0 * (mu + lam) / c) * div_gf - (lam / c) * (
        div_g_xdivf - x_dot_grad_chi + chi
    )


@dataclass
class FluxParts:
    flux: np.ndarray
    interior: np.ndarray  # (2 mu / (2 mu + lam)) A(g)
    wall: float  # B(trace F)
    body: np.ndarray  # R(f)
    closure_residual: float


def decompose_flux(grid, mu, lam, u, pressure, rho_udot):
    """Split F into A/B/R parts and report the relative closure defect."""
    flux = effective_flux(grid, mu, lam, u, pressure)
    interior = (2.0 * mu / (2.0 * mu + lam)) * op_A(grid, pressure)
    wall = op_B(grid, mu, lam, grid.boundary_trace(flux))
    body = op_R(grid, mu, lam, rho_udot)
    defect = flux - interior - wall - body
    scale = max(np.sqrt(grid.integrate(flux**2)), 1e-12)
    residual = np.sqrt(grid.integrate(defect**2)) / scale
    return FluxParts(flux, interior, wall, body, residual)


# ----------------------------------------------------------------------
# empirical elliptic constants
# ----------------------------------------------------------------------


@dataclass
class ProbeRecord:
    estimate: str
    q: float
    max_ratio: float
    ensemble: int
    seed: int
    grid_shape: tuple


def _random_smooth_scalar(rng, grid, kmax=3.0, nmodes=6):
    """Band-limited trigonometric field; same draw -> same continuum field."""
    out = np.zeros(grid.shape)
    for _ in range(nmodes):
        kvec = rng.uniform(-kmax, kmax, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.standard_normal() / np.sqrt(nmodes)
        out += amp * np.cos(kvec[0] * grid.x + kvec[1] * grid.y + phase)
    return out


def _random_smooth_vector(rng, grid, kmax=3.0):
    return np.stack(
        [_random_smooth_scalar(rng, grid, kmax), _random_smooth_scalar(rng, grid, kmax)],
        axis=-1,
    )


def _hessian_magnitude(grid, v):
    parts = []
    for c in range(2):
        first = grid.gradient(v[..., c], dirichlet=True)
        for a in range(2):
            second = grid.gradient(first[..., a])
            parts.append(second[..., 0] ** 2 + second[..., 1] ** 2)
    return np.sqrt(sum(parts))


def elliptic_constant_probe(grid, mu, lam, q=2.0, ensemble=20, seed=0):
    """Empirical sup of the four elliptic estimate ratios over random fields.

    The constants are reported, never asserted: they back the C(q), C-tilde(q)
    bookkeeping in the estimates but only as observed finite numbers.
    """
    rng = np.random.default_rng(seed)
    floor = 1e-12
    ratios = {
        "grad_v_vs_pressure": 0.0,
        "hessian_w_vs_body": 0.0,
        "a_op_vs_deviation": 0.0,
        "grad_r_vs_body": 0.0,
    }
    for _ in range(ensemble):
        p = _random_smooth_scalar(rng, grid)
        f = _random_smooth_vector(rng, grid)
        pdev = grid.lq_norm(p - grid.mean(p), q)
        fnorm = grid.lq_norm(f, q)
        v = lame_solve(LameProblem(grid, mu, lam, grad_source=p))
        if pdev > floor:
            grad_v = np.sqrt(grid.grad_norm_sq(v, dirichlet=True))
            ratios["grad_v_vs_pressure"] = max(
                ratios["grad_v_vs_pressure"], grid.lq_norm(grad_v, q) / pdev
            )
        w = lame_solve(LameProblem(grid, mu, lam, body_force=f))
        if fnorm > floor:
            ratios["hessian_w_vs_body"] = max(
                ratios["hessian_w_vs_body"],
                grid.lq_norm(_hessian_magnitude(grid, w), q) / fnorm,
            )
        a = op_A(grid, p)
        if pdev > floor:
            ratios["a_op_vs_deviation"] = max(
                ratios["a_op_vs_deviation"],
                grid.lq_norm(a + grid.mean(p), q) / pdev,
            )
        if fnorm > floor:
            r = op_R(grid, mu, lam, f)
            grad_r = grid.gradient(r)
            ratios["grad_r_vs_body"] = max(
                ratios["grad_r_vs_body"], grid.lq_norm(grad_r, q) / fnorm
            )
    return [
        ProbeRecord(name, q, val, ensemble, seed, grid.shape)
        for name, val in sorted(ratios.items())
    ]
