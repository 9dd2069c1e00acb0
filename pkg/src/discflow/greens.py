"""Green function of the ball for the Laplacian, and disc potential operators.

Closed forms (image/Kelvin construction) are evaluated in any dimension
n >= 2; the quadrature-backed potential operators act on fields living on a
PolarGrid, i.e. n = 2 only.

Normalization: omega_n below is the volume of the unit n-ball (pi for n = 2),
so n * omega_n is the surface area of the unit sphere and the harmonic
measure of the whole boundary equals one.
"""

import math

import numpy as np
from scipy.sparse.linalg import splu

from .grid import DENSE_NODE_LIMIT


def unit_ball_volume(n):
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


class BallGreens:
    """Dirichlet Green function of the ball |x| < radius in R^n."""

    def __init__(self, n=2, radius=1.0):
        if n < 2:
            raise ValueError("dimension must be at least 2")
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.n = int(n)
        self.radius = float(radius)
        self.omega = unit_ball_volume(self.n)
        self.surface = self.n * self.omega  # area of the unit (n-1)-sphere

    # -- pointwise kernels ------------------------------------------------

    def _geometry(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d2 = np.sum((x - y) ** 2, axis=-1)
        x2 = np.sum(x * x, axis=-1)
        y2 = np.sum(y * y, axis=-1)
        # |R x/|x| - |x| y / R|^2, written so the x -> 0 limit (value R^2)
        # needs no special casing
        k2 = self.radius**2 + x2 * y2 / self.radius**2 - 2.0 * np.sum(x * y, axis=-1)
        return x, y, d2, x2, k2

    def value(self, x, y):
        """Green function; negative in the interior, zero for |y| = R."""
        _, _, d2, _, k2 = self._geometry(x, y)
        if self.n == 2:
            return (np.log(d2) - np.log(k2)) / (4.0 * math.pi)
        p = (2.0 - self.n) / 2.0
        return (d2**p - k2**p) / ((2.0 - self.n) * self.surface)

    def poisson_kernel(self, x, y):
        """Normal derivative of the Green function at boundary point y."""
        _, _, d2, x2, _ = self._geometry(x, y)
        return (self.radius**2 - x2) / (
            self.surface * self.radius * d2 ** (self.n / 2.0)
        )

    def normal_derivative_of_gradient(self, x, y):
        """d/dn_y of grad_x G at a boundary point y, shape (..., n)."""
        x, y, d2, x2, _ = self._geometry(x, y)
        dn = d2 ** (self.n / 2.0)
        term1 = -2.0 * x / (self.surface * self.radius * dn)[..., None]
        term2 = (
            -(self.radius**2 - x2)[..., None]
            * (x - y)
            / (self.omega * self.radius * (dn * d2))[..., None]
        )
        return term1 + term2

    def boundary_identity_residual(self, x, y):
        """Residual of (y - x) . d/dn grad_x G against its closed form.

        The closed form is 1/(n omega R |x-y|^(n-2)) plus (n-1) times the
        Poisson kernel; the residual should be at rounding level for any
        interior x and boundary y.
        """
        x, y, d2, _, _ = self._geometry(x, y)
        lhs = np.sum((y - x) * self.normal_derivative_of_gradient(x, y), axis=-1)
        rhs = 1.0 / (
            self.surface * self.radius * d2 ** ((self.n - 2) / 2.0)
        ) + (self.n - 1) * self.poisson_kernel(x, y)
        return np.abs(lhs - rhs)


# ----------------------------------------------------------------------
# potential operators on a PolarGrid (n = 2)
# ----------------------------------------------------------------------


def volume_potential(grid, h):
    """Dense Green quadrature of h: (G h)(x_i) = int G(x_i, y) h(y) dy.

    Off-diagonal cells use midpoint quadrature of the closed-form kernel.
    The diagonal replaces the cell by the disc of equal area, for which the
    log part integrates to eps^2 log(eps)/2 - eps^2/4, and keeps the (smooth)
    image term evaluated at the node.  Guarded to modest grids; use
    volume_potential_fast for production work.
    """
    if grid.size > DENSE_NODE_LIMIT:
        raise ValueError(
            f"dense volume potential limited to {DENSE_NODE_LIMIT} nodes "
            f"(grid has {grid.size})"
        )
    R = grid.radius
    pts = np.column_stack([grid.x.ravel(), grid.y.ravel()])
    hw = h.ravel() * grid.weights.ravel()
    x2 = np.sum(pts * pts, axis=1)
    out = np.empty(grid.size)
    # equal-area disc radius for each cell
    eps2 = grid.weights.ravel() / math.pi
    self_log = eps2 * (np.log(eps2) - 1.0) / 4.0  # = e^2 log(e)/2 - e^2/4
    self_image = -np.log(R - x2 / R) / (2.0 * math.pi) * grid.weights.ravel()
    chunk = 512
    for a in range(0, grid.size, chunk):
        b = min(a + chunk, grid.size)
        diff = pts[a:b, None, :] - pts[None, :, :]
        d2 = np.sum(diff * diff, axis=-1)
        k2 = (
            R**2
            + x2[a:b, None] * x2[None, :] / R**2
            - 2.0 * pts[a:b] @ pts.T
        )
        idx = np.arange(a, b)
        d2[idx - a, idx] = 1.0  # diagonal handled in closed form
        kern = (np.log(d2) - np.log(k2)) / (4.0 * math.pi)
        kern[idx - a, idx] = 0.0
        out[a:b] = kern @ hw
        out[a:b] += h.ravel()[a:b] * (self_log[a:b] + self_image[a:b])
    return out.reshape(grid.shape)


def _poisson_lu(grid):
    lu = getattr(grid, "_poisson_lu", None)
    if lu is None:
        lu = splu(grid.op("lap_noslip").tocsc())
        grid._poisson_lu = lu
    return lu


def volume_potential_fast(grid, h):
    """Green operator realized as a sparse Dirichlet Poisson solve."""
    return _poisson_lu(grid).solve(np.asarray(h, dtype=float).ravel()).reshape(
        grid.shape
    )


def boundary_potential(grid, h):
    """Harmonic extension of nodal boundary data via the Poisson kernel."""
    kern = getattr(grid, "_poisson_kernel_matrix", None)
    if kern is None:
        gb = BallGreens(2, grid.radius)
        pts = np.column_stack([grid.x.ravel(), grid.y.ravel()])
        bpts = np.column_stack([grid.boundary_x, grid.boundary_y])
        kern = gb.poisson_kernel(pts[:, None, :], bpts[None, :, :]) * grid.boundary_ds
        grid._poisson_kernel_matrix = kern
    return (kern @ np.asarray(h, dtype=float)).reshape(grid.shape)
