"""Cell-centered polar grid on a disc, quadrature and difference operators.

Scalar fields are numpy arrays of shape (nr, ntheta); vector fields carry
Cartesian components in shape (nr, ntheta, 2).  Storing Cartesian components
keeps vector fields single-valued and smooth through the origin, so the
across-pole ghost value of any component is just the value half a turn away.
"""

import numpy as np
import scipy.sparse as sp

BLOCK_MAGIC = b"CNSD"

# Dense pairwise kernels (Gagliardo seminorm, volume potentials) are only
# offered up to this many nodes.
DENSE_NODE_LIMIT = 64 * 64


class PolarGrid:
    """Disc of radius `radius` meshed by nr radial cells and ntheta sectors.

    Cell centers sit at r_i = (i + 1/2) * radius / nr, theta_j = j * 2*pi /
    ntheta.  The quadrature weight of a cell is r_i * dr * dtheta, which sums
    to the disc area exactly.  ntheta must be even so the across-pole ghost
    column (theta + pi) exists.
    """

    def __init__(self, nr, ntheta, radius=1.0):
        if nr < 4:
            raise ValueError("need at least 4 radial cells")
        if ntheta < 4 or ntheta % 2:
            raise ValueError("ntheta must be even and at least 4")
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.nr = int(nr)
        self.ntheta = int(ntheta)
        self.radius = float(radius)
        self.dr = self.radius / self.nr
        self.dtheta = 2.0 * np.pi / self.ntheta
        self.r = (np.arange(self.nr) + 0.5) * self.dr
        self.theta = np.arange(self.ntheta) * self.dtheta
        self.rr, self.tt = np.meshgrid(self.r, self.theta, indexing="ij")
        self.x = self.rr * np.cos(self.tt)
        self.y = self.rr * np.sin(self.tt)
        self.weights = self.rr * self.dr * self.dtheta
        # arc length element of one boundary node
        self.boundary_ds = self.radius * self.dtheta
        self.boundary_x = self.radius * np.cos(self.theta)
        self.boundary_y = self.radius * np.sin(self.theta)
        self._ops = {}

    @property
    def shape(self):
        return (self.nr, self.ntheta)

    @property
    def size(self):
        return self.nr * self.ntheta

    @property
    def area(self):
        return np.pi * self.radius**2

    # ------------------------------------------------------------------
    # quadrature
    # ------------------------------------------------------------------

    def integrate(self, f):
        """Midpoint-in-r, trapezoid-in-theta quadrature of a scalar field."""
        return float(np.sum(f * self.weights))

    def mean(self, f):
        return self.integrate(f) / self.area

    def lq_norm(self, f, q):
        """L^q norm; vector fields use the pointwise Euclidean magnitude.

        Powers go through exp(q*log|f|) with zero values dropped, so large q
        (the q0 = 12*gamma/(gamma-1) exponents) stay accurate.
        """
        if q <= 0:
            raise ValueError("q must be positive")
        mag = pointwise_magnitude(f)
        out = np.zeros_like(mag)
        nz = mag > 0.0
        out[nz] = np.exp(q * np.log(mag[nz]))
        return float(np.sum(out * self.weights) ** (1.0 / q))

    def boundary_integral(self, h):
        """Integrate nodal boundary data over the wall circle."""
        return float(np.sum(h) * self.boundary_ds)

    # ------------------------------------------------------------------
    # difference operators
    # ------------------------------------------------------------------

    def op(self, name):
        """Cached sparse operator matrices (csr) acting on flattened fields.

        Names: 'dx', 'dy', 'lap' plus the '_noslip' variants that eliminate a
        wall ghost with homogeneous Dirichlet data instead of using one-sided
        stencils.
        """
        if name not in self._ops:
            builder = {
                "dr": lambda: self._build_dr(dirichlet=False),
                "dr_noslip": lambda: self._build_dr(dirichlet=True),
                "d2r": lambda: self._build_d2r(dirichlet=False),
                "d2r_noslip": lambda: self._build_d2r(dirichlet=True),
                "dth": self._build_dth,
                "d2th": self._build_d2th,
                "dx": lambda: self._build_dxy(0, dirichlet=False),
                "dy": lambda: self._build_dxy(1, dirichlet=False),
                "dx_noslip": lambda: self._build_dxy(0, dirichlet=True),
                "dy_noslip": lambda: self._build_dxy(1, dirichlet=True),
                "lap": lambda: self._build_lap(dirichlet=False),
                "lap_noslip": lambda: self._build_lap(dirichlet=True),
            }[name]
            self._ops[name] = builder().tocsr()
        return self._ops[name]

    def _idx(self, i, j):
        return i * self.ntheta + np.mod(j, self.ntheta)

    def _build_dr(self, dirichlet):
        nr, nt, dr = self.nr, self.ntheta, self.dr
        j = np.arange(nt)
        jbar = (j + nt // 2) % nt
        rows, cols, vals = [], [], []

        def add(i_row, j_row, i_col, j_col, coef):
            rows.append(self._idx(i_row, j_row))
            cols.append(self._idx(i_col, j_col))
            vals.append(np.broadcast_to(coef, j_row.shape).astype(float))

        for i in range(1, nr - 1):
            add(i, j, i + 1, j, 1.0 / (2 * dr))
            add(i, j, i - 1, j, -1.0 / (2 * dr))
        # pole: ghost cell (-1, j) is the cell (0, j + pi)
        add(0, j, 1, j, 1.0 / (2 * dr))
        add(0, j, 0, jbar, -1.0 / (2 * dr))
        m = nr - 1
        if dirichlet:
            # ghost at R + dr/2 from the quadratic through the outer two
            # cells that vanishes at the wall
            add(m, j, m, j, -1.0 / dr)
            add(m, j, m - 1, j, -1.0 / (3 * dr))
        else:
            add(m, j, m, j, 3.0 / (2 * dr))
            add(m, j, m - 1, j, -4.0 / (2 * dr))
            add(m, j, m - 2, j, 1.0 / (2 * dr))
        return self._coo(rows, cols, vals)

    def _build_d2r(self, dirichlet):
        nr, nt, dr = self.nr, self.ntheta, self.dr
        j = np.arange(nt)
        jbar = (j + nt // 2) % nt
        rows, cols, vals = [], [], []

        def add(i_row, j_row, i_col, j_col, coef):
            rows.append(self._idx(i_row, j_row))
            cols.append(self._idx(i_col, j_col))
            vals.append(np.broadcast_to(coef, j_row.shape).astype(float))

        h2 = dr * dr
        for i in range(1, nr - 1):
            add(i, j, i + 1, j, 1.0 / h2)
            add(i, j, i, j, -2.0 / h2)
            add(i, j, i - 1, j, 1.0 / h2)
        add(0, j, 1, j, 1.0 / h2)
        add(0, j, 0, j, -2.0 / h2)
        add(0, j, 0, jbar, 1.0 / h2)
        m = nr - 1
        if dirichlet:
            add(m, j, m, j, -4.0 / h2)
            add(m, j, m - 1, j, 4.0 / (3 * h2))
        else:
            add(m, j, m, j, 2.0 / h2)
            add(m, j, m - 1, j, -5.0 / h2)
            add(m, j, m - 2, j, 4.0 / h2)
            add(m, j, m - 3, j, -1.0 / h2)
        return self._coo(rows, cols, vals)

    def _build_dth(self):
        nt, dth = self.ntheta, self.dtheta
        j = np.arange(nt)
        rows, cols, vals = [], [], []
        for i in range(self.nr):
            rows.append(self._idx(i, j))
            cols.append(self._idx(i, j + 1))
            vals.append(np.full(nt, 1.0 / (2 * dth)))
            rows.append(self._idx(i, j))
            cols.append(self._idx(i, j - 1))
            vals.append(np.full(nt, -1.0 / (2 * dth)))
        return self._coo(rows, cols, vals)

    def _build_d2th(self):
        nt, dth = self.ntheta, self.dtheta
        j = np.arange(nt)
        rows, cols, vals = [], [], []
        for i in range(self.nr):
            for shift, coef in ((1, 1.0), (0, -2.0), (-1, 1.0)):
                rows.append(self._idx(i, j))
                cols.append(self._idx(i, j + shift))
                vals.append(np.full(nt, coef / dth**2))
        return self._coo(rows, cols, vals)

    def _coo(self, rows, cols, vals):
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        n = self.size
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n))

    def _build_dxy(self, component, dirichlet):
        suffix = "_noslip" if dirichlet else ""
        drm = self.op("dr" + suffix)
        dth = self.op("dth")
        cos = sp.diags(np.cos(self.tt).ravel())
        sin = sp.diags(np.sin(self.tt).ravel())
        inv_r = sp.diags(1.0 / self.rr.ravel())
        if component == 0:
            return cos @ drm - sin @ inv_r @ dth
        return sin @ drm + cos @ inv_r @ dth

    def _build_lap(self, dirichlet):
        suffix = "_noslip" if dirichlet else ""
        inv_r = sp.diags(1.0 / self.rr.ravel())
        inv_r2 = sp.diags(1.0 / self.rr.ravel() ** 2)
        return (
            self.op("d2r" + suffix)
            + inv_r @ self.op("dr" + suffix)
            + inv_r2 @ self.op("d2th")
        )

    def _apply(self, name, f):
        return (self.op(name) @ f.ravel()).reshape(self.shape)

    def gradient(self, f, dirichlet=False):
        """Cartesian gradient of a scalar field, shape (nr, ntheta, 2).

        With dirichlet=True the wall stencil assumes the field vanishes at
        r = R (used for no-slip velocities); otherwise the wall is handled by
        one-sided second-order stencils.
        """
        suffix = "_noslip" if dirichlet else ""
        return np.stack(
            [self._apply("dx" + suffix, f), self._apply("dy" + suffix, f)],
            axis=-1,
        )

    def divergence(self, v, dirichlet=False):
        suffix = "_noslip" if dirichlet else ""
        return self._apply("dx" + suffix, v[..., 0]) + self._apply(
            "dy" + suffix, v[..., 1]
        )

    def laplacian(self, f):
        return self._apply("lap", f)

    def vector_gradient(self, v, dirichlet=False):
        """All four partials d(v_c)/d(x_a), shape (nr, ntheta, 2, 2), [c, a]."""
        return np.stack(
            [self.gradient(v[..., 0], dirichlet), self.gradient(v[..., 1], dirichlet)],
            axis=-2,
        )

    def grad_norm_sq(self, v, dirichlet=False):
        """Pointwise |grad v|^2 summed over components and directions."""
        g = self.vector_gradient(v, dirichlet)
        return np.sum(g * g, axis=(-2, -1))

    # ------------------------------------------------------------------
    # boundary
    # ------------------------------------------------------------------

    def boundary_trace(self, f):
        """Extrapolate nodal values to r = R along each ray.

        Quadratic one-sided extrapolation through the outer three cell
        centers; exact for radial polynomials up to degree two.
        """
        coef = np.array([15.0, -10.0, 3.0]) / 8.0
        return coef[0] * f[-1] + coef[1] * f[-2] + coef[2] * f[-3]

    # ------------------------------------------------------------------
    # fractional seminorm
    # ------------------------------------------------------------------

    def gagliardo_seminorm(self, f, s, p):
        """Double-sum Gagliardo energy sum_{x!=y} |f(x)-f(y)|^p / |x-y|^(2+sp).

        Returns the p-th power double integral (so scaling f by c scales the
        result by |c|^p).  Dense in the number of nodes, hence guarded.
        """
        if not 0.0 < s < 1.0:
            raise ValueError("s must lie in (0, 1)")
        if p < 1:
            raise ValueError("p must be at least 1")
        if self.size > DENSE_NODE_LIMIT:
            raise ValueError(
                f"gagliardo_seminorm is dense; grid has {self.size} nodes "
                f"(limit {DENSE_NODE_LIMIT})"
            )
        pts = np.column_stack([self.x.ravel(), self.y.ravel()])
        vals = np.asarray(f, dtype=float)
        if vals.ndim == 3:
            vals = vals.reshape(self.size, vals.shape[-1])
        else:
            vals = vals.reshape(self.size, 1)
        w = self.weights.ravel()
        expo = (2.0 + s * p) / 2.0
        total = 0.0
        chunk = 256
        for a in range(0, self.size, chunk):
            b = min(a + chunk, self.size)
            d2 = np.sum((pts[a:b, None, :] - pts[None, :, :]) ** 2, axis=-1)
            df = np.sqrt(np.sum((vals[a:b, None, :] - vals[None, :, :]) ** 2, axis=-1))
            np.fill_diagonal(d2[:, a:b], 1.0)
            kern = df**p / d2**expo
            np.fill_diagonal(kern[:, a:b], 0.0)
            total += float(np.sum(kern * w[None, :] * w[a:b, None]))
        return total


def pointwise_magnitude(f):
    """|f| pointwise; Euclidean for vector fields stored as (..., 2)."""
    f = np.asarray(f)
    if f.ndim == 3 and f.shape[-1] == 2:
        return np.sqrt(f[..., 0] ** 2 + f[..., 1] ** 2)
    return np.abs(f)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------


def _as_components(values):
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        return values[..., None]
    if values.ndim == 3:
        return values
    raise ValueError("expected (nr, ntheta) or (nr, ntheta, ncomp) values")


def save_field_csv(grid, values, path):
    """Write a field as CSV rows i, j, r, theta, value[, value2, ...]."""
    comps = _as_components(values)
    ncomp = comps.shape[-1]
    ii, jj = np.meshgrid(np.arange(grid.nr), np.arange(grid.ntheta), indexing="ij")
    header = ["i", "j", "r", "theta"] + [
        "value" if ncomp == 1 else f"value_{k}" for k in range(ncomp)
    ][:ncomp]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        flat = [
            ii.ravel(),
            jj.ravel(),
            grid.rr.ravel(),
            grid.tt.ravel(),
        ] + [comps[..., k].ravel() for k in range(ncomp)]
        for row in zip(*flat):
            fh.write(
                "%d,%d,%.17g,%.17g," % row[:4]
                + ",".join("%.17g" % v for v in row[4:])
                + "\n"
            )


def save_field_block(grid, values, path):
    """Raw little-endian float64 dump with a fixed 32-byte header.

    Header layout: magic 'CNSD', uint32 nr, uint32 ntheta, uint32 ncomp,
    float64 radius, 8 reserved zero bytes; then nr*ntheta*ncomp doubles in C
    order.
    """
    comps = _as_components(values)
    ncomp = comps.shape[-1]
    header = BLOCK_MAGIC
    header += np.array([grid.nr, grid.ntheta, ncomp], dtype="<u4").tobytes()
    header += np.array([grid.radius], dtype="<f8").tobytes()
    header += b"\x00" * 8
    assert len(header) == 32
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(comps, dtype="<f8").tobytes())


def load_field_block(path):
    """Inverse of save_field_block: returns (values, radius)."""
    with open(path, "rb") as fh:
        header = fh.read(32)
        if len(header) != 32 or header[:4] != BLOCK_MAGIC:
            raise ValueError(f"{path}: not a CNSD field block")
        nr, ntheta, ncomp = np.frombuffer(header, dtype="<u4", count=3, offset=4)
        radius = float(np.frombuffer(header, dtype="<f8", count=1, offset=16)[0])
        data = np.frombuffer(fh.read(), dtype="<f8")
    expect = int(nr) * int(ntheta) * int(ncomp)
    if data.size != expect:
        raise ValueError(f"{path}: truncated block ({data.size} of {expect} values)")
    values = data.reshape(int(nr), int(ntheta), int(ncomp)).copy()
    if ncomp == 1:
        values = values[..., 0]
    return values, radius
