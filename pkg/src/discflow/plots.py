"""Rendering of diagnostics: plain-text series for external tools plus
PNG figures for quick inspection.  Uses the non-interactive Agg backend so
runs work headless."""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .monitors import CSV_COLUMNS

_GROUPS = (
    ("energy", ("E_kin", "E_pot", "mass"), "linear"),
    ("functionals", ("A1", "A2", "A3", "rho_q0"), "linear"),
    ("pressure_deviation", ("p_dev_q1", "p_dev_q2", "p_dev_q3", "p_dev_q4", "p_dev_q6"), "linear"),
    ("boundary_flux", ("flux_direct", "flux_momentum"), "linear"),
    ("ode_residual", ("lq_ode_residual",), "log"),
    ("bootstrap_flags", ("bs_h_rho", "bs_h_a12", "bs_h_a3", "bs_c_rho", "bs_c_a12", "bs_c_a3"), "linear"),
)


def write_series(out_dir, name, x, y):
    """One series as two one-column text files, full double precision."""
    xp = os.path.join(out_dir, f"{name}_x.txt")
    yp = os.path.join(out_dir, f"{name}_y.txt")
    np.savetxt(xp, np.asarray(x, dtype=float), fmt="%.17g")
    np.savetxt(yp, np.asarray(y, dtype=float), fmt="%.17g")
    return [xp, yp]


def render_diagnostics(out_dir, rows):
    """Emit x/y text files for every ledger column plus grouped figures."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    t = np.array([row["t"] for row in rows], dtype=float)
    series = {
        name: np.array([row[name] for row in rows], dtype=float)
        for name in CSV_COLUMNS
        if name != "t"
    }
    for name, values in series.items():
        written += write_series(out_dir, name, t, values)
    for group, names, yscale in _GROUPS:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        drawn = False
        for name in names:
            vals = series[name]
            if np.isfinite(vals).any():
                ax.plot(t, vals, label=name, lw=1.2)
                drawn = True
        if not drawn:
            plt.close(fig)
            continue
        if yscale == "log":
            positive = np.concatenate([series[n][series[n] > 0] for n in names])
            if positive.size:
                ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.legend(loc="best", fontsize=8)
        ax.set_title(group.replace("_", " "))
        fig.tight_layout()
        path = os.path.join(out_dir, f"{group}.png")
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


def render_density(out_dir, grid, rho, name="final_density"):
    """Polar heat map of a scalar field (density by default)."""
    os.makedirs(out_dir, exist_ok=True)
    r_edges = np.arange(grid.nr + 1) * grid.dr
    th_edges = np.arange(grid.ntheta + 1) * grid.dtheta
    fig = plt.figure(figsize=(5.0, 4.2))
    ax = fig.add_subplot(projection="polar")
    mesh = ax.pcolormesh(th_edges, r_edges, np.asarray(rho), shading="flat")
    ax.set_yticklabels([])
    fig.colorbar(mesh, ax=ax, shrink=0.8)
    ax.set_title(name.replace("_", " "))
    path = os.path.join(out_dir, f"{name}.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
