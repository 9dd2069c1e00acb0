"""Run configuration: INI parsing with strict key checking.

Unknown sections or keys are hard errors so a typo cannot silently fall
back to a default.  All cross-field constraints are re-validated here by
constructing the parameter objects themselves.
"""

import configparser
import os
from dataclasses import dataclass, field

from .solver import AnalysisParams, FluidParams, InitConfig


class ConfigError(Exception):
    """Raised for missing files, syntax errors, unknown keys, bad values."""


_SCHEMA = {
    "fluid": ("mu", "lam", "a", "gamma", "rho_tilde", "radius"),
    "analysis": ("beta", "capital_m", "rho_bar"),
    "grid": ("nr", "ntheta"),
    "time": ("t_end", "dt", "cfl_safety", "checkpoint_every"),
    "init": (
        "seed",
        "density_amplitude",
        "velocity_amplitude",
        "max_mode",
        "target_e0",
        "pe_fraction",
    ),
    "output": ("directory", "emit_plots"),
}


@dataclass
class RunConfig:
    fluid: FluidParams = field(default_factory=FluidParams)
    analysis: AnalysisParams = None
    nr: int = 48
    ntheta: int = 48
    t_end: float = 0.25
    dt: float = None  # None = fixed step from the initial CFL bound
    cfl_safety: float = 0.4
    checkpoint_every: int = 0
    init: InitConfig = field(default_factory=lambda: InitConfig(
        density_amplitude=0.15, velocity_amplitude=0.15))
    out_dir: str = "out"
    emit_plots: bool = False

    def __post_init__(self):
        if self.analysis is None:
            self.analysis = AnalysisParams.for_fluid(self.fluid)


def _get(parser, section, key, cast, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    if raw == "":
        return default
    try:
        if cast is bool:
            return parser.getboolean(section, key)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def parse_config(path):
    """Read and fully validate an INI run configuration."""
    if not os.path.exists(path):
        raise ConfigError(f"no such config file: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    try:
        fluid = FluidParams(
            mu=_get(parser, "fluid", "mu", float, 1.0),
            lam=_get(parser, "fluid", "lam", float, 0.0),
            a=_get(parser, "fluid", "a", float, 1.0),
            gamma=_get(parser, "fluid", "gamma", float, 1.5),
            rho_tilde=_get(parser, "fluid", "rho_tilde", float, 1.0),
            radius=_get(parser, "fluid", "radius", float, 1.0),
        )
        analysis = AnalysisParams.for_fluid(
            fluid,
            beta=_get(parser, "analysis", "beta", float, 1.0),
            capital_m=_get(parser, "analysis", "capital_m", float, 10.0),
            rho_bar=_get(parser, "analysis", "rho_bar", float, None),
        )
        init = InitConfig(
            seed=_get(parser, "init", "seed", int, 0),
            density_amplitude=_get(parser, "init", "density_amplitude", float, 0.15),
            velocity_amplitude=_get(parser, "init", "velocity_amplitude", float, 0.15),
            max_mode=_get(parser, "init", "max_mode", int, 2),
            target_e0=_get(parser, "init", "target_e0", float, None),
            pe_fraction=_get(parser, "init", "pe_fraction", float, 0.5),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    dt_raw = _get(parser, "time", "dt", str, "auto")
    if isinstance(dt_raw, str) and dt_raw.lower() == "auto":
        dt = None
    else:
        try:
            dt = float(dt_raw)
        except ValueError as exc:
            raise ConfigError(f"[time] dt: expected 'auto' or a number, got {dt_raw!r}") from exc
        if dt <= 0:
            raise ConfigError("[time] dt must be positive")

    cfg = RunConfig(
        fluid=fluid,
        analysis=analysis,
        nr=_get(parser, "grid", "nr", int, 48),
        ntheta=_get(parser, "grid", "ntheta", int, 48),
        t_end=_get(parser, "time", "t_end", float, 0.25),
        dt=dt,
        cfl_safety=_get(parser, "time", "cfl_safety", float, 0.4),
        checkpoint_every=_get(parser, "time", "checkpoint_every", int, 0),
        init=init,
        out_dir=_get(parser, "output", "directory", str, "out"),
        emit_plots=_get(parser, "output", "emit_plots", bool, False),
    )
    if cfg.nr < 2 or cfg.ntheta < 4:
        raise ConfigError("grid must be at least 2 x 4")
    if cfg.t_end < 0:
        raise ConfigError("[time] t_end must be nonnegative")
    if not 0 < cfg.cfl_safety <= 1:
        raise ConfigError("[time] cfl_safety must lie in (0, 1]")
    if cfg.checkpoint_every < 0:
        raise ConfigError("[time] checkpoint_every must be nonnegative")
    return cfg


def describe(cfg):
    """Echo lines for the derived quantities a run is parameterized by."""
    f, an = cfg.fluid, cfg.analysis
    lines = [
        "fluid: mu=%g lam=%g a=%g gamma=%g rho_tilde=%g radius=%g"
        % (f.mu, f.lam, f.a, f.gamma, f.rho_tilde, f.radius),
        "analysis: beta=%g capital_m=%g rho_bar=%g" % (an.beta, an.capital_m, an.rho_bar),
        "derived: q0=%.17g delta0=%.17g sound_speed=%.17g"
        % (an.q0, an.delta0, f.sound_speed(f.rho_tilde)),
        "grid: %dx%d" % (cfg.nr, cfg.ntheta),
        "time: t_end=%g dt=%s cfl_safety=%g"
        % (cfg.t_end, "auto" if cfg.dt is None else "%g" % cfg.dt, cfg.cfl_safety),
    ]
    return lines
