"""ODE comparison bound: y' <= g(y) + b' implies y <= max(y0, zbar) + N0.

The hypotheses: g is continuous with g(y) -> -inf, the forcing increments
satisfy b(t2) - b(t1) <= N0 + N1 (t2 - t1), and zbar is any level above
which g stays at or below -N1.  The bound is verified here two ways: a
threshold finder plus closed-form bound, and brute-force integration of the
worst-case equality ODE y' = g(y) + b'.
"""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PiecewiseForcing:
    """Forcing described by segment slopes and nonnegative-or-not jumps.

    Segment i covers [breakpoints[i-1], breakpoints[i]) with constant slope
    slopes[i]; a jump in b occurs at each breakpoint.  Only positive jumps
    feed N0 and only positive slopes feed N1 (negative ones just help).
    """

    breakpoints: tuple = ()
    slopes: tuple = (0.0,)
    jumps: tuple = ()

    def __post_init__(self):
        bp = tuple(float(t) for t in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))
        object.__setattr__(self, "jumps", tuple(float(j) for j in self.jumps))
        if len(self.slopes) != len(bp) + 1:
            raise ValueError("need exactly one slope per segment (breakpoints + 1)")
        if len(self.jumps) != len(bp):
            raise ValueError("need exactly one jump per breakpoint")
        if any(t2 <= t1 for t1, t2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if bp and bp[0] <= 0:
            raise ValueError("breakpoints must be positive times")

    @property
    def n0(self):
        return sum(max(j, 0.0) for j in self.jumps)

    @property
    def n1(self):
        return max(0.0, max(self.slopes))

    def segments(self, t_end):
        """Yield (t_start, t_stop, slope, jump_at_start) covering [0, t_end]."""
        edges = [0.0] + [t for t in self.breakpoints if t < t_end] + [t_end]
        for i, (t1, t2) in enumerate(zip(edges[:-1], edges[1:])):
            jump = self.jumps[i - 1] if i > 0 else 0.0
            yield t1, t2, self.slopes[min(i, len(self.slopes) - 1)], jump


@dataclass
class ZlotnikInstance:
    g: callable
    y0: float
    forcing: PiecewiseForcing = field(default_factory=PiecewiseForcing)
    bracket_hi: float = 100.0


def find_zeta_bar(g, n1, lo=0.0, hi=100.0, samples=20001, tol=1e-10):
    """Smallest level zbar in [lo, hi] with g(y) <= -n1 for all y >= zbar.

    Scans for the last up-crossing of -n1, bisects it to tol, then spot
    checks the tail out to 10*hi.  Raises if g is still above -n1 at hi.
    """
    ys = np.linspace(lo, hi, samples)
    vals = np.array([g(y) for y in ys]) + n1
    if vals[-1] > 0:
        raise ValueError("g does not drop below -N1 by the top of the bracket")
    above = np.nonzero(vals > 0)[0]
    if above.size == 0:
        zeta = lo
    else:
        k = above[-1]
        a, b = ys[k], ys[k + 1]
        for _ in range(200):
            mid = 0.5 * (a + b)
            if g(mid) + n1 > 0:
                a = mid
            else:
                b = mid
            if b - a <= tol:
                break
        zeta = b
    tail = np.linspace(zeta, 10.0 * max(hi, 1.0), 4 * samples)
    tail_vals = np.array([g(y) for y in tail]) + n1
    if (tail_vals > 1e-9).any():
        bad = tail[tail_vals > 1e-9][0]
        raise ValueError("dissipation fails past the found level (g(%.6g) > -N1)" % bad)
    return float(zeta)


def zlotnik_bound(y0, zeta_bar, forcing):
    return max(float(y0), float(zeta_bar)) + forcing.n0


@dataclass
class BruteResult:
    y_max: float
    y_end: float
    steps: int
    converged: bool


def _integrate_once(g, y0, forcing, t_end, h, slack_fn=None, blow=1e8):
    """RK4 over each smooth segment, applying forcing jumps between them."""
    y = float(y0)
    y_max = y
    steps = 0
    for t1, t2, slope, jump in forcing.segments(t_end):
        y += jump
        y_max = max(y_max, y)
        n = max(1, int(math.ceil((t2 - t1) / h)))
        dt = (t2 - t1) / n
        for _ in range(n):
            extra = slack_fn(y) if slack_fn is not None else 0.0
            try:
                k1 = g(y) + slope - extra
                k2 = g(y + 0.5 * dt * k1) + slope - extra
                k3 = g(y + 0.5 * dt * k2) + slope - extra
                k4 = g(y + dt * k3) + slope - extra
            except OverflowError:
                return math.inf, math.inf, steps
            y += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            steps += 1
            if not math.isfinite(y) or abs(y) > blow:
                return math.inf, math.inf, steps
            y_max = max(y_max, y)
    return y_max, y, steps


def brute_force_ode(g, y0, forcing, t_end, rtol=1e-6, max_halvings=14, slack_fn=None):
    """Integrate y' = g(y) + b' (minus optional slack) with halving until the
    running maximum settles to rtol."""
    h = t_end / 200.0
    prev_max = None
    total = 0
    for _ in range(max_halvings):
        y_max, y_end, steps = _integrate_once(g, y0, forcing, t_end, h, slack_fn)
        total += steps
        if prev_max is not None and math.isfinite(y_max):
            scale = max(1.0, abs(y_max))
            if abs(y_max - prev_max) <= rtol * scale:
                return BruteResult(y_max, y_end, total, True)
        prev_max = y_max if math.isfinite(y_max) else None
        h /= 2.0
    return BruteResult(prev_max if prev_max is not None else math.inf, y_end, total, False)


# ----------------------------------------------------------------------
# fuzzing
# ----------------------------------------------------------------------


def _sample_case(rng, t_end):
    family = ["affine", "power", "logistic"][rng.integers(0, 3)]
    if family == "affine":
        a = rng.uniform(0.2, 3.0)
        c = rng.uniform(-2.0, 2.0)
        g = lambda y, a=a, c=c: c - a * y
        scale = abs(c) / a + 1.0
    elif family == "power":
        a = rng.uniform(0.2, 2.0)
        c = rng.uniform(-2.0, 2.0)
        k = int(rng.choice([1, 3, 5]))
        g = lambda y, a=a, c=c, k=k: c - a * y**k
        scale = (abs(c) / a) ** (1.0 / k) + 1.0
    else:
        a = rng.uniform(0.3, 2.0)
        big_l = rng.uniform(0.0, 2.0)
        s = rng.uniform(0.5, 2.0)
        c = rng.uniform(-1.0, 1.0)
        g = lambda y, a=a, L=big_l, s=s, c=c: c + L / (1.0 + math.exp(min(s * y, 700.0))) - a * y
        scale = (abs(c) + big_l) / a + 1.0
    y0 = rng.uniform(-1.0, 4.0)
    nb = int(rng.integers(0, 4))
    if nb:
        bps = np.sort(rng.uniform(0.1 * t_end, 0.9 * t_end, size=nb))
        # enforce strict spacing
        bps = tuple(float(b) + 1e-6 * i for i, b in enumerate(bps))
        jumps = tuple(float(j) for j in rng.uniform(0.0, 1.5, size=nb))
    else:
        bps, jumps = (), ()
    slopes = tuple(float(s) for s in rng.uniform(-0.5, 1.2, size=nb + 1))
    forcing = PiecewiseForcing(bps, slopes, jumps)
    hi = 10.0 * scale + abs(y0) + forcing.n0 + forcing.n1 + 10.0
    return family, g, y0, forcing, hi


def fuzz_check(seed=0, cases=100, t_end=20.0, slack=1e-6):
    """Random instances; verifies the comparison bound on every trajectory.

    Half the cases integrate a strict subsolution (rhs reduced by a random
    nonnegative margin), which the bound must also dominate.
    """
    rng = np.random.default_rng(seed)
    violations = 0
    max_excess = -math.inf
    family_counts = {"affine": 0, "power": 0, "logistic": 0}
    unconverged = 0
    for case in range(cases):
        family, g, y0, forcing, hi = _sample_case(rng, t_end)
        family_counts[family] += 1
        zeta = find_zeta_bar(g, forcing.n1, lo=-abs(y0) - 1.0, hi=hi)
        bound = zlotnik_bound(y0, zeta, forcing)
        margin = float(rng.uniform(0.0, 0.5)) if case % 2 else 0.0
        slack_fn = (lambda y, m=margin: m) if margin else None
        result = brute_force_ode(g, y0, forcing, t_end, slack_fn=slack_fn)
        if not result.converged:
            unconverged += 1
        excess = result.y_max - bound
        max_excess = max(max_excess, excess)
        if excess > slack:
            violations += 1
    return {
        "seed": int(seed),
        "cases": int(cases),
        "violations": int(violations),
        "max_excess": float(max_excess),
        "families": family_counts,
        "unconverged": int(unconverged),
        "slack": float(slack),
    }
