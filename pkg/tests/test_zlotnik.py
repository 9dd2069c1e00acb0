import math

import numpy as np
import pytest

from discflow.zlotnik import (
    BruteResult,
    PiecewiseForcing,
    brute_force_ode,
    find_zeta_bar,
    fuzz_check,
    zlotnik_bound,
)


def test_forcing_counts_positive_parts_only():
    f = PiecewiseForcing((1.0, 2.0, 3.0), (-0.3, 0.7, -0.1, 0.2), (0.5, -2.0, 1.0))
    assert f.n0 == 1.5
    assert f.n1 == 0.7
    g = PiecewiseForcing((1.0,), (-0.5, -0.2), (-1.0,))
    assert g.n0 == 0.0
    assert g.n1 == 0.0


def test_forcing_validation():
    with pytest.raises(ValueError):
        PiecewiseForcing((2.0, 1.0), (0.0, 0.0, 0.0), (0.0, 0.0))
    with pytest.raises(ValueError):
        PiecewiseForcing((1.0,), (0.0,), (0.0,))
    with pytest.raises(ValueError):
        PiecewiseForcing((-1.0,), (0.0, 0.0), (0.0,))


def test_zeta_bar_pure_decay_is_zero():
    zeta = find_zeta_bar(lambda y: -y, 0.0, lo=0.0, hi=50.0)
    assert abs(zeta) <= 1e-9


def test_zeta_bar_affine_with_slope_budget():
    # 1 - y <= -1 exactly from y = 2 on.
    zeta = find_zeta_bar(lambda y: 1.0 - y, 1.0, lo=0.0, hi=50.0)
    assert abs(zeta - 2.0) <= 1e-9


def test_zeta_bar_transcendental_matches_bisection():
    g = lambda y: math.sin(y) - 0.5 * y
    # independent root solve of sin(y) = y/2 on [1.8, 2.0]
    a, b = 1.8, 2.0
    for _ in range(100):
        mid = 0.5 * (a + b)
        if math.sin(mid) - 0.5 * mid > 0:
            a = mid
        else:
            b = mid
    zeta = find_zeta_bar(g, 0.0, lo=0.0, hi=30.0)
    assert abs(zeta - b) <= 1e-8


def test_zeta_bar_returns_last_crossing():
    # cubic with sign pattern + - + - over roots 1, 2, 3: level must be 3
    g = lambda y: (y - 1.0) * (y - 2.0) * (3.0 - y)
    zeta = find_zeta_bar(g, 0.0, lo=0.0, hi=20.0)
    assert abs(zeta - 3.0) <= 1e-9


def test_zeta_bar_rejects_unbounded_growth():
    with pytest.raises(ValueError):
        find_zeta_bar(lambda y: 1.0, 0.0, lo=0.0, hi=10.0)


def test_bound_arithmetic():
    f = PiecewiseForcing((1.0,), (0.0, 0.0), (0.7,))
    assert zlotnik_bound(0.3, 2.0, f) == 2.7
    assert zlotnik_bound(5.0, 2.0, f) == 5.7


def test_brute_force_matches_exponential_decay():
    res = brute_force_ode(lambda y: -y, 5.0, PiecewiseForcing(), 2.0)
    assert res.converged
    np.testing.assert_allclose(res.y_end, 5.0 * math.exp(-2.0), rtol=1e-6)
    np.testing.assert_allclose(res.y_max, 5.0, rtol=1e-12)


def test_brute_force_with_ramp_forcing():
    # y' = (1 - y) + 1 relaxes to 2 from below
    forcing = PiecewiseForcing((), (1.0,), ())
    res = brute_force_ode(lambda y: 1.0 - y, 0.3, forcing, 1.7)
    expected = 2.0 - 1.7 * math.exp(-1.7)
    np.testing.assert_allclose(res.y_end, expected, rtol=1e-6)
    assert res.y_max <= 2.0 + 1e-9


def test_brute_force_jump_then_decay():
    forcing = PiecewiseForcing((1.0,), (0.0, 0.0), (1.0,))
    res = brute_force_ode(lambda y: -y, 0.0, forcing, 2.0)
    np.testing.assert_allclose(res.y_max, 1.0, rtol=1e-9)
    np.testing.assert_allclose(res.y_end, math.exp(-1.0), rtol=1e-5)


def test_brute_force_subsolution_stays_below():
    plain = brute_force_ode(lambda y: 1.0 - y, 0.0, PiecewiseForcing(), 4.0)
    slacked = brute_force_ode(
        lambda y: 1.0 - y, 0.0, PiecewiseForcing(), 4.0, slack_fn=lambda y: 0.25
    )
    assert slacked.y_max < plain.y_max


def test_bound_dominates_relaxation_with_jumps():
    g = lambda y: 0.8 - 1.3 * y
    forcing = PiecewiseForcing((2.0, 5.0), (0.4, -0.2, 0.1), (0.6, 0.9))
    zeta = find_zeta_bar(g, forcing.n1, lo=0.0, hi=50.0)
    # analytic threshold for an affine rhs: (c + N1) / a
    np.testing.assert_allclose(zeta, (0.8 + 0.4) / 1.3, rtol=1e-8)
    bound = zlotnik_bound(1.0, zeta, forcing)
    res = brute_force_ode(g, 1.0, forcing, 12.0)
    assert res.converged
    assert res.y_max <= bound + 1e-9


def test_fuzz_zero_violations_and_deterministic():
    rep1 = fuzz_check(seed=123, cases=25, t_end=12.0)
    rep2 = fuzz_check(seed=123, cases=25, t_end=12.0)
    assert rep1 == rep2
    assert rep1["violations"] == 0
    assert rep1["max_excess"] <= 1e-6
    assert rep1["unconverged"] == 0
    assert sum(rep1["families"].values()) == 25
