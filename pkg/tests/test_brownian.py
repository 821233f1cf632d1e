import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from affine_walk import model
from affine_walk.asymptotics import tail_curve
from affine_walk.brownian import BmQuery, bm_small_y_expansion, bm_tail, bm_tail_with_position, bm_two_sided_exit
from affine_walk.errors import InvalidArgumentError
from affine_walk.harmonic import Estimate


def levy_integral(y, n, sigma):
    f = lambda s: math.exp(-s * s / (2 * n * sigma * sigma))
    val, _ = integrate.quad(f, 0, y, epsabs=1e-14, epsrel=1e-13)
    return 2 / (math.sqrt(2 * math.pi * n) * sigma) * val


def test_tail_vanishes_at_zero():
    assert bm_tail(BmQuery(0.0, 1.0)) == 0.0


def test_tail_at_one_scale():
    q = BmQuery(2.0 * math.sqrt(3.0), 3.0, 2.0)
    assert bm_tail(q) == pytest.approx(0.6826895, abs=1e-7)
    # midpoint rule with 10^6 cells on the defining integral
    m = 10**6
    s = (np.arange(m) + 0.5) * q.y / m
    mid = 2 / (math.sqrt(2 * math.pi * q.n) * q.sigma) * np.sum(np.exp(-s**2 / (2 * q.n * q.sigma**2))) * q.y / m
    assert bm_tail(q) == pytest.approx(mid, abs=1e-11)


def test_tail_full_mass():
    assert bm_tail(BmQuery(100.0, 1.0)) >= 1 - 1e-15


def test_window_full_line_equals_tail():
    q = BmQuery(0.7, 2.0, 1.3, (0.0, math.inf))
    assert bm_tail_with_position(q) == pytest.approx(bm_tail(q), abs=1e-13)


def test_window_degenerate():
    assert bm_tail_with_position(BmQuery(1.0, 1.0, 1.0, (0.5, 0.5))) == 0.0


def test_window_against_quadrature():
    q = BmQuery(1.0, 1.0, 1.0, (0.0, 1.0))
    f = lambda s: (math.exp(-(s - 1) ** 2 / 2) - math.exp(-(s + 1) ** 2 / 2)) / math.sqrt(2 * math.pi)
    val, _ = integrate.quad(f, 0, 1, epsabs=1e-14, epsrel=1e-13)
    assert bm_tail_with_position(q) == pytest.approx(val, abs=1e-12)


def test_window_needs_window():
    with pytest.raises(InvalidArgumentError):
        bm_tail_with_position(BmQuery(1.0, 1.0))


@pytest.mark.parametrize("kw", [dict(y=-1, n=1), dict(y=1, n=0), dict(y=1, n=1, sigma=0), dict(y=1, n=1, window=(2, 1))])
def test_query_validation(kw):
    with pytest.raises(InvalidArgumentError):
        BmQuery(**kw)


def test_small_y_examples():
    q = BmQuery(0.01, 1.0)
    assert abs(bm_small_y_expansion(q)["ratio"] - 1) < 1e-4
    r = bm_small_y_expansion(BmQuery(0.5, 1.0))["ratio"]
    assert 0.02 <= abs(r - 1) <= 0.05
    z = bm_small_y_expansion(BmQuery(0.0, 4.0))
    assert z["linear"] == 0.0 and z["ratio"] == 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0.1, 1e4), st.floats(0.1, 3))
def test_tail_monotone_and_scale_invariant(y1, dy, n, sigma):
    q = BmQuery(y1, n, sigma)
    assert bm_tail(BmQuery(y1 + dy, n, sigma)) >= bm_tail(q)
    assert bm_tail(BmQuery(y1, n * 2, sigma)) <= bm_tail(q)
    assert bm_tail(q) == bm_tail(BmQuery(y1 / sigma, n, 1.0)) or math.isclose(
        bm_tail(q), bm_tail(BmQuery(y1 / sigma, n, 1.0)), rel_tol=1e-15, abs_tol=1e-16)


def test_strict_monotonicity_moderate_range():
    ys = np.linspace(0.1, 3, 30)
    vals = [bm_tail(BmQuery(float(y), 1.0)) for y in ys]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    ns = np.linspace(0.5, 5, 30)
    vals = [bm_tail(BmQuery(1.0, float(n))) for n in ns]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_partition_sums_to_tail():
    y, n, sigma = 0.8, 2.0, 1.5
    top = 10 * sigma * math.sqrt(n)
    edges = np.linspace(0, top, 1001)
    total = math.fsum(bm_tail_with_position(BmQuery(y, n, sigma, (lo, hi))) for lo, hi in zip(edges, edges[1:]))
    assert total == pytest.approx(bm_tail(BmQuery(y, n, sigma)), abs=1e-10)


def test_levy_integral_matches():
    for y, n, s in [(0.3, 1.0, 1.0), (2.0, 10.0, 0.5), (1.0, 100.0, 3.0)]:
        assert bm_tail(BmQuery(y, n, s)) == pytest.approx(levy_integral(y, n, s), abs=1e-12)


def test_two_sided_exit_against_reflection_sum():
    # P(sup |B| < 1 on [0, 1]) from the Fourier series of the killed heat kernel
    inside = math.fsum(4 / math.pi * (-1) ** k / (2 * k + 1) * math.exp(-((2 * k + 1) ** 2) * math.pi**2 / 8)
                       for k in range(50))
    assert bm_two_sided_exit(1.0, 1.0) == pytest.approx(1 - inside, abs=1e-12)


def test_walk_tail_approaches_brownian():
    n, y = 10**4, 10.0
    tc = tail_curve(model.ssrw(), 0.0, y, [n], 10**6, seed=2, v=Estimate(y, 0.0, 1, 0.0, 0))
    ref = bm_tail(BmQuery(y, n, 1.0))
    assert abs(tc.p_hat[0].mean / ref - 1) < 0.03
