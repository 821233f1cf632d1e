import math

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import kstest

from affine_walk import model
from affine_walk.asymptotics import (
    clt_distance,
    conditional_law,
    default_t_grid,
    ks_statistic,
    loglog_fit,
    rayleigh_cdf,
    tail_curve,
    tau_moment,
)
from affine_walk.errors import InsufficientSurvivorsError, InvalidArgumentError
from affine_walk.harmonic import Estimate
from affine_walk.walk import exit_batches

from oracles import ssrw_capped_moment, ssrw_survival_enum

FIXTURES = {k: model.FIXTURES[k]() for k in ("ssrw", "symmetric-half", "drifting-half")}
EXACT_V1 = Estimate(1.0, 0.0, 1, 0.0, 0)


# ---- Rayleigh and statistics ---------------------------------------------------------------


def test_rayleigh_values():
    assert rayleigh_cdf(0.0) == 0.0 and rayleigh_cdf(-3.0) == 0.0
    assert rayleigh_cdf(50.0) == 1.0
    assert rayleigh_cdf(2.0) == pytest.approx(0.864665, abs=1e-6)
    assert rayleigh_cdf(1.0) == pytest.approx(0.393469, abs=1e-6)
    assert rayleigh_cdf(math.sqrt(2 * math.log(2))) == pytest.approx(0.5, abs=1e-15)
    t = np.linspace(-1, 6, 200)
    assert np.all(np.diff(rayleigh_cdf(t)) >= 0)


def test_default_grid():
    g = default_t_grid()
    assert g.size == 64 and g[0] > 0 and g[-1] == 4.0 and np.all(np.diff(g) > 0)


def test_ks_inverse_transform_samples():
    u = np.random.default_rng(1).random(10**5)
    z = np.sort(np.sqrt(-2 * np.log1p(-u)))
    assert ks_statistic(z, rayleigh_cdf) < 1.63 / math.sqrt(10**5)


def test_ks_matches_scipy():
    z = np.sort(np.random.default_rng(2).normal(size=500))
    assert ks_statistic(z, ndtr) == pytest.approx(kstest(z, "norm").statistic, abs=1e-14)


def test_ks_degenerate_input():
    with pytest.raises(InvalidArgumentError):
        ks_statistic([1.0], rayleigh_cdf)
    with pytest.raises(InvalidArgumentError):
        ks_statistic([2.0, 1.0], rayleigh_cdf)


def test_loglog_exact_power_law():
    pairs = [(n, n**-0.5) for n in (10, 100, 1000, 10**4)]
    slope, se = loglog_fit(pairs)
    assert slope == pytest.approx(-0.5, abs=1e-12)
    slope_w, _ = loglog_fit(pairs, [1e-3 * p for _, p in pairs])
    assert slope_w == pytest.approx(-0.5, abs=1e-12)


def test_loglog_constant():
    assert loglog_fit([(1, 0.3), (10, 0.3), (100, 0.3)])[0] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("pairs", [[(1, 1), (2, 1)], [(1, 1), (1, 2), (1, 3)], [(1, 0), (2, 1), (3, 1)]])
def test_loglog_degenerate(pairs):
    with pytest.raises(InvalidArgumentError):
        loglog_fit(pairs)


# ---- tails ---------------------------------------------------------------------------------


def test_ssrw_n10():
    tc = tail_curve(model.ssrw(), 0.0, 1.0, [10], 10**6, seed=1, v=EXACT_V1)
    assert abs(tc.p_hat[0].mean - 252 / 1024) < 4 * tc.p_hat[0].stderr


@pytest.mark.parametrize("y", [1.0, 2.0, 3.0])
def test_ssrw_tail_matches_enumeration(y):
    grid = list(range(1, 17))
    tc = tail_curve(model.ssrw(), 0.0, y, grid, 10**6, seed=int(y), v=Estimate(y, 0.0, 1, 0.0, 0))
    for n, e in zip(grid, tc.p_hat):
        exact = ssrw_survival_enum(y, n)
        band = 4 * math.sqrt(exact * (1 - exact) / 10**6)
        assert abs(e.mean - exact) <= band + 1e-12


def test_tail_monotone():
    tc = tail_curve(model.symmetric_half(), 0.0, 1.0, [1, 3, 10, 30, 100, 300, 1000], 10**5, seed=2, v=EXACT_V1)
    p = [e.mean for e in tc.p_hat]
    assert all(b <= a for a, b in zip(p, p[1:]))


def test_tail_grid_validated():
    with pytest.raises(InvalidArgumentError):
        tail_curve(model.ssrw(), 0.0, 1.0, [0, 10], 100, v=EXACT_V1)
    with pytest.raises(InvalidArgumentError):
        tail_curve(model.ssrw(), 0.0, 1.0, [10, 10], 100, v=EXACT_V1)


def test_untrusted_v_omits_ratios():
    bad = Estimate(1.0, 0.1, 10, 0.5, 0, trusted=False)
    with pytest.warns(RuntimeWarning):
        tc = tail_curve(model.ssrw(), 0.0, 1.0, [10, 100, 1000], 1000, v=bad)
    assert tc.ratios is None and tc.warnings


@pytest.mark.parametrize("name", list(FIXTURES))
def test_ratio_drifts_toward_one(name):
    tc = tail_curve(FIXTURES[name], 0.0, 1.0, [10, 100, 1000, 10**4], 10**6, seed=3,
                    v_replicas=10**5, v_cap=10**6)
    r, se = tc.ratios, tc.ratio_stderr
    assert abs(r[-1] - 1) < abs(r[0] - 1) + 2 * math.hypot(se[0], se[-1])


# ---- conditional law --------------------------------------------------------------------------


def test_conditional_cdf_nondecreasing():
    rep = conditional_law(model.ssrw(), 0.0, 1.0, 1000, 10**6, seed=1)
    assert np.all(np.diff(rep.empirical_cdf) >= 0)
    assert rep.survivors > 10**4 and len(rep.t_grid) == 64


@pytest.mark.filterwarnings("ignore:only .* survivors")
@pytest.mark.parametrize("name", list(FIXTURES))
def test_ks_improves_with_n(name):
    law = FIXTURES[name]
    k2 = conditional_law(law, 0.0, 1.0, 100, 10**6, seed=4)
    k4 = conditional_law(law, 0.0, 1.0, 10**4, 10**6, seed=4)
    # KS standard deviation is about 0.27 / sqrt(survivors)
    assert k4.ks_stat < k2.ks_stat + 2 * 0.27 / math.sqrt(k4.survivors)


def test_no_survivors():
    law = model.ssrw()
    seed = next(s for s in range(100)
                if not np.any(exit_batches(law, 0.0, 1.0, 100, 3, seed=s, tag="survival")[0][0] == 0))
    with pytest.raises(InsufficientSurvivorsError):
        conditional_law(law, 0.0, 1.0, 100, 3, seed=seed)


def test_few_survivors_warn():
    with pytest.warns(RuntimeWarning):
        rep = conditional_law(model.ssrw(), 0.0, 1.0, 100, 10**4, seed=1)
    assert rep.warnings


# ---- tau moments --------------------------------------------------------------------------------


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.5])
def test_gamma_domain(gamma):
    with pytest.raises(InvalidArgumentError):
        tau_moment(model.ssrw(), 0.0, 1.0, gamma, 100, 100)


@pytest.mark.parametrize("gamma", [0.25, 0.5])
@pytest.mark.parametrize("cap", [10**3, 10**4])
def test_capped_moment_matches_exact(gamma, cap):
    e = tau_moment(model.ssrw(), 0.0, 1.0, gamma, 10**5, cap, seed=1)
    assert abs(e.mean - ssrw_capped_moment(gamma, cap)) < 4 * e.stderr
    assert e.lower_bound and e.censor_rate > 0


# ---- CLT distance ------------------------------------------------------------------------------


def test_clt_two_point_law():
    u = np.linspace(-4, 4, 1024)
    exact = float(np.max(np.abs(np.where(u < -1, 0.0, np.where(u < 1, 0.5, 1.0)) - ndtr(u))))
    assert exact == pytest.approx(ndtr(1.0) - 0.5, abs=5e-3)
    d = clt_distance(model.ssrw(), 0.0, 1, 10**5, seed=1)
    # DKW band at confidence 1 - 1e-6
    assert abs(d - exact) < math.sqrt(math.log(2 / 1e-6) / (2 * 10**5))


def test_clt_large_n():
    assert clt_distance(model.ssrw(), 0.0, 10**4, 10**6, seed=2) < 0.01


@pytest.mark.parametrize("name", list(FIXTURES))
def test_clt_decreases(name):
    law = FIXTURES[name]
    d = [clt_distance(law, 0.0, n, 10**5, seed=3) for n in (100, 1000, 10**4)]
    noise = 2 * math.sqrt(math.log(2 / 0.01) / (2 * 10**5))
    assert d[1] <= d[0] + noise and d[2] <= d[1] + noise
