import math

import numpy as np
import pytest

from affine_walk import model
from affine_walk.errors import DomainError, InvalidLawError
from affine_walk.harmonic import (
    Estimate,
    compare_v_w,
    estimate_v,
    estimate_w,
    harmonicity_residual,
    monotonicity_scan,
    one_step_harmonicity,
)
from affine_walk.model import PairLaw

FIXTURES = {k: model.FIXTURES[k]() for k in ("ssrw", "symmetric-half", "drifting-half")}


def test_ci95():
    e = Estimate(1.0, 0.5, 10, 0.0, 0)
    assert e.ci95 == (1.0 - 0.98, 1.0 + 0.98)


@pytest.mark.parametrize("y", [1.0, 2.0, 3.0, 5.0])
def test_ssrw_integer_y(y):
    e = estimate_v(model.ssrw(), 0.0, y, 20_000, 10**6, seed=1)
    assert e.mean == y and e.trusted


@pytest.mark.parametrize("y,expected", [(0.5, 1.0), (2.3, 3.0), (0.01, 1.0), (4.999, 5.0)])
def test_ssrw_non_integer_y_is_ceiling(y, expected):
    # first passage of S below -y happens exactly at -ceil(y): no overshoot
    e = estimate_v(model.ssrw(), 0.0, y, 5000, 10**6, seed=2)
    assert e.mean == expected


@pytest.mark.parametrize("name", list(FIXTURES))
def test_v_over_y_near_one_for_large_y(name):
    e = estimate_v(FIXTURES[name], 0.0, 200.0, 2000, 10**5, seed=1)
    assert 0.98 <= e.mean / 200 <= 1.02


@pytest.mark.parametrize("name", ["ssrw", "symmetric-half"])
def test_rho_zero_w_equals_v(name):
    law = FIXTURES[name]
    v = estimate_v(law, 0.0, 1.5, 50_000, 10**5, seed=3)
    w = estimate_w(law, 0.0, 1.5, 50_000, 10**5, seed=3)
    assert v.mean == w.mean and v.stderr == w.stderr and v.censor_rate == w.censor_rate


def test_w_dominates_v_negative_mean():
    out = compare_v_w(model.negative_mean(), 0.0, 5.0, 50_000, 10**6, seed=4)
    d = out["w_minus_v"]
    assert out["tau_le_T"]
    assert d.mean >= -3 * d.stderr
    assert out["w"].mean >= out["v"].mean - 3 * math.hypot(out["v"].stderr, out["w"].stderr)


def test_w_over_y_approaches_one():
    law = model.negative_mean()
    gaps = [abs(estimate_w(law, 0.0, y, 5000, 10**6, seed=5).mean / y - 1) for y in (2.0, 5.0, 10.0)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 0.02


def test_w_defined_for_negative_y():
    e = estimate_w(model.symmetric_half(), 3.0, -0.5, 5000, 10**5, seed=1)
    assert math.isfinite(e.mean)


def test_outside_dminus_rejected():
    with pytest.raises(DomainError):
        estimate_v(model.ssrw(), 0.0, -1.0, 100, 100)


def test_dminus_point_positive():
    e = estimate_v(model.symmetric_half(), -6.0, -1.0, 100_000, 10**6, seed=1)
    assert e.mean - 3 * e.stderr > 0


def test_biased_mode_obeys_optional_stopping():
    # E[M at min(tau, cap)] = 0 for every cap, so the biased proxy is centred at 0
    e = estimate_v(model.symmetric_half(), 0.0, 1.0, 100_000, 1000, seed=1, mode="biased")
    assert abs(e.mean) < 4 * e.stderr
    assert any("biased" in n for n in e.notes)


def test_untrusted_when_censored():
    e = estimate_v(model.ssrw(), 0.0, 1.0, 10_000, 10, seed=1)
    assert not e.trusted and e.censor_rate > 0.01


# ---- harmonicity ------------------------------------------------------------------------


def test_u0_is_y():
    out = harmonicity_residual(model.symmetric_half(), 0.0, 1.7, [0, 5], 1000, seed=1,
                               v=Estimate(1.0, 0.0, 1, 0.0, 0))
    assert out[0][1].mean == 1.7 and out[0][1].stderr == 0.0


def test_ssrw_killed_mean_converges():
    out = harmonicity_residual(model.ssrw(), 0.0, 3.0, [10, 100, 10**4], 10**5, seed=2)
    n, u, resid = out[-1]
    assert n == 10**4 and abs(resid) <= 3 * u.stderr


@pytest.mark.parametrize("name", ["symmetric-half", "drifting-half"])
def test_killed_mean_matches_v(name):
    law = FIXTURES[name]
    v = estimate_v(law, 0.0, 1.0, 10**5, 10**6, seed=3)
    out = harmonicity_residual(law, 0.0, 1.0, [10**4], 10**5, seed=4, v=v)
    _, u, resid = out[-1]
    assert abs(resid) <= 3 * math.hypot(u.stderr, v.stderr)


def test_drifting_killed_mean_monotone():
    out = harmonicity_residual(model.drifting_half(), 0.0, 2.0, [1, 10, 100, 1000, 10**4], 10**5, seed=5,
                               v=Estimate(1.0, 0.0, 1, 0.0, 0))
    for (_, a, _), (_, b, _) in zip(out, out[1:]):
        assert b.mean >= a.mean - 2 * math.hypot(a.stderr, b.stderr)


def test_one_step_ssrw():
    r = one_step_harmonicity(model.ssrw(), 0.0, 2.0, 4000, inner_replicas=10, seed=1, cap=10**5)
    assert abs(r.mean) <= 3 * r.stderr


def test_one_step_symmetric():
    r = one_step_harmonicity(model.symmetric_half(), 0.0, 1.0, 400, inner_replicas=2000, seed=2,
                             cap=10**5, ref_replicas=10**6)
    assert abs(r.mean) <= 3 * r.stderr


def test_null_law_rejected():
    with pytest.raises(InvalidLawError):
        PairLaw.joint_discrete([((0.0, 0.0), 1.0)])


# ---- monotonicity and lower bound --------------------------------------------------------


def test_scan_ssrw():
    pts = monotonicity_scan(model.ssrw(), 0.0, [1, 2, 3], 10_000, 10**6, seed=1)
    assert [p.v.mean for p in pts] == [1.0, 2.0, 3.0]


def test_scan_repeated_y_bit_exact():
    pts = monotonicity_scan(model.symmetric_half(), 0.0, [1.3, 1.3], 10_000, 10**5, seed=1)
    assert pts[0].v.mean == pts[1].v.mean and pts[1].paired_stderr == 0.0


@pytest.mark.parametrize("name", list(FIXTURES))
def test_scan_nondecreasing(name):
    pts = monotonicity_scan(FIXTURES[name], 0.5, [0.5, 1.0, 1.5, 2.5, 4.0], 20_000, 10**5, seed=2)
    for a, b in zip(pts, pts[1:]):
        assert b.v.mean >= a.v.mean - 3 * b.paired_stderr


def test_scan_drifting_ratio_approaches_one():
    pts = monotonicity_scan(model.drifting_half(), -1.0, [1, 5, 25, 125], 4000, 10**5, seed=1)
    gaps = [abs(p.v.mean / p.y - 1) for p in pts]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


@pytest.mark.parametrize("name", list(FIXTURES))
@pytest.mark.parametrize("x,y", [(0.0, 0.5), (-1.0, 2.0), (2.0, 1.0), (-3.0, 5.0)])
def test_lower_bound(name, x, y):
    law = FIXTURES[name]
    e = estimate_v(law, x, y, 20_000, 10**6, seed=6)
    assert e.mean >= max(0.0, y + law.rho * x) - 3 * e.stderr
    assert e.mean - 3 * e.stderr > 0
