import json
import math
from dataclasses import replace

import numpy as np
import pytest

from diqkd.analytic import optimize_r0
from diqkd.circuit import OPERATING_POINT, apply_preprocessing, behavior, best_chsh
from diqkd.analytic import h_a_given_b
from diqkd.entropy import h_cond_bound
from diqkd.keyrate import (
    chsh_threshold,
    EntropyCurve,
    IScore,
    chsh_iscore,
    entropy_curve,
    first_order_step,
    iscore_bounds,
    iscore_from_bound,
    knot_grid,
    local_values,
    optimize_keyrate,
    phi,
)

from oracles import binary_entropy

TOL = 1e-6
R2 = 2 * math.sqrt(2)


def test_chsh_bounds():
    sc = iscore_bounds(chsh_iscore(), monomials="npa1")
    assert (sc.i_c1, sc.i_c2) == (-2.0, 2.0)
    assert sc.i_q1 == pytest.approx(-R2, abs=1e-6)
    assert sc.i_q2 == pytest.approx(R2, abs=1e-6)
    assert (sc.i_min, sc.i_max) == (-4.0, 4.0)
    assert sc.i_q1 <= sc.i_c1 <= sc.i_c2 <= sc.i_q2


def test_zero_score_bounds():
    sc = iscore_bounds(IScore(np.zeros(16)))
    assert [sc.i_c1, sc.i_c2, sc.i_q1, sc.i_q2, sc.i_max, sc.i_min] == [0.0] * 6


def test_local_values_of_chsh():
    assert sorted(set(local_values(chsh_iscore()))) == [-2.0, 2.0]


# at unit efficiency the block value sits well above the pre-processing floor
POINT = replace(OPERATING_POINT, eta=1.0)


@pytest.fixture(scope="module")
def operating_score():
    b = behavior(POINT)
    bd = h_cond_bound(b, m=4, p=POINT.p, monomials="npa2")
    sc = iscore_bounds(iscore_from_bound(bd))
    return b, bd, sc


def test_block_dual_score_orientation(operating_score):
    b, bd, sc = operating_score
    i0 = sc.value(b)
    assert i0 == pytest.approx(-bd.raw_value, abs=max(bd.duality_gap, TOL))
    assert sc.i_q1 <= i0 <= sc.i_c1
    assert sc.i_q1 <= sc.i_c1 <= sc.i_c2 <= sc.i_q2
    assert sc.i_min <= sc.i_q1 and sc.i_q2 <= sc.i_max


def test_iscore_serialisation(operating_score):
    sc = operating_score[2]
    again = IScore.from_dict(json.loads(json.dumps(sc.to_dict())))
    assert np.array_equal(again.coeffs, sc.coeffs)
    assert again.i_q1 == sc.i_q1 and again.i_c1 == sc.i_c1


@pytest.fixture(scope="module")
def operating_curve(operating_score):
    b, bd, sc = operating_score
    return entropy_curve(sc, p=POINT.p, grid=5, m=4, extra=(sc.value(b),))


def test_curve_tangency(operating_score, operating_curve):
    b, bd, sc = operating_score
    i0 = sc.value(b)
    assert operating_curve(i0) == pytest.approx(bd.raw_value, abs=2 * TOL)
    assert operating_curve.derivative(i0) == pytest.approx(-1.0, abs=1e-3)


def test_curve_shape(operating_score, operating_curve):
    sc = operating_score[2]
    c = operating_curve
    secants = np.diff(c.knots_h) / np.diff(c.knots_i)
    assert np.all(np.diff(secants) >= -1e-9)
    h = binary_entropy(POINT.p)
    assert abs(c(sc.i_c1) - h) <= c.epsilon + 1e-12
    t = np.linspace(sc.i_q1, sc.i_c1 + 0.1, 300)
    v = c(t)
    assert np.all(np.diff(v) <= 1e-12)
    d = np.array([c.derivative(x) for x in t])
    assert np.all(np.diff(d) >= -1e-9)
    mid = 0.5 * (c.knots_i[1] + c.knots_i[2])
    fd = (c(mid + 1e-6) - c(mid - 1e-6)) / 2e-6
    assert c.derivative(mid) == pytest.approx(fd, abs=1e-6)


def test_curve_serialisation(operating_curve):
    again = EntropyCurve.from_dict(json.loads(json.dumps(operating_curve.to_dict())))
    for t in np.linspace(operating_curve.knots_i[0], operating_curve.knots_i[-1] + 0.05, 17):
        assert again(t) == operating_curve(t)


def test_chsh_curve_reaches_one():
    # the Tsirelson point itself is a degenerate SDP, so knots start just inside it
    sc = iscore_bounds(chsh_iscore())
    c = entropy_curve(sc, grid=4, m=8, margin=1e-3)
    first = c.knots_i[0]
    analytic = 1 - binary_entropy(0.5 + math.sqrt((first / 2) ** 2 - 1) / 2)
    # the quadrature converges slowly next to the maximal score
    assert c(first) == pytest.approx(analytic, abs=1.5e-2)
    assert c(first) <= analytic + TOL
    assert 0.97 <= c(sc.i_q1) <= 1.0 + TOL


def test_knot_grid_and_curve_errors():
    g = knot_grid(-1.0, 0.0, 6)
    assert g[0] == -1.0 and g[-1] == 0.0
    assert np.all(np.diff(np.diff(g)) < 0)
    with pytest.raises(ValueError):
        knot_grid(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        entropy_curve(chsh_iscore(), grid=3)


def test_curve_repairs_nonconvex_knots():
    c = EntropyCurve(np.array([0.0, 1.0, 2.0, 3.0]), np.array([1.0, 0.3, 0.5, 0.0]), None, 0.0)
    assert c.flags and len(c.knots_i) == 3


def test_first_order_step(operating_score):
    sc = operating_score[2]
    p0 = OPERATING_POINT
    new = first_order_step(p0, sc, slope=-1.0)
    assert phi(new, sc, -1.0) >= phi(p0, sc, -1.0) - 1e-12
    again = first_order_step(new, sc, slope=-1.0)
    assert phi(again, sc, -1.0) == pytest.approx(phi(new, sc, -1.0), abs=1e-9)
    # zero slope: only H(A1|B0) matters
    flat = first_order_step(p0, sc, slope=0.0, maxiter=400)
    h = lambda q: h_a_given_b(apply_preprocessing(behavior(q), q.p))
    assert phi(flat, sc, 0.0) == pytest.approx(-h(flat), abs=1e-15)
    assert h(flat) <= h(p0) + 1e-12
    assert flat.p == p0.p


def test_full_statistics_beat_chsh_at_same_behavior():
    params = replace(OPERATING_POINT, eta=1.0)
    b = behavior(params)
    full = h_cond_bound(b, m=4, p=params.p, monomials="npa2")
    chsh = h_cond_bound(min(best_chsh(b), R2), m=4, p=params.p, monomials="npa2")
    assert full.raw_value >= chsh.raw_value - 2 * TOL


def test_optimize_keyrate_rejects_zero_iterations():
    with pytest.raises(ValueError):
        optimize_keyrate(0.9, iterations=0, params0=OPERATING_POINT)


@pytest.mark.slow
def test_optimize_keyrate_beats_r0_at_high_efficiency():
    p_r0, r0 = optimize_r0(0.95, starts=4)
    res = optimize_keyrate(0.95, iterations=1, params0=p_r0, m=4, p_points=5)
    assert res.rate > r0
    assert res.h_ae - res.h_ab == pytest.approx(res.rate, abs=1e-15)


def test_chsh_threshold_on_coarse_grid():
    scan = chsh_threshold([1.0, 0.8, 0.9], starts=2)
    assert scan.threshold == 0.9
    assert scan.rates[0.8] <= 1e-5 < scan.rates[0.9] < scan.rates[1.0]
    assert scan.params[0.9].eta == 0.9
