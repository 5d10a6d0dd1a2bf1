import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diqkd.analytic import (
    KeyRateTerms,
    chsh_entropy,
    h_a_given_b,
    optimize_r0,
    preprocessing_gain,
    r0,
)
from diqkd.circuit import OPERATING_POINT, Behavior, apply_preprocessing, behavior, uniform_behavior
from diqkd.entropy import binary_entropy

from oracles import cond_entropy_table

getcontext().prec = 50


def h_dec(q):
    q = Decimal(q)
    one = Decimal(1)
    return float(-(q * q.ln() + (one - q) * (one - q).ln()) / Decimal(2).ln())


def test_binary_entropy_values():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == 0.0 and binary_entropy(1.0) == 0.0
    assert binary_entropy(0.11) == pytest.approx(h_dec("0.11"), abs=1e-15)
    assert binary_entropy(0.11) == pytest.approx(0.49992, abs=1e-5)


def _with_key(col):
    t = uniform_behavior().table.copy()
    t[:, :, 0, 0] = col
    return Behavior(t)


def test_h_a_given_b_extremes():
    assert h_a_given_b(_with_key([[0.5, 0.0], [0.0, 0.5]])) == 0.0
    assert h_a_given_b(_with_key([[0.25, 0.25], [0.25, 0.25]])) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        h_a_given_b(_with_key([[0.5, 0.5], [0.5, 0.0]]))


def test_h_a_given_b_operating_point():
    b = apply_preprocessing(behavior(OPERATING_POINT), OPERATING_POINT.p)
    assert h_a_given_b(b) == pytest.approx(cond_entropy_table(b.key_column), abs=1e-14)
    assert h_a_given_b(b) == pytest.approx(0.29974, abs=1e-5)


def test_r0_examples():
    assert r0(2 * math.sqrt(2), 0.0, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert r0(2.0, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    S, p, hab = 2.5, 0.1, 0.3
    arg1 = (Decimal(1) + ((Decimal(S) / 2) ** 2 - 1).sqrt()) / 2
    arg2 = (Decimal(1) + (1 - Decimal(p) * (1 - Decimal(p)) * (8 - Decimal(S) ** 2)).sqrt()) / 2
    ref = 1 - h_dec(arg1) + h_dec(arg2) - hab
    assert r0(S, p, hab) == pytest.approx(ref, abs=1e-14)
    with pytest.raises(ValueError):
        r0(1.9, 0.0, 0.0)
    with pytest.raises(ValueError):
        r0(2.5, 0.6, 0.0)


def test_key_rate_terms():
    t = KeyRateTerms(0.3, 0.1)
    assert t.rate == 0.3 - 0.1


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.0, 1.0))
def test_r0_monotone_in_score(p, hab):
    grid = np.linspace(2.0, 2 * math.sqrt(2), 40)
    vals = [r0(S, p, hab) for S in grid]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


@settings(max_examples=100, deadline=None)
@given(st.floats(2.0, 2 * math.sqrt(2)))
def test_preprocessing_term(S):
    assert preprocessing_gain(S, 0.0) == 0.0
    assert preprocessing_gain(S, 0.2) >= 0.0
    if S < 2 * math.sqrt(2) - 1e-6:
        assert preprocessing_gain(S, 0.2) > 0.0
    assert preprocessing_gain(2 * math.sqrt(2), 0.2) == pytest.approx(0.0, abs=1e-12)
    assert 0.0 <= chsh_entropy(S) <= 1.0


@pytest.mark.slow
@pytest.mark.parametrize("eta,check", [
    (1.0, lambda r: r > 0.2),
    (0.92, lambda r: r > 0.0),
    (0.80, lambda r: r <= 0.0),
])
def test_optimize_r0_regions(eta, check):
    params, rate = optimize_r0(eta, starts=4, seed=0)
    assert check(rate)
    assert rate <= 1.0
    assert params.eta == eta


def test_optimize_r0_is_deterministic():
    a = optimize_r0(0.95, starts=2, seed=5, maxiter=300)
    b = optimize_r0(0.95, starts=2, seed=5, maxiter=300)
    assert a == b
