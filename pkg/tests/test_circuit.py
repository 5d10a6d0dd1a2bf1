import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diqkd.circuit import (
    OPERATING_POINT,
    Behavior,
    CircuitDomainError,
    CircuitParams,
    apply_preprocessing,
    behavior,
    best_chsh,
    chsh_score,
    deterministic_behavior,
    p_no_click_joint,
    p_no_click_marginal,
    uniform_behavior,
)

from oracles import fock_no_click

amp = st.floats(-0.6, 0.6)
squeeze = st.floats(0.0, 0.6)
eff = st.floats(0.0, 1.0)


def test_zero_efficiency_never_clicks():
    assert p_no_click_joint(0.5, 0.0, 0.3, -0.2) == pytest.approx(1.0, abs=1e-15)
    assert p_no_click_marginal(0.5, 0.0, 0.7) == pytest.approx(1.0, abs=1e-15)


def test_vacuum_weight_of_squeezed_vacuum():
    assert p_no_click_joint(0.5, 1.0, 0.0, 0.0) == pytest.approx(0.75, abs=1e-15)
    assert p_no_click_marginal(0.5, 1.0, 0.0) == pytest.approx(0.75, abs=1e-15)


@pytest.mark.parametrize("alpha,beta", [(0.024, 0.013), (-0.521, -0.104), (0.3, 0.5)])
def test_joint_matches_fock_truncation(alpha, beta):
    ref, ref_a, ref_b = fock_no_click(0.249, 0.875, alpha, beta)
    assert p_no_click_joint(0.249, 0.875, alpha, beta) == pytest.approx(ref, abs=1e-10)
    assert p_no_click_marginal(0.249, 0.875, alpha) == pytest.approx(ref_a, abs=1e-10)
    assert p_no_click_marginal(0.249, 0.875, beta) == pytest.approx(ref_b, abs=1e-10)


def test_operating_point_behavior_matches_oracle():
    b = behavior(OPERATING_POINT)
    for xi, a in enumerate(OPERATING_POINT.alphas):
        for y, bb in enumerate(OPERATING_POINT.betas):
            joint, ma, mb = fock_no_click(0.249, 0.875, a, bb)
            assert b.table[0, 0, xi, y] == pytest.approx(joint, abs=1e-10)
            assert b.table[0, 1, xi, y] == pytest.approx(ma - joint, abs=1e-10)
            assert b.table[1, 0, xi, y] == pytest.approx(mb - joint, abs=1e-10)


def test_domain_errors():
    with pytest.raises(CircuitDomainError):
        p_no_click_joint(1.0, 0.5, 0.1, 0.1)
    with pytest.raises(CircuitDomainError):
        p_no_click_marginal(0.3, 1.2, 0.1)
    with pytest.raises(ValueError):
        CircuitParams(0.2, 0.9, zeta=0.9, chi=0.9)
    with pytest.raises(CircuitDomainError):
        apply_preprocessing(behavior(OPERATING_POINT), 0.6)


def test_zero_efficiency_behavior_is_deterministic():
    b = behavior(CircuitParams(0.3, 0.0, (0.2, -0.4), (0.1, 0.3, -0.2)))
    for x in (1, 2):
        for y in (0, 1, 2):
            assert b(0, 0, x, y) == pytest.approx(1.0, abs=1e-15)


def test_no_leakage_uses_single_mode_forms():
    params = CircuitParams(0.3, 0.8, (0.2, -0.4), (0.1, 0.3, -0.2))
    b = behavior(params)
    assert b(0, 0, 2, 1) == p_no_click_joint(0.3, 0.8, -0.4, 0.3)
    assert b.marginal_a(0, 1) == pytest.approx(p_no_click_marginal(0.3, 0.8, 0.2), abs=1e-15)


def test_leakage_one_is_bit_identical():
    base = CircuitParams(0.3, 0.8, (0.2, -0.4), (0.1, 0.3, -0.2))
    for kw in ({"zeta": 1.0}, {"chi": 1.0}):
        other = CircuitParams(0.3, 0.8, (0.2, -0.4), (0.1, 0.3, -0.2), **kw)
        assert np.array_equal(behavior(base).table, behavior(other).table)


def test_squeezer_leakage_conserves_t_squared():
    # the leaked pair is a product factor: an undisplaced squeezed vacuum of T^2 (1 - zeta)
    T, zeta = 0.4, 0.7
    params = CircuitParams(T, 0.9, (0.2, 0.0), (0.0, 0.0, 0.0), zeta=zeta)
    b = behavior(params)
    expect = p_no_click_joint(math.sqrt(zeta) * T, 0.9, 0.0, 0.0) * p_no_click_joint(
        math.sqrt(1 - zeta) * T, 0.9, 0.0, 0.0)
    assert b(0, 0, 2, 1) == pytest.approx(expect, rel=1e-14)
    assert (math.sqrt(zeta) * T) ** 2 + (math.sqrt(1 - zeta) * T) ** 2 == pytest.approx(T * T, rel=1e-15)


def test_displacement_leakage_conserves_amplitude():
    # with no squeezing the displacement split is a coherent-state split: nothing changes
    params = CircuitParams(0.0, 0.7, (0.3, -0.5), (0.2, 0.1, 0.4), chi=0.6)
    ref = CircuitParams(0.0, 0.7, (0.3, -0.5), (0.2, 0.1, 0.4))
    assert np.allclose(behavior(params).table, behavior(ref).table, atol=1e-14)


def test_preprocessing():
    b = behavior(OPERATING_POINT)
    assert np.array_equal(apply_preprocessing(b, 0.0).table, b.table)
    half = apply_preprocessing(b, 0.5)
    key = b.key_column
    for bb in (0, 1):
        avg = 0.5 * (key[0, bb] + key[1, bb])
        assert half.key_column[0, bb] == pytest.approx(avg, abs=1e-15)
        assert half.key_column[1, bb] == pytest.approx(avg, abs=1e-15)
    pre = apply_preprocessing(b, 0.042)
    direct = 0.958 * key + 0.042 * key[::-1, :]
    assert np.allclose(pre.key_column, direct, atol=1e-16)
    # test columns untouched
    assert np.array_equal(pre.table[:, :, :, 1:], b.table[:, :, :, 1:])


def test_chsh_simple_behaviors():
    assert chsh_score(uniform_behavior()) == pytest.approx(0.0, abs=1e-15)
    assert chsh_score(deterministic_behavior()) == pytest.approx(2.0, abs=1e-15)


def test_chsh_at_unit_efficiency_from_oracle():
    params = CircuitParams(0.249, 1.0, OPERATING_POINT.alphas, OPERATING_POINT.betas)
    E = {}
    for xi, a in enumerate(params.alphas):
        for yi, bb in ((1, params.betas[1]), (2, params.betas[2])):
            j, ma, mb = fock_no_click(0.249, 1.0, a, bb)
            p = np.array([[j, ma - j], [mb - j, 1 - ma - mb + j]])
            E[(xi + 1, yi)] = p[0, 0] + p[1, 1] - p[0, 1] - p[1, 0]
    ref = E[(1, 1)] + E[(1, 2)] + E[(2, 1)] - E[(2, 2)]
    assert chsh_score(behavior(params)) == pytest.approx(ref, abs=1e-10)


def test_operating_point_chsh_values():
    b = behavior(OPERATING_POINT)
    assert chsh_score(b) == pytest.approx(1.838852, abs=1e-6)
    assert best_chsh(b) == pytest.approx(2.018832, abs=1e-6)


def test_behavior_test_vector_roundtrip():
    b = behavior(OPERATING_POINT)
    again = Behavior.from_test_vector(b.test_vector(), key=b.key_column)
    assert np.allclose(again.table[:, :, :, 1:], b.table[:, :, :, 1:])
    assert np.allclose(again.key_column, b.key_column)


def test_params_serialisation_roundtrip():
    d = OPERATING_POINT.to_dict()
    assert CircuitParams.from_dict(d) == OPERATING_POINT


@settings(max_examples=60, deadline=None)
@given(squeeze, st.floats(0.0, 0.95), amp, amp)
def test_joint_nonincreasing_in_efficiency(T, eta, a, b):
    assert p_no_click_joint(T, eta + 0.05, a, b) <= p_no_click_joint(T, eta, a, b) + 1e-14


@settings(max_examples=60, deadline=None)
@given(squeeze, eff, st.tuples(amp, amp), st.tuples(amp, amp, amp), st.floats(0.0, 0.5))
def test_behavior_is_valid_quantum_point(T, eta, alphas, betas, p):
    params = CircuitParams(T, eta, alphas, betas, p=p)
    b = behavior(params)
    assert b.signaling_error() < 1e-12
    b = behavior(params, preprocess=True)
    assert b.normalization_error() < 1e-12
    # pre-processing only touches the key column
    assert b.signaling_error(include_key=False) < 1e-12
    assert np.all(b.table >= -1e-14)
    assert abs(chsh_score(b)) <= 2 * math.sqrt(2) + 1e-9
    assert best_chsh(b) <= 2 * math.sqrt(2) + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([0.1, 0.25, 0.5]), st.sampled_from([0.5, 0.875, 1.0]), amp, amp)
def test_closed_forms_against_oracle_property(T, eta, a, b):
    joint, ma, mb = fock_no_click(T, eta, a, b)
    assert p_no_click_joint(T, eta, a, b) == pytest.approx(joint, abs=1e-10)
    assert p_no_click_marginal(T, eta, a) == pytest.approx(ma, abs=1e-10)


def test_relabelled_chsh_forms():
    b = behavior(CircuitParams(0.4, 0.95, (0.1, -0.5), (0.0, -0.3, 0.2)))
    E = {(x, y): sum((-1) ** (a + bb) * b(a, bb, x, y) for a, bb in itertools.product((0, 1), repeat=2))
         for x in (1, 2) for y in (1, 2)}
    forms = []
    for odd in E:
        s = sum(E.values()) - 2 * E[odd]
        forms += [s, -s]
    assert best_chsh(b) == pytest.approx(max(forms), abs=1e-14)
