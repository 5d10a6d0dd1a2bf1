"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line (visible even
without ``-s``) and then asserts.  Run with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from diqkd.analytic import optimize_r0, r0_of_params
from diqkd.circuit import (
    OPERATING_POINT,
    CircuitParams,
    apply_preprocessing,
    behavior,
    best_chsh,
    p_no_click_joint,
    p_no_click_marginal,
)
from diqkd.entropy import dual_functional, extract_iscore, h_cond_bound, h_joint_bound
from diqkd.finite import (
    SecurityParams,
    i_threshold,
    key_length,
    minimum_rounds,
    setup_from_params,
    simulate_rounds,
)
from diqkd.keyrate import block_rate, block_threshold, chsh_threshold, iscore_bounds, iscore_from_bound
from diqkd.npa import gauss_radau

from oracles import binary_entropy, fock_no_click

pytestmark = pytest.mark.slow

# rate below which a key is treated as absent when locating efficiency thresholds
RATE_CUT = 1e-5
# common factor on Bob's displacements that turns the quoted point into a key-producing one
BETA_SCALE = math.pi


def rescaled_point():
    return replace(OPERATING_POINT, betas=tuple(BETA_SCALE * b for b in OPERATING_POINT.betas))


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def test_c01_circuit_matches_fock_oracle(report):
    t0 = time.perf_counter()
    worst = 0.0
    for T in (0.1, 0.25, 0.4):
        for eta in (0.5, 0.875, 1.0):
            for a in np.linspace(-0.6, 0.6, 5):
                for b in np.linspace(-0.6, 0.6, 5):
                    joint, ma, mb = fock_no_click(T, eta, a, b, n_max=30)
                    worst = max(worst,
                                abs(p_no_click_joint(T, eta, a, b) - joint),
                                abs(p_no_click_marginal(T, eta, a) - ma),
                                abs(p_no_click_marginal(T, eta, b) - mb))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-10 and secs < 60
    assert report(1, ok, f"max |closed form - Fock| = {worst:.2e} over 225 points, {secs:.1f}s")


def test_c02_gauss_radau(report):
    worst = 0.0
    for m in range(1, 13):
        q = gauss_radau(m)
        assert q.nodes[-1] == 1.0
        for k in range(2 * m - 1):
            worst = max(worst, abs(q.weights @ q.nodes**k - 1.0 / (k + 1)))
    q2 = gauss_radau(2)
    small = np.allclose(q2.nodes, [1 / 3, 1], atol=1e-15) and np.allclose(q2.weights, [0.75, 0.25], atol=1e-15)
    ok = worst <= 1e-13 and small
    assert report(2, ok, f"max moment error {worst:.1e} for m=1..12, m=2 rule {'matches' if small else 'differs'}")


def test_c03_chsh_tightness(report):
    t0 = time.perf_counter()
    rows, ok = [], True
    for S in (2.2, 2.4, 2.6, 2.75):
        bd = h_cond_bound(S, m=12, monomials="npa2")
        ref = 1 - binary_entropy(0.5 + math.sqrt((S / 2) ** 2 - 1) / 2)
        ok &= ref - 3e-3 <= bd.raw_value <= ref + 1e-6
        rows.append(f"S={S}: {bd.raw_value:.6f} vs {ref:.6f}")
    secs = time.perf_counter() - t0
    ok &= secs < 600
    assert report(3, ok, "; ".join(rows) + f" ({secs:.0f}s)")


# a circuit point that violates CHSH clearly at high efficiency
NONLOCAL_POINT = CircuitParams(0.34, 0.95, (0.031, -0.58), (-0.02, -0.37, 0.16))


def random_nonlocal_circuit(rng, min_chsh=2.03):
    """Random perturbation of a nonlocal point, redrawn until it violates CHSH by ``min_chsh``."""
    while True:
        v = NONLOCAL_POINT.vector() + rng.normal(0, 0.05, 6)
        params = CircuitParams(abs(v[0]), rng.uniform(0.9, 1.0), tuple(v[1:3]), tuple(v[3:6]),
                               p=rng.uniform(0.0, 0.1))
        if best_chsh(behavior(params)) >= min_chsh:
            return params


def test_c04_hierarchy_ordering(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, lines = -np.inf, []
    for _ in range(5):
        params = random_nonlocal_circuit(rng)
        b = behavior(params, preprocess=True)
        v = [h_cond_bound(b, m=4, mode=mode, monomials="local1", p=params.p).raw_value
             for mode in ("split", "block", "full")]
        worst = max(worst, v[0] - v[1], v[1] - v[2])
        lines.append("/".join(f"{x:.5f}" for x in v))
    secs = time.perf_counter() - t0
    ok = worst <= 2e-6 and secs < 300
    assert report(4, ok, f"split/block/full: {', '.join(lines)}; worst violation {worst:.1e} ({secs:.0f}s)")


def test_c05_joint_entropy_benchmark(report):
    ms = (2, 4, 6, 8, 10, 12)
    block = [h_joint_bound(2.3, m=m, monomials="local1") for m in ms]
    split = h_joint_bound(2.3, m=12, mode="split", monomials="local1")
    vals = [bd.raw_value for bd in block]
    mono = all(b >= a - 2e-6 for a, b in zip(vals, vals[1:]))
    margin = vals[-1] - split.raw_value
    ok = mono and margin > 0
    statuses = ",".join(bd.solver_status for bd in block)
    assert report(5, ok, f"block m=2..12: {[round(v, 5) for v in vals]} [{statuses}]; "
                         f"block-split at m=12 = {margin:.4f} [{split.solver_status}]")


def test_c06_certificate_soundness(report):
    p = OPERATING_POINT.p
    b0 = behavior(OPERATING_POINT, preprocess=True)
    bd0 = h_cond_bound(b0, m=8, monomials="npa2", p=p)
    lam = extract_iscore(bd0)
    rng = np.random.default_rng(6)
    worst = -np.inf
    for _ in range(20):
        v = OPERATING_POINT.vector() + rng.normal(0, 0.03, 6)
        v[0] = abs(v[0])
        params = CircuitParams(v[0], min(1.0, OPERATING_POINT.eta + rng.normal(0, 0.02)),
                               tuple(v[1:3]), tuple(v[3:6]), p=p)
        b = behavior(params, preprocess=True)
        fresh = h_cond_bound(b, m=8, monomials="npa2", p=p)
        worst = max(worst, dual_functional(lam, b) - fresh.raw_value)
    ok = worst <= 2e-6
    assert report(6, ok, f"max (certificate - fresh bound) over 20 behaviors = {worst:.2e}")


def test_c07_asymptotic_headline(report):
    t0 = time.perf_counter()
    res = block_rate(OPERATING_POINT, m=12)
    r0 = r0_of_params(OPERATING_POINT)
    secs = time.perf_counter() - t0
    alt = rescaled_point()
    diag = block_rate(alt, m=12)
    ok = res.rate > 0 and res.rate > r0 and secs < 1800
    assert report(7, ok, f"quoted point: r_block={res.rate:.5f} (H_AE={res.h_ae:.5f}, H_AB={res.h_ab:.5f}), "
                         f"r0={r0:.5f} ({secs:.0f}s); diagnostic betas x{BETA_SCALE:.4f}: "
                         f"r_block={diag.rate:.5f}, r0={r0_of_params(alt):.5f}")


def _finite_summary(params):
    setup = setup_from_params(params, m=8, grid=10)
    rep = key_length(setup, 3e10, SecurityParams.from_soundness(3e-10))
    mr = minimum_rounds(setup, SecurityParams.from_soundness(3e-10), (6.0, 13.0), 20)
    return rep, mr


def test_c08_finite_size_headline(report):
    rep, mr = _finite_summary(OPERATING_POINT)
    ok = rep.l > 0 and 1e10 <= mr.n_min <= 1e11
    rep2, mr2 = _finite_summary(rescaled_point())
    assert report(8, ok, f"quoted point: l(3e10)={rep.raw:.3e}, n_min={mr.n_min:.3e}; "
                         f"diagnostic betas x{BETA_SCALE:.4f}: l(3e10)={rep2.raw:.3e}, n_min={mr2.n_min:.3e}")


def test_c09_full_statistics_lower_threshold(report):
    grid = [round(0.80 + 0.005 * k, 4) for k in range(31)]
    chsh = chsh_threshold(grid, cut=RATE_CUT).threshold
    scan = block_threshold(chsh, floor=grid[0], cut=RATE_CUT)
    full, rates = scan.threshold, scan.rates
    gap = chsh - full if full is not None else -math.inf
    ok = gap >= 0.02 - 1e-9
    assert report(9, ok, f"CHSH threshold {chsh:.3f}, full-statistics threshold {full}, gap {gap:.3f}; "
                         f"full rates {', '.join(f'{e}:{r:.2e}' for e, r in rates.items())}")


def test_c10_threshold_calibration(report):
    b = behavior(OPERATING_POINT)
    bd = h_cond_bound(apply_preprocessing(b, OPERATING_POINT.p), m=4, monomials="npa2", p=OPERATING_POINT.p)
    score = iscore_bounds(iscore_from_bound(bd))
    n, gamma = 10**6, 0.05
    thr = i_threshold(b, score, n, 0.05, gamma)
    sim = simulate_rounds(b, gamma, n, seed=10, score=score, trials=1000)
    freq = float(np.mean(sim.i_bar <= thr))
    ok = 0.93 <= freq <= 0.97
    assert report(10, ok, f"acceptance frequency {freq:.3f} over 1000 runs of n=1e6 (gamma={gamma})")


def test_c11_noise_reductions(report):
    etas, values = (0.9, 0.95, 1.0), (1.0, 0.95, 0.9)
    base = {eta: optimize_r0(eta, seed=0)[1] for eta in etas}
    exact, mono, lines = True, True, []
    for kind in ("zeta", "chi"):
        for eta in etas:
            r = [optimize_r0(eta, seed=0, **{kind: v})[1] for v in values]
            exact &= r[0] == base[eta]
            mono &= r[0] >= r[1] >= r[2]
            lines.append(f"{kind} eta={eta}: " + "/".join(f"{x:.4f}" for x in r))
    ok = exact and mono
    assert report(11, ok, f"unit leakage bit-identical: {exact}; monotone: {mono}; " + "; ".join(lines))
