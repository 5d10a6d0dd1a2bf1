"""I-scores from block duals, entropy-vs-score curves, and the asymptotic key-rate optimiser.

Sign convention: ``I(P) = offset + lambda . P`` with *lower* I meaning more
entropy.  An I-score read off a block dual satisfies ``H_block(P) >= -I(P)``
with equality at the generating behavior, so ``dH/dI = -1`` there.  The
bounds are ordered ``I_Q1 <= I_C1 <= I_C2 <= I_Q2``; entropy is certified on
``[I_Q1, I_C1]`` and the local set starts at ``I_C1``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq, minimize

from .analytic import BOX_AMP, BOX_T, h_a_given_b, optimize_r0
from .circuit import Behavior, CircuitParams, apply_preprocessing, behavior
from .entropy import (
    COMPONENTS,
    EntropyBound,
    ScoreConstraint,
    binary_entropy,
    build_problem,
    extract_iscore,
    h_cond_bound,
)
from .npa import build_structure, monomial_set
from .sdp import INACCURATE, OPTIMAL, solve_sdp
from .spline import ConvexSpline, lower_convex_hull

log = logging.getLogger(__name__)

NAN = float("nan")


@dataclass
class IScore:
    coeffs: np.ndarray
    offset: float = 0.0
    i_c1: float = NAN
    i_c2: float = NAN
    i_q1: float = NAN
    i_q2: float = NAN
    i_max: float = NAN  # max over the 16 test-event delta distributions
    i_min: float = NAN  # min over the same
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (16,):
            raise ValueError("I-score needs 16 coefficients")

    def value(self, b: Behavior | np.ndarray) -> float:
        vec = b.test_vector() if isinstance(b, Behavior) else np.asarray(b, dtype=float)
        return float(self.offset + self.coeffs @ vec)

    def delta_values(self) -> np.ndarray:
        """I evaluated on the 16 delta event distributions (P = 4 delta_k)."""
        return self.offset + 4.0 * self.coeffs

    @property
    def has_bounds(self) -> bool:
        return all(np.isfinite([self.i_c1, self.i_c2, self.i_q1, self.i_q2]))

    def constraint(self, value: float) -> ScoreConstraint:
        return ScoreConstraint(tuple(self.coeffs), self.offset, value)

    def to_dict(self) -> dict:
        return {
            "coeffs": self.coeffs.tolist(),
            "components": [list(c) for c in COMPONENTS],
            "offset": self.offset,
            "i_c1": self.i_c1,
            "i_c2": self.i_c2,
            "i_q1": self.i_q1,
            "i_q2": self.i_q2,
            "i_max": self.i_max,
            "i_min": self.i_min,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IScore":
        keys = ("offset", "i_c1", "i_c2", "i_q1", "i_q2", "i_max", "i_min", "flags")
        return cls(np.asarray(d["coeffs"]), **{k: d[k] for k in keys if k in d})


def chsh_iscore() -> IScore:
    """Standard CHSH expression as a 16-coefficient score."""
    c = [(-1.0 if (x, y) == (2, 2) else 1.0) * (-1) ** (a + b) for a, b, x, y in COMPONENTS]
    return IScore(np.array(c))


def iscore_from_bound(bound: EntropyBound) -> IScore:
    """Negated block dual, so that lower I certifies more entropy."""
    return IScore(-extract_iscore(bound))


def local_values(score: IScore) -> np.ndarray:
    """I on the 16 deterministic local strategies (a_1, a_2, b_1, b_2)."""
    idx = {c: k for k, c in enumerate(COMPONENTS)}
    out = []
    for a1, a2, b1, b2 in itertools.product((0, 1), repeat=4):
        ax, by = {1: a1, 2: a2}, {1: b1, 2: b2}
        out.append(score.offset + sum(score.coeffs[idx[(ax[x], by[y], x, y)]] for x in (1, 2) for y in (1, 2)))
    return np.array(out)


def quantum_extremum(score: IScore, maximize: bool, monomials="npa2", tol: float = 1e-9) -> tuple[float, bool]:
    """Certified outer bound on min (or max) of I over the quantum relaxation."""
    st = _npa_only(monomials)
    sign = -1.0 if maximize else 1.0
    c = np.zeros(st.n_moments)
    cidx = {comp: i for i, comp in enumerate(st.components)}
    for comp, coef in zip(COMPONENTS, score.coeffs):
        for k, v in st.constraint_rows[0][cidx[comp]].items():
            c[k] += sign * coef * v
    sol = solve_sdp(build_problem(st, c, None), tol=tol)
    ok = sol.status in (OPTIMAL, INACCURATE)
    return (score.offset + sign * sol.dual_value if ok else NAN), ok


@lru_cache(maxsize=4)
def _npa_only(monomials: str):
    """Moment structure without Eve operators (Eve letters only pad the rows)."""
    return build_structure(monomial_set(monomials), 1, mode="block", eve="letters")


def iscore_bounds(score: IScore, monomials="npa2") -> IScore:
    """Fill local, quantum and all-distribution bounds."""
    loc = local_values(score)
    delta = score.delta_values()
    flags = list(score.flags)
    if not np.any(score.coeffs):
        return replace(score, i_c1=score.offset, i_c2=score.offset, i_q1=score.offset, i_q2=score.offset,
                       i_max=score.offset, i_min=score.offset, flags=flags)
    q1, ok1 = quantum_extremum(score, False, monomials)
    q2, ok2 = quantum_extremum(score, True, monomials)
    if not ok1:
        q1 = float(delta.min())
        flags.append("quantum lower bound fell back to the all-distribution minimum")
    if not ok2:
        q2 = float(delta.max())
        flags.append("quantum upper bound fell back to the all-distribution maximum")
    return replace(
        score,
        i_c1=float(loc.min()),
        i_c2=float(loc.max()),
        i_q1=float(min(q1, loc.min())),
        i_q2=float(max(q2, loc.max())),
        i_max=float(delta.max()),
        i_min=float(delta.min()),
        flags=flags,
    )


# --------------------------------------------------------------------------
# entropy curves


@dataclass
class EntropyCurve:
    """Convex, nonincreasing lower bound on H(A|E) as a function of I.

    Knots carry the SDP values and, when available, the dual slopes
    ``dH/dI``.  Where the interpolant reaches the floor ``h(p)`` a cubic
    junction of width ``2.25 * epsilon / |slope|`` bends it onto the
    constant ``floor - epsilon``; that width keeps the cubic convex.
    """

    knots_i: np.ndarray
    knots_h: np.ndarray
    knots_slope: np.ndarray | None
    floor: float
    epsilon: float = 1e-4
    i_q1: float = NAN
    i_c1: float = NAN
    flags: list = field(default_factory=list)

    def __post_init__(self):
        x = np.asarray(self.knots_i, dtype=float)
        y = np.asarray(self.knots_h, dtype=float)
        s = None if self.knots_slope is None else np.asarray(self.knots_slope, dtype=float)
        order = np.argsort(x)
        x, y = x[order], y[order]
        s = None if s is None else s[order]
        hull = lower_convex_hull(x, y)
        if len(hull) < len(x):
            self.flags.append(f"dropped {len(x) - len(hull)} non-convex knots")
            x, y = x[hull], y[hull]
            s = None if s is None else s[hull]
        self.knots_i, self.knots_h, self.knots_slope = x, y, s
        self._spline = ConvexSpline(x, y, s)
        self._setup_junction()

    def _setup_junction(self):
        sp_ = self._spline
        x = self.knots_i
        f = lambda t: sp_.value(t) - self.floor
        self.trivial = False
        if f(x[0]) <= 0.0:
            self.trivial = True
            self.i_star = x[0]
            self.width = 0.0
            return
        hi = x[-1]
        if f(hi) > 0.0:
            # continue the last piece linearly until it meets the floor
            s_end = sp_.derivative(hi)
            hi = hi + (f(hi) / -s_end if s_end < 0 else 0.0)
        self.i_star = float(brentq(f, x[0], hi, xtol=1e-14)) if f(hi) < 0 else float(hi)
        s0 = sp_.derivative(self.i_star)
        self.slope_star = s0
        self.width = 2.25 * self.epsilon / abs(s0) if s0 < 0 and self.epsilon > 0 else 0.0

    def value(self, t: float) -> float:
        if self.trivial:
            return self.floor - self.epsilon
        if t <= self.i_star:
            return self._spline.value(t)
        if t >= self.i_star + self.width:
            return self.floor - (self.epsilon if self.width > 0 else 0.0)
        u = (t - self.i_star) / self.width
        w = self.width
        p0, p1, m0, m1 = self.floor, self.floor - self.epsilon, self.slope_star * w, 0.0
        h00, h10, h01, h11 = 2 * u**3 - 3 * u**2 + 1, u**3 - 2 * u**2 + u, -2 * u**3 + 3 * u**2, u**3 - u**2
        return float(h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1)

    def derivative(self, t: float) -> float:
        if self.trivial:
            return 0.0
        if t <= self.i_star:
            return self._spline.derivative(t)
        if t >= self.i_star + self.width:
            return 0.0
        w = self.width
        u = (t - self.i_star) / w
        p0, p1, m0 = self.floor, self.floor - self.epsilon, self.slope_star * w
        d = (6 * u**2 - 6 * u) * p0 + (3 * u**2 - 4 * u + 1) * m0 + (-6 * u**2 + 6 * u) * p1
        return float(d / w)

    def __call__(self, t):
        if np.ndim(t):
            return np.array([self.value(float(v)) for v in np.ravel(t)]).reshape(np.shape(t))
        return self.value(float(t))

    def to_dict(self) -> dict:
        return {
            "knots_i": self.knots_i.tolist(),
            "knots_h": self.knots_h.tolist(),
            "knots_slope": None if self.knots_slope is None else self.knots_slope.tolist(),
            "floor": self.floor,
            "epsilon": self.epsilon,
            "i_q1": self.i_q1,
            "i_c1": self.i_c1,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntropyCurve":
        return cls(
            np.asarray(d["knots_i"]),
            np.asarray(d["knots_h"]),
            None if d.get("knots_slope") is None else np.asarray(d["knots_slope"]),
            d["floor"],
            d.get("epsilon", 1e-4),
            d.get("i_q1", NAN),
            d.get("i_c1", NAN),
            list(d.get("flags", [])),
        )


class MixtureCurve:
    """Weighted sum of curves (still convex)."""

    def __init__(self, curves, weights):
        self.curves = list(curves)
        self.weights = [float(w) for w in weights]

    def value(self, t: float) -> float:
        return float(sum(w * c.value(t) for c, w in zip(self.curves, self.weights)))

    def derivative(self, t: float) -> float:
        return float(sum(w * c.derivative(t) for c, w in zip(self.curves, self.weights)))

    __call__ = value


def knot_grid(i_lo: float, i_hi: float, count: int, ratio: float = 0.02) -> np.ndarray:
    """``count`` points on [i_lo, i_hi], geometrically denser towards ``i_hi``."""
    if count < 2:
        raise ValueError("need at least two knots")
    d = (i_hi - i_lo) * np.geomspace(1.0, ratio, count - 1)
    return np.r_[i_hi - d, i_hi]


def entropy_curve(
    score: IScore,
    p: float = 0.0,
    grid: int = 12,
    m: int = 8,
    monomials="npa2",
    key_input: int = 1,
    epsilon: float = 1e-4,
    extra: tuple = (),
    margin: float = 0.02,
) -> EntropyCurve:
    """Knots ``min {H_block(P) : I(P) = v}`` on ``[I_Q1, I_C1]`` and their interpolant."""
    if grid < 4:
        raise ValueError("grid needs at least 4 points")
    if not score.has_bounds:
        score = iscore_bounds(score, monomials)
    lo = score.i_q1 + margin * (score.i_c1 - score.i_q1)
    pts = sorted(set(knot_grid(lo, score.i_c1, grid).tolist()) | {float(v) for v in extra if lo <= v <= score.i_c1})
    xs, hs, ss, flags = [], [], [], []
    for v in pts:
        bd = h_cond_bound(score.constraint(v), m=m, p=p, monomials=monomials, key_input=key_input)
        if bd.solver_status not in (OPTIMAL, INACCURATE):
            flags.append(f"knot at I={v:.6g} skipped ({bd.solver_status})")
            continue
        xs.append(v)
        hs.append(bd.raw_value)
        ss.append(bd.dual_multipliers["score"])
    if len(xs) < 2:
        raise RuntimeError("entropy curve needs at least two solved knots")
    return EntropyCurve(np.array(xs), np.array(hs), np.array(ss), binary_entropy(p), epsilon,
                        score.i_q1, score.i_c1, flags)


# --------------------------------------------------------------------------
# asymptotic optimisation


@dataclass
class RateResult:
    params: CircuitParams
    rate: float
    h_ae: float
    h_ab: float
    bound: EntropyBound | None = None
    history: list = field(default_factory=list)


def block_rate(params: CircuitParams, m: int = 8, monomials="npa2") -> RateResult:
    """r_block = H_block(A1|E) - H(A1|B0) at the circuit behavior."""
    b = behavior(params)
    bound = h_cond_bound(b, m=m, p=params.p, monomials=monomials)
    h_ab = h_a_given_b(apply_preprocessing(b, params.p))
    return RateResult(params, bound.value - h_ab, bound.value, h_ab, bound)


def _clip_vec(v):
    out = np.array(v, dtype=float)
    out[0] = min(max(out[0], BOX_T[0]), BOX_T[1])
    out[1:] = np.clip(out[1:], -BOX_AMP, BOX_AMP)
    return out


def phi(params: CircuitParams, score: IScore, slope: float) -> float:
    """Linearised rate ``slope * I(P) - H(A1|B0)``; closed form, no SDP."""
    b = behavior(params)
    return slope * score.value(b) - h_a_given_b(apply_preprocessing(b, params.p))


def first_order_step(
    params: CircuitParams,
    score: IScore,
    curve: EntropyCurve | None = None,
    slope: float | None = None,
    maxiter: int = 3000,
) -> CircuitParams:
    """Maximise the linearised rate over the circuit parameters at fixed p.

    The slope ``dH/dI`` at the current score value comes from ``curve`` if
    given; otherwise the block-dual normalisation fixes it at -1.
    """
    if slope is None:
        slope = curve.derivative(score.value(behavior(params))) if curve is not None else -1.0
    f0 = phi(params, score, slope)

    def loss(v):
        return -phi(params.with_vector(_clip_vec(v)), score, slope)

    res = minimize(loss, params.vector(), method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 1e-13, "maxiter": maxiter, "adaptive": True})
    new = params.with_vector(_clip_vec(res.x))
    return new if -res.fun > f0 + 1e-12 else params


def refine_p(
    params: CircuitParams,
    m: int,
    monomials,
    stages: int = 3,
    points: int = 9,
    shrink: float = 0.3,
    p_range: tuple = (0.0, 0.3),
) -> RateResult:
    """Grid refinement of the pre-processing probability around the current value."""
    lo, hi = p_range
    center, width = params.p, hi - lo
    best = block_rate(params, m, monomials)
    seen = {round(params.p, 12)}
    for _ in range(stages):
        a, b = max(lo, center - width / 2), min(hi, center + width / 2)
        for p in np.linspace(a, b, points):
            if round(p, 12) in seen:
                continue
            seen.add(round(p, 12))
            cand = block_rate(replace(params, p=float(p)), m, monomials)
            if cand.rate > best.rate:
                best = cand
        center = best.params.p
        width *= shrink
    return best


def optimize_keyrate(
    eta: float,
    iterations: int = 3,
    params0: CircuitParams | None = None,
    m: int = 8,
    monomials="npa2",
    p_stages: int = 3,
    p_points: int = 9,
    p_shrink: float = 0.3,
    p_range: tuple = (0.0, 0.3),
    seed: int = 0,
) -> RateResult:
    """Alternate block solve, I-score, first-order step and p refinement."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if params0 is None:
        params0, _ = optimize_r0(eta, seed=seed)
    params = replace(params0, eta=eta)
    best: RateResult | None = None
    history = []
    for it in range(iterations):
        try:
            cur = block_rate(params, m, monomials)
        except Exception as exc:  # solver trouble: keep the best so far
            log.warning("block solve failed at iteration %d: %s", it, exc)
            break
        history.append((it, cur.rate, cur.params.to_dict()))
        if best is None or cur.rate > best.rate:
            best = cur
        if not cur.bound.certified:
            break
        score = iscore_from_bound(cur.bound)
        params = first_order_step(params, score)
        if p_stages > 0:
            res = refine_p(params, m, monomials, p_stages, p_points, p_shrink, p_range)
        else:
            res = block_rate(params, m, monomials)
        history.append((it, res.rate, res.params.to_dict()))
        if res.rate > best.rate:
            best = res
        params = res.params
    best.history = history
    return best


@dataclass
class ThresholdScan:
    threshold: float | None  # lowest efficiency reached with rate above the cut
    rates: dict  # eta -> best rate found
    params: dict  # eta -> optimised circuit point


def chsh_threshold(etas, cut: float = 1e-5, starts: int = 8, seed: int = 0) -> ThresholdScan:
    """Lowest efficiency on the grid above which the optimised r0 always exceeds ``cut``."""
    grid = sorted(etas)
    found = {eta: optimize_r0(eta, starts=starts, seed=seed) for eta in grid}
    rates = {eta: r for eta, (_, r) in found.items()}
    ok = [eta for eta in grid if all(rates[e] > cut for e in grid if e >= eta)]
    return ThresholdScan(min(ok) if ok else None, rates, {eta: p for eta, (p, _) in found.items()})


def block_threshold(start: float, step: float = 0.005, floor: float = 0.7, cut: float = 1e-5, m: int = 8,
                    monomials="npa2", seed: int = 0) -> ThresholdScan:
    """Walk down in efficiency from ``start`` until the block rate drops to ``cut``.

    Each point is warm-started from the optimum one step above; below the
    CHSH threshold the r0 optimum degenerates to a local point and is useless
    as a seed.
    """
    params, _ = optimize_r0(start, seed=seed)
    last, eta, rates, points = None, start, {}, {}
    while eta >= floor - 1e-12:
        res = optimize_keyrate(eta, iterations=3 if last is None else 2, params0=replace(params, eta=eta), m=m,
                               monomials=monomials)
        rates[eta], points[eta] = res.rate, res.params
        log.info("eta=%.4f r_block=%.3e", eta, res.rate)
        if res.rate <= cut:
            break
        last, params = eta, res.params
        eta = round(eta - step, 6)
    return ThresholdScan(last, rates, points)
