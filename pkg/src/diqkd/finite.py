"""Finite-size key length from an I-score via entropy accumulation with full statistics.

Events are the 16 test outcomes ``(a, b, x, y)`` (probability ``gamma/4 *
P(a,b|x,y)``) and the no-test symbol ``perp`` (probability ``1 - gamma``).
Lower I means more entropy, so the entropy curve and every tangent ``g_v``
are nonincreasing in I, the protocol accepts when the observed score is at
most ``I_thr``, and the minimum of ``g`` over quantum points sits at ``I_Q2``.
All logarithms are base 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linprog, minimize, minimize_scalar
from scipy.stats import norm

from .analytic import cond_entropy, h_a_given_b
from .circuit import Behavior, apply_preprocessing
from .entropy import COMPONENTS
from .keyrate import EntropyCurve, IScore, MixtureCurve

LOG2_33 = math.log2(33.0)
LOG2_5_SQ = math.log2(5.0) ** 2
CONSTANT = 264.0


# --------------------------------------------------------------------------
# security parameters


@dataclass(frozen=True)
class SecurityParams:
    eps_snd: float = 3e-10
    eps_s: float = 1e-10
    eps_s1: float = 2.5e-11  # eps_s'
    eps_s2: float = 2.5e-11  # eps_s''
    eps_EA: float = 1e-10
    eps_PA: float = 1e-10
    eps_c: float = 0.05

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.eps_s - self.eps_s1 - 2.0 * self.eps_s2 <= 0.0:
            raise ValueError("need eps_s > eps_s' + 2 eps_s''")
        if self.eps_s + self.eps_EA + self.eps_PA > self.eps_snd * (1 + 1e-12):
            raise ValueError("eps_s + eps_EA + eps_PA exceeds the soundness target")

    @classmethod
    def from_soundness(cls, eps_snd: float = 3e-10, eps_c: float = 0.05) -> "SecurityParams":
        third = eps_snd / 3.0
        return cls(eps_snd, third, third / 4.0, third / 4.0, third, third, eps_c)


def theta(eps: float) -> float:
    """log2(1 / (1 - sqrt(1 - eps^2))), evaluated without cancellation."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    return float(math.log2((1.0 + math.sqrt(1.0 - eps * eps)) / (eps * eps)))


# --------------------------------------------------------------------------
# signaling completion


def signaling_vectors() -> np.ndarray:
    """8 x 16 basis of functionals vanishing on every no-signaling behavior."""
    idx = {c: k for k, c in enumerate(COMPONENTS)}
    rows = []
    for y in (1, 2):  # Bob's marginal does not depend on x
        for b in (0, 1):
            v = np.zeros(16)
            for a in (0, 1):
                v[idx[(a, b, 1, y)]] += 1.0
                v[idx[(a, b, 2, y)]] -= 1.0
            rows.append(v)
    for x in (1, 2):  # Alice's marginal does not depend on y
        for a in (0, 1):
            v = np.zeros(16)
            for b in (0, 1):
                v[idx[(a, b, x, 1)]] += 1.0
                v[idx[(a, b, x, 2)]] -= 1.0
            rows.append(v)
    return np.array(rows)


def completed_coeffs(score: IScore, f: np.ndarray) -> np.ndarray:
    return score.coeffs + signaling_vectors().T @ np.asarray(f, dtype=float)


def optimize_signaling(score: IScore, tol: float = 1e-10) -> np.ndarray:
    """Signaling 8-vector minimising the spread of the completed score over delta events.

    The minimax LP is followed by a minimum-norm tie-break among its optima.
    """
    V = signaling_vectors()
    lam = score.coeffs
    if np.ptp(lam) <= tol:
        return np.zeros(8)
    # variables (f_1..f_8, upper, lower): minimise upper - lower
    c = np.r_[np.zeros(8), 1.0, -1.0]
    A = np.vstack([np.c_[V.T, -np.ones(16), np.zeros(16)], np.c_[-V.T, np.zeros(16), np.ones(16)]])
    bnd = np.r_[-lam, lam]
    res = linprog(c, A_ub=A, b_ub=bnd, bounds=[(None, None)] * 10, method="highs")
    if res.status != 0:
        raise RuntimeError(f"signaling LP failed: {res.message}")
    spread = res.fun + tol * max(1.0, abs(res.fun))

    def cons(f):
        w = lam + V.T @ f
        return np.r_[spread - (w[:, None] - w[None, :]).ravel()]

    tie = minimize(lambda f: f @ f, res.x[:8], jac=lambda f: 2 * f, method="SLSQP",
                   constraints=[{"type": "ineq", "fun": cons}], options={"ftol": 1e-14, "maxiter": 500})
    f = tie.x if tie.success and np.ptp(lam + V.T @ tie.x) <= spread + tol else res.x[:8]
    return np.asarray(f)


# --------------------------------------------------------------------------
# entropy mixture and min-tradeoff functions


@dataclass
class CurveSet:
    """Per-setting entropy curves: pre-processed key input and the two raw test inputs."""

    key: EntropyCurve
    test1: EntropyCurve
    test2: EntropyCurve

    def mixture(self, gamma: float) -> MixtureCurve:
        return MixtureCurve([self.key, self.test1, self.test2], [1.0 - gamma, gamma / 2.0, gamma / 2.0])

    def to_dict(self) -> dict:
        return {"key": self.key.to_dict(), "test1": self.test1.to_dict(), "test2": self.test2.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CurveSet":
        return cls(*(EntropyCurve.from_dict(d[k]) for k in ("key", "test1", "test2")))


@dataclass
class MinTradeoff:
    v: float
    h_v: float  # mixture entropy at v
    g_slope: float  # its derivative at v
    c_perp: float
    gamma: float
    signaling: np.ndarray
    score: IScore

    @cached_property
    def lam_bar(self) -> np.ndarray:
        return completed_coeffs(self.score, self.signaling)

    def g(self, i_value: float) -> float:
        """Tangent ``g_v`` as a function of the score value."""
        return float(self.h_v + (i_value - self.v) * self.g_slope)

    def i_bar(self, P: np.ndarray) -> float:
        return float(self.score.offset + self.lam_bar @ P)

    def delta_i(self) -> np.ndarray:
        """Completed score on the 16 delta distributions."""
        return self.score.offset + 4.0 * self.lam_bar

    def g_events(self) -> np.ndarray:
        return self.h_v + (self.delta_i() - self.v) * self.g_slope

    def f_events(self) -> np.ndarray:
        """Values of the lifted function on the 16 test events followed by perp."""
        g = self.g_events()
        return np.r_[g / self.gamma + (1.0 - 1.0 / self.gamma) * self.c_perp, self.c_perp]

    def event_probs(self, P: np.ndarray) -> np.ndarray:
        return np.r_[self.gamma * np.asarray(P) / 4.0, 1.0 - self.gamma]

    def expectation(self, P: np.ndarray) -> float:
        return float(self.event_probs(P) @ self.f_events())

    def variance(self, P: np.ndarray) -> float:
        p = self.event_probs(P)
        f = self.f_events()
        mu = p @ f
        return float(max(p @ (f - mu) ** 2, 0.0))

    def max_f(self) -> float:
        """Maximum of f over all event distributions (a vertex)."""
        return float(max(self.g_events().max() / self.gamma + (1.0 - 1.0 / self.gamma) * self.c_perp, self.c_perp))

    def min_f_quantum(self) -> float:
        """Minimum over quantum points: g is nonincreasing in I, so it sits at I_Q2."""
        return self.g(self.score.i_q2)

    def to_dict(self) -> dict:
        return {
            "v": self.v,
            "h_v": self.h_v,
            "g_slope": self.g_slope,
            "c_perp": self.c_perp,
            "gamma": self.gamma,
            "signaling": np.asarray(self.signaling).tolist(),
        }


def build_min_tradeoff(
    curves: CurveSet | MixtureCurve,
    score: IScore,
    v: float,
    gamma: float,
    c_perp: float,
    signaling: np.ndarray | None = None,
    check_range: bool = True,
) -> MinTradeoff:
    """Tangent of the infrequent-sampling entropy mixture at ``I = v``."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if check_range:
        if not score.has_bounds:
            raise ValueError("score needs its local and quantum bounds")
        if not score.i_q1 - 1e-12 <= v <= score.i_c1 + 1e-12:
            raise ValueError("v must lie in [I_Q1, I_C1]")
    mix = curves.mixture(gamma) if isinstance(curves, CurveSet) else curves
    f = np.zeros(8) if signaling is None else np.asarray(signaling, dtype=float)
    return MinTradeoff(float(v), mix.value(v), mix.derivative(v), float(c_perp), float(gamma), f, score)


# --------------------------------------------------------------------------
# threshold and simulation


def _event_values(score: IScore, signaling, gamma: float) -> np.ndarray:
    lam_bar = completed_coeffs(score, np.zeros(8) if signaling is None else signaling)
    return np.r_[(score.offset + 4.0 * lam_bar) / gamma, 0.0]


def event_distribution(b: Behavior, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    p = np.r_[gamma * b.test_vector() / 4.0, 1.0 - gamma]
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def score_moments(b: Behavior, score: IScore, gamma: float, signaling=None) -> tuple[float, float]:
    """Mean and per-round standard deviation of the score estimator."""
    p = event_distribution(b, gamma)
    vals = _event_values(score, signaling, gamma)
    mu = float(p @ vals)
    sigma = float(math.sqrt(max(p @ (vals - mu) ** 2, 0.0)))
    return mu, sigma


def i_threshold(b: Behavior, score: IScore, n: float, eps_c: float = 0.05, gamma: float = 1.0,
                signaling=None) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < eps_c < 1.0:
        raise ValueError("eps_c must lie in (0, 1)")
    mu, sigma = score_moments(b, score, gamma, signaling)
    if sigma == 0.0:
        return mu
    return float(mu + norm.ppf(1.0 - eps_c) * sigma / math.sqrt(n))


@dataclass
class SimulatedRounds:
    counts: np.ndarray  # (trials, 17), last column is perp
    i_bar: np.ndarray  # (trials,)


def simulate_rounds(b: Behavior, gamma: float, n: int, seed: int = 0, score: IScore | None = None,
                    signaling=None, trials: int = 1) -> SimulatedRounds:
    """I.i.d. rounds of the protocol; returns event counts and the observed score estimator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    p = event_distribution(b, gamma)
    counts = rng.multinomial(int(n), p, size=trials)
    if score is None or gamma == 0.0:
        ib = np.zeros(trials)
    else:
        ib = counts @ _event_values(score, signaling, gamma) / n
    return SimulatedRounds(counts, ib)


# --------------------------------------------------------------------------
# error correction


def ec_cost(b: Behavior, gamma: float, n: float) -> float:
    """Syndrome length for a spatially coupled LDPC code at the given entropies."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 0.0
    h_key = h_a_given_b(b)
    h_test = 0.25 * sum(cond_entropy(b.column(x, y)) for x in (1, 2) for y in (1, 2))
    return float(n * ((1.0 - gamma) * h_key + gamma * h_test) + 50.0 * math.sqrt(n))


# --------------------------------------------------------------------------
# the internal infimum


def variance_term(var: float) -> float:
    return 0.5 * math.log(2.0) * (LOG2_33 + math.sqrt(2.0 + max(var, 0.0))) ** 2


def k_alpha(mt: MinTradeoff, alpha_prime: float) -> float:
    if not 1.0 < alpha_prime < 2.0:
        raise ValueError("alpha' must lie in (1, 2)")
    spread = 2.0 + mt.max_f() - mt.min_f_quantum()
    # ln(2^spread + e^2) computed in log space for large spreads
    big = spread * math.log(2.0)
    ln_term = big + math.log1p(math.exp(2.0 - big)) if big > 2.0 else math.log(math.exp(big) + math.e**2)
    return float(2.0 ** ((alpha_prime - 1.0) * spread) * ln_term**3 / (6.0 * (2.0 - alpha_prime) ** 3 * math.log(2.0)))


class NoSignalingPolytope:
    """No-signaling behaviors with ``I >= i_low``, parametrised by 8 coordinates.

    Coordinates are ``(pA(0|1), pA(0|2), pB(0|1), pB(0|2), P(00|xy) for the
    four settings)``; every component of P is affine in them.
    """

    def __init__(self, score: IScore, i_low: float):
        self.score = score
        self.i_low = float(i_low)
        M = np.zeros((16, 8))
        c0 = np.zeros(16)
        pair = {(1, 1): 4, (1, 2): 5, (2, 1): 6, (2, 2): 7}
        for k, (a, b, x, y) in enumerate(COMPONENTS):
            ia, ib, i00 = x - 1, 2 + y - 1, pair[(x, y)]
            if (a, b) == (0, 0):
                M[k, i00] = 1.0
            elif (a, b) == (0, 1):
                M[k, ia], M[k, i00] = 1.0, -1.0
            elif (a, b) == (1, 0):
                M[k, ib], M[k, i00] = 1.0, -1.0
            else:
                M[k, ia], M[k, ib], M[k, i00] = -1.0, -1.0, 1.0
                c0[k] = 1.0
        self.M, self.c0 = M, c0
        # inequalities A z <= b: positivity and I(P) >= i_low
        lam = score.coeffs
        self.A = np.vstack([-M, -(lam @ M)[None, :]])
        self.b = np.r_[c0, score.offset + lam @ c0 - self.i_low]

    def behavior(self, z: np.ndarray) -> np.ndarray:
        return self.M @ z + self.c0

    def coordinates(self, P: np.ndarray) -> np.ndarray:
        idx = {c: k for k, c in enumerate(COMPONENTS)}
        z = [P[idx[(0, 0, 1, 1)]] + P[idx[(0, 1, 1, 1)]], P[idx[(0, 0, 2, 1)]] + P[idx[(0, 1, 2, 1)]],
             P[idx[(0, 0, 1, 1)]] + P[idx[(1, 0, 1, 1)]], P[idx[(0, 0, 1, 2)]] + P[idx[(1, 0, 1, 2)]]]
        z += [P[idx[(0, 0, x, y)]] for x, y in ((1, 1), (1, 2), (2, 1), (2, 2))]
        return np.array(z)

    def linear_extreme(self, w16: np.ndarray, maximize: bool = True, eq=None):
        """Optimise ``w16 . P`` over the polytope (optionally with one equality on P)."""
        c = (self.M.T @ w16) * (-1.0 if maximize else 1.0)
        kw = {}
        if eq is not None:
            weq, rhs = eq
            kw = {"A_eq": (self.M.T @ weq)[None, :], "b_eq": [rhs - weq @ self.c0]}
        res = linprog(c, A_ub=self.A, b_ub=self.b, bounds=[(0.0, 1.0)] * 8, method="highs", **kw)
        if res.status != 0:
            return None
        return self.behavior(res.x)

    def interior_point(self, rng: np.random.Generator) -> np.ndarray:
        """A random strictly feasible point (convex mix of the honest-like centre and random vertices)."""
        pts = []
        for _ in range(12):
            P = self.linear_extreme(rng.normal(size=16))
            if P is not None:
                pts.append(self.coordinates(P))
        cheb = self._chebyshev_center()
        w = rng.dirichlet(np.ones(len(pts)))
        z = 0.5 * cheb + 0.5 * (w @ np.array(pts))
        return z

    def _chebyshev_center(self) -> np.ndarray:
        norms = np.linalg.norm(self.A, axis=1)
        c = np.r_[np.zeros(8), -1.0]
        A = np.c_[self.A, norms]
        res = linprog(c, A_ub=A, b_ub=self.b, bounds=[(0, 1)] * 8 + [(0, None)], method="highs")
        if res.status != 0 or res.x[-1] <= 0:
            raise RuntimeError("no-signaling polytope has empty interior")
        return res.x[:8]


@dataclass
class InfResult:
    value: float  # conservative (lower) value of the infimum
    primal: float  # objective at the best point found
    behavior: np.ndarray
    i_value: float
    flagged: bool = False
    method: str = "projection"


class InternalProblem:
    """``inf_P  Delta(P) - (alpha'-1) V(P)`` over the relaxed no-signaling set.

    The objective depends on P only through ``I(P)`` and
    ``Q(P) = sum_k lam_bar_k^2 P_k``, and V grows with Q at fixed I.  So the
    infimum is a 1-D convex minimisation along the upper boundary of the
    projection of the polytope onto the (I, Q) plane, which is traced once
    exactly with LPs.
    """

    def __init__(self, score: IScore, signaling: np.ndarray, i_low: float | None = None, tol: float = 1e-11):
        self.score = score
        self.signaling = np.asarray(signaling, dtype=float)
        self.lam_bar = completed_coeffs(score, self.signaling)
        self.poly = NoSignalingPolytope(score, score.i_q1 if i_low is None else i_low)
        self.tol = tol
        self._chain = None

    def project(self, P: np.ndarray) -> np.ndarray:
        return np.array([self.score.offset + self.score.coeffs @ P, self.lam_bar**2 @ P])

    @property
    def chain(self) -> np.ndarray:
        """Vertices (I, Q) of the upper boundary, I ascending."""
        if self._chain is None:
            self._chain = self._upper_chain()
        return self._chain

    def _upper_chain(self) -> np.ndarray:
        lam, q = self.score.coeffs, self.lam_bar**2
        pts = []
        for maximize in (False, True):
            P = self.poly.linear_extreme(lam, maximize=maximize)
            if P is None:
                raise RuntimeError("relaxed set is empty")
            i_end = self.score.offset + lam @ P
            P2 = self.poly.linear_extreme(q, True, eq=(lam, i_end - self.score.offset))
            pts.append(self.project(P2 if P2 is not None else P))
        left, right = pts
        out = [left]

        def split(A, B, depth=0):
            d = B - A
            normal = np.array([-d[1], d[0]])
            if normal[1] <= 0 or depth > 60:
                return
            w = normal[0] * lam + normal[1] * q
            P = self.poly.linear_extreme(w, True)
            if P is None:
                return
            C = self.project(P)
            if normal @ (C - A) > self.tol * (1.0 + np.abs(normal).sum()):
                split(A, C, depth + 1)
                out.append(C)
                split(C, B, depth + 1)

        split(left, right)
        out.append(right)
        return np.array(out)

    def q_max(self, i_value: float) -> float:
        ch = self.chain
        return float(np.interp(i_value, ch[:, 0], ch[:, 1]))

    @staticmethod
    def objective(mt: MinTradeoff, mix, alpha_prime: float, i_value: float, q_value: float) -> float:
        g_i = mt.g(i_value)
        delta = mix.value(i_value) - g_i
        # Var = E[f^2] - E[f]^2 with f = A + B lam_bar on test events, E[f] = g(I)
        A = (mt.h_v + (mt.score.offset - mt.v) * mt.g_slope) / mt.gamma + (1.0 - 1.0 / mt.gamma) * mt.c_perp
        B = 4.0 * mt.g_slope / mt.gamma
        ef2 = mt.gamma * (A * A + 0.5 * A * B * (i_value - mt.score.offset) + 0.25 * B * B * q_value)
        ef2 += (1.0 - mt.gamma) * mt.c_perp**2
        var = ef2 - g_i * g_i
        return float(delta - (alpha_prime - 1.0) * variance_term(var))

    def solve(self, mt: MinTradeoff, mix, alpha_prime: float) -> InfResult:
        if not 1.0 < alpha_prime < 2.0:
            raise ValueError("alpha' must lie in (1, 2)")
        ch = self.chain
        best = (np.inf, ch[0, 0])
        for k in range(len(ch) - 1):
            a, b = ch[k, 0], ch[k + 1, 0]
            if b - a <= 0:
                continue
            fun = lambda t: self.objective(mt, mix, alpha_prime, t, self.q_max(t))
            res = minimize_scalar(fun, bounds=(a, b), method="bounded", options={"xatol": 1e-12 * (1 + abs(a))})
            cand = min((res.fun, res.x), (fun(a), a), (fun(b), b))
            best = min(best, cand)
        if len(ch) == 1:
            best = (self.objective(mt, mix, alpha_prime, ch[0, 0], ch[0, 1]), ch[0, 0])
        val, i_star = best
        return InfResult(float(val), float(val), np.array([]), float(i_star))

    def solve_direct(self, mt: MinTradeoff, mix, alpha_prime: float, start: np.ndarray | None = None,
                     seed: int = 0) -> InfResult:
        """Independent route: SLSQP over the 8 coordinates plus a linearisation lower bound.

        Convexity makes ``F(z*) + min_z grad F(z*) . (z - z*)`` a valid lower
        bound (one LP), which is the conservative value returned.
        """
        poly = self.poly
        lam = self.score.coeffs

        def F(z):
            P = poly.behavior(z)
            return self.objective(mt, mix, alpha_prime, self.score.offset + lam @ P, self.lam_bar**2 @ P)

        def grad(z, h=1e-7):
            g = np.zeros(8)
            for j in range(8):
                e = np.zeros(8)
                e[j] = h
                g[j] = (F(z + e) - F(z - e)) / (2 * h)
            return g

        z0 = poly.interior_point(np.random.default_rng(seed)) if start is None else np.asarray(start)
        cons = [{"type": "ineq", "fun": lambda z: poly.b - poly.A @ z, "jac": lambda z: -poly.A}]
        res = minimize(F, z0, jac=grad, method="SLSQP", constraints=cons, bounds=[(0, 1)] * 8,
                       options={"ftol": 1e-15, "maxiter": 1000})
        z = res.x
        fz = F(z)
        lp = linprog(grad(z), A_ub=poly.A, b_ub=poly.b, bounds=[(0, 1)] * 8, method="highs")
        lower = fz + (lp.fun - grad(z) @ z) if lp.status == 0 else -np.inf
        P = poly.behavior(z)
        return InfResult(float(min(lower, fz)), float(fz), P, float(self.score.offset + lam @ P),
                         flagged=not res.success, method="slsqp")


def internal_inf(mt: MinTradeoff, curve, alpha_prime: float, gamma: float | None = None,
                 problem: InternalProblem | None = None) -> float:
    """Infimum of ``Delta - (alpha'-1) V`` over the relaxed no-signaling set."""
    if gamma is not None and abs(gamma - mt.gamma) > 1e-15:
        raise ValueError("gamma differs from the min-tradeoff function's")
    if problem is None:
        problem = InternalProblem(mt.score, mt.signaling)
    mix = curve.mixture(mt.gamma) if isinstance(curve, CurveSet) else curve
    return problem.solve(mt, mix, alpha_prime).value


# --------------------------------------------------------------------------
# key length


TERM_NAMES = (
    "g_v_threshold",
    "internal_inf",
    "k_alpha",
    "test_rounds",
    "alpha2_log5",
    "theta_alpha1",
    "theta_alpha2",
    "theta_s",
    "privacy_amplification",
    "error_correction",
    "constant",
)


@dataclass
class KeyLengthReport:
    l: float  # max(raw, 0)
    raw: float
    n: float
    terms: dict
    v: float
    alpha1: float
    alpha2: float
    gamma: float
    c_perp: float
    i_thr: float
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "KeyLengthReport":
        return cls(**d)


def alpha2_optimum(n: float, sec: SecurityParams) -> float:
    """Closed-form alpha'' minimising ``n (a-1) log^2 5 + (theta + a log(1/eps_EA)) / (a-1)``."""
    e = math.log2(1.0 / sec.eps_EA)
    u = math.sqrt((theta(sec.eps_s2) + e) / (n * LOG2_5_SQ))
    return 1.0 + min(u, 0.5)


@dataclass
class FiniteSetup:
    """Everything in the key-length formula that does not depend on the tuning parameters."""

    behavior: Behavior  # raw behavior (test columns) with the pre-processed key column
    score: IScore
    curves: CurveSet
    signaling: np.ndarray
    problem: InternalProblem

    @classmethod
    def build(cls, raw: Behavior, p: float, score: IScore, curves: CurveSet,
              signaling: np.ndarray | None = None) -> "FiniteSetup":
        if not score.has_bounds:
            raise ValueError("score needs its local and quantum bounds")
        f = optimize_signaling(score) if signaling is None else np.asarray(signaling, dtype=float)
        return cls(apply_preprocessing(raw, p), score, curves, f, InternalProblem(score, f))


def evaluate_terms(setup: FiniteSetup, n: float, sec: SecurityParams, v: float, gamma: float, c_perp: float,
                   alpha1: float, alpha2: float | None = None) -> KeyLengthReport:
    """Every term of the key length at fixed tuning parameters."""
    if alpha2 is None:
        alpha2 = alpha2_optimum(n, sec)
    mix = setup.curves.mixture(gamma)
    mt = build_min_tradeoff(mix, setup.score, v, gamma, c_perp, setup.signaling)
    i_thr = i_threshold(setup.behavior, setup.score, n, sec.eps_c, gamma, setup.signaling)
    inner = setup.problem.solve(mt, mix, alpha1)
    e = math.log2(1.0 / sec.eps_EA)
    terms = {
        "g_v_threshold": n * mt.g(i_thr),
        "internal_inf": n * inner.value,
        "k_alpha": -n * (alpha1 - 1.0) ** 2 * k_alpha(mt, alpha1),
        "test_rounds": -n * gamma,
        "alpha2_log5": -n * (alpha2 - 1.0) * LOG2_5_SQ,
        "theta_alpha1": -(theta(sec.eps_s1) + alpha1 * e) / (alpha1 - 1.0),
        "theta_alpha2": -(theta(sec.eps_s2) + alpha2 * e) / (alpha2 - 1.0),
        "theta_s": -3.0 * theta(sec.eps_s - sec.eps_s1 - 2.0 * sec.eps_s2),
        "privacy_amplification": -5.0 * math.log2(1.0 / sec.eps_PA),
        "error_correction": -ec_cost(setup.behavior, gamma, n),
        "constant": -CONSTANT,
    }
    terms = {k: float(terms[k]) for k in TERM_NAMES}
    raw = 0.0
    for k in TERM_NAMES:
        raw += terms[k]
    flags = ["internal infimum flagged"] if inner.flagged else []
    return KeyLengthReport(max(raw, 0.0), raw, float(n), terms, float(v), float(alpha1), float(alpha2),
                           float(gamma), float(c_perp), float(i_thr), flags)


@dataclass
class SearchOptions:
    gammas: tuple = tuple(np.geomspace(1e-4, 0.2, 10))
    v_points: int = 8
    alpha_log_range: tuple = (-9.0, math.log10(0.5))
    refine: bool = True
    maxiter: int = 400


def _best_alpha1(setup, n, sec, v, gamma, c_perp, alpha2, rng_log):
    def loss(t):
        return -evaluate_terms(setup, n, sec, v, gamma, c_perp, 1.0 + 10.0**t, alpha2).raw

    res = minimize_scalar(loss, bounds=rng_log, method="bounded", options={"xatol": 1e-3})
    return float(res.x), -float(res.fun)


def key_length(setup: FiniteSetup, n: float, sec: SecurityParams | None = None,
               options: SearchOptions | None = None, fixed: dict | None = None) -> KeyLengthReport:
    """Maximise the key length over (v, alpha', alpha'', gamma, c_perp).

    ``fixed`` pins tuning parameters (keys v, gamma, c_perp, alpha1, alpha2)
    and skips the search when all are given.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sec = sec or SecurityParams.from_soundness()
    opt = options or SearchOptions()
    fixed = dict(fixed or {})
    if {"v", "gamma", "c_perp", "alpha1"} <= fixed.keys():
        return evaluate_terms(setup, n, sec, fixed["v"], fixed["gamma"], fixed["c_perp"], fixed["alpha1"],
                              fixed.get("alpha2"))
    score = setup.score
    alpha2 = fixed.get("alpha2", alpha2_optimum(n, sec))
    lo, hi = score.i_q1, score.i_c1
    i_honest = score.value(setup.behavior)
    knots = setup.curves.key.knots_i
    v_grid = np.unique(np.r_[knots[(knots >= lo) & (knots <= hi)], np.clip(i_honest, lo, hi)])
    if len(v_grid) > opt.v_points:
        # keep the knots closest to the honest score
        v_grid = v_grid[np.argsort(np.abs(v_grid - i_honest))[: opt.v_points]]
    gammas = [fixed["gamma"]] if "gamma" in fixed else list(opt.gammas)

    def c_default(v, gamma):
        mix = setup.curves.mixture(gamma)
        return mix.value(v) + (i_honest - v) * mix.derivative(v)

    stage1 = []
    for gamma in gammas:
        for v in ([fixed["v"]] if "v" in fixed else v_grid):
            c = fixed.get("c_perp", c_default(v, gamma))
            if "alpha1" in fixed:
                t, val = math.log10(fixed["alpha1"] - 1.0), evaluate_terms(
                    setup, n, sec, v, gamma, c, fixed["alpha1"], alpha2).raw
            else:
                t, val = _best_alpha1(setup, n, sec, v, gamma, c, alpha2, opt.alpha_log_range)
            stage1.append((val, float(v), float(gamma), float(c), t))
    stage1.sort(key=lambda r: -r[0])
    best_val, v, gamma, c, t = stage1[0]
    if opt.refine:
        # local derivative-free refinement of (log10 gamma, v, c_perp, log10(alpha'-1))
        names = ["gamma", "v", "c_perp", "alpha1"]
        free = [k for k in names if k not in fixed]
        x0 = {"gamma": math.log10(gamma), "v": v, "c_perp": c, "alpha1": t}

        def unpack(x):
            d = dict(x0)
            d.update(zip(free, x))
            return d

        def loss(x):
            d = unpack(x)
            gm = 10.0 ** d["gamma"]
            if not (1e-6 <= gm <= 0.5 and lo <= d["v"] <= hi and opt.alpha_log_range[0] <= d["alpha1"]
                    <= opt.alpha_log_range[1]):
                return 1e300
            return -evaluate_terms(setup, n, sec, d["v"], gm, d["c_perp"], 1.0 + 10.0 ** d["alpha1"], alpha2).raw

        if free:
            res = minimize(loss, [x0[k] for k in free], method="Nelder-Mead",
                           options={"maxiter": opt.maxiter, "xatol": 1e-6, "fatol": 1e-3, "adaptive": True})
            if -res.fun > best_val:
                d = unpack(res.x)
                gamma, v, c, t = 10.0 ** d["gamma"], d["v"], d["c_perp"], d["alpha1"]
    return evaluate_terms(setup, n, sec, v, gamma, c, 1.0 + 10.0**t, alpha2)


# --------------------------------------------------------------------------
# end-to-end helpers


def setup_from_params(params, m: int = 8, grid: int = 10, monomials="npa2", epsilon: float = 1e-4) -> FiniteSetup:
    """Block bound, I-score, the three entropy curves and the signaling completion for a circuit point."""
    from .circuit import behavior
    from .entropy import h_cond_bound
    from .keyrate import entropy_curve, iscore_bounds, iscore_from_bound

    raw = behavior(params)
    bound = h_cond_bound(apply_preprocessing(raw, params.p), m=m, p=params.p, monomials=monomials)
    score = iscore_bounds(iscore_from_bound(bound), monomials)
    i0 = score.value(raw)
    curves = CurveSet(*[
        entropy_curve(score, p=p, grid=grid, m=m, monomials=monomials, key_input=k, epsilon=epsilon, extra=(i0,))
        for p, k in ((params.p, 1), (0.0, 1), (0.0, 2))
    ])
    return FiniteSetup.build(raw, params.p, score, curves)


@dataclass
class MinRounds:
    n_min: float  # inf when no n in range gives a positive key
    report: KeyLengthReport | None
    evaluations: list


def minimum_rounds(setup: FiniteSetup, sec: SecurityParams | None = None, log10_range=(6.0, 13.0), steps: int = 20,
                   options: SearchOptions | None = None) -> MinRounds:
    """Bisection on log10 n for the smallest n with a positive key length."""
    lo, hi = log10_range
    evals = []

    def run(t):
        rep = key_length(setup, 10.0**t, sec, options)
        evals.append((float(t), rep.raw))
        return rep

    top = run(hi)
    if top.raw <= 0:
        return MinRounds(math.inf, None, evals)
    bottom = run(lo)
    if bottom.raw > 0:
        return MinRounds(10.0**lo, bottom, evals)
    best = top
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        rep = run(mid)
        if rep.raw > 0:
            hi, best = mid, rep
        else:
            lo = mid
    return MinRounds(10.0**hi, best, evals)
