"""Closed-form rate quantities: binary entropy, H(A1|B0), the CHSH bound r0 and its optimisation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .circuit import Behavior, CircuitDomainError, CircuitParams, apply_preprocessing, behavior, best_chsh
from .entropy import binary_entropy

SQRT2x2 = 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class KeyRateTerms:
    h_ae: float
    h_ab: float

    @property
    def rate(self) -> float:
        return self.h_ae - self.h_ab


def cond_entropy(joint: np.ndarray) -> float:
    """H(A|B) in bits for a joint table indexed ``[a, b]``."""
    joint = np.asarray(joint, dtype=float)
    pb = joint.sum(axis=0)
    h = 0.0
    for a in range(joint.shape[0]):
        for b in range(joint.shape[1]):
            if joint[a, b] > 0.0:
                h -= joint[a, b] * math.log2(joint[a, b] / pb[b])
    return float(h)


def h_a_given_b(b: Behavior) -> float:
    """H(A1|B0) of the key column (pre-processing already applied)."""
    col = b.key_column
    if abs(col.sum() - 1.0) > 1e-9:
        raise ValueError("key column is not normalized")
    return cond_entropy(col)


def chsh_entropy(S: float) -> float:
    """1 - h(1/2 + sqrt((S/2)^2 - 1)/2), the tight CHSH bound on H(A1|E) without pre-processing."""
    S = min(max(S, 2.0), SQRT2x2)
    return 1.0 - binary_entropy(0.5 + math.sqrt(max((S / 2.0) ** 2 - 1.0, 0.0)) / 2.0)


def preprocessing_gain(S: float, p: float) -> float:
    S = min(max(S, 2.0), SQRT2x2)
    return binary_entropy(0.5 + math.sqrt(max(1.0 - p * (1.0 - p) * (8.0 - S * S), 0.0)) / 2.0)


def r0(S: float, p: float, h_ab: float) -> float:
    if not 0.0 <= p <= 0.5:
        raise ValueError("p must lie in [0, 1/2]")
    if S < 2.0 - 1e-12 or S > SQRT2x2 + 1e-9:
        raise ValueError("S must lie in [2, 2 sqrt 2]")
    return chsh_entropy(S) + preprocessing_gain(S, p) - h_ab


def r0_of_params(params: CircuitParams) -> float:
    """r0 at the circuit behavior; local behaviors (S <= 2) give -H(A1|B0)."""
    b = behavior(params)
    S = best_chsh(b)
    h_ab = h_a_given_b(apply_preprocessing(b, params.p))
    if S <= 2.0:
        return binary_entropy(params.p) - h_ab if params.p > 0 else -h_ab
    return r0(min(S, SQRT2x2), params.p, h_ab)


BOX_AMP = 1.5
BOX_T = (0.01, 0.9)
P_MAX = 0.5


def _clip_params(v: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=float)
    out[0] = min(max(out[0], BOX_T[0]), BOX_T[1])
    out[1:6] = np.clip(out[1:6], -BOX_AMP, BOX_AMP)
    out[6] = min(max(out[6], 0.0), P_MAX)
    return out


def optimize_r0(
    eta: float,
    starts: int = 8,
    seed: int = 0,
    x0: CircuitParams | None = None,
    xatol: float = 1e-9,
    maxiter: int = 4000,
    zeta: float = 1.0,
    chi: float = 1.0,
) -> tuple[CircuitParams, float]:
    """Maximise r0 over (T_g, alphas, betas, p) with seeded Nelder-Mead multistarts.

    ``zeta``/``chi`` fix the leakage of the squeezed or displacement modes.
    """
    if not 0.0 < eta <= 1.0:
        raise CircuitDomainError("eta must lie in (0, 1]")
    rng = np.random.default_rng(seed)

    def to_params(v):
        v = _clip_params(v)
        return CircuitParams(T_g=v[0], eta=eta, alphas=v[1:3], betas=v[3:6], zeta=zeta, chi=chi, p=v[6])

    def loss(v):
        return -r0_of_params(to_params(v))

    seeds = []
    if x0 is not None:
        seeds.append(np.r_[x0.vector(), x0.p])
    # a generic seed near the regime where the circuit violates CHSH
    seeds.append(np.array([0.25, 0.02, -0.5, 0.01, -0.1, 0.03, 0.03]))
    while len(seeds) < starts:
        seeds.append(
            np.r_[rng.uniform(0.05, 0.6), rng.uniform(-0.7, 0.7, 5), rng.uniform(0.0, 0.15)]
        )
    best_v, best_f = None, np.inf
    for s in seeds[:starts]:
        res = minimize(loss, s, method="Nelder-Mead",
                       options={"xatol": xatol, "fatol": 1e-12, "maxiter": maxiter, "maxfev": 2 * maxiter,
                                "adaptive": True})
        if res.fun < best_f:
            best_v, best_f = _clip_params(res.x), float(res.fun)
    params = to_params(best_v)
    return params, -best_f
