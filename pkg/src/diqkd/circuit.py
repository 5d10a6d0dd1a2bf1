"""Exact click statistics of the two-mode-squeezer / displacement / threshold-detector circuit."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

T_MAX = 1.0 - 1e-9


class CircuitDomainError(ValueError):
    pass


def _check(T_g: float, eta: float) -> float:
    if not 0.0 <= T_g <= T_MAX:
        raise CircuitDomainError(f"T_g must lie in [0, 1 - 1e-9], got {T_g}")
    if not 0.0 <= eta <= 1.0:
        raise CircuitDomainError(f"eta must lie in [0, 1], got {eta}")
    return 1.0 - eta


def p_no_click_joint(T_g: float, eta: float, alpha: float, beta: float) -> float:
    """Probability that neither detector clicks for displacements ``alpha``, ``beta``.

    The squeezed vacuum is sqrt(1 - T^2) sum_n (-T)^n |n, n>, the action of
    exp(r (ab - a^dag b^dag) / 2) on |00>.
    """
    R = _check(T_g, eta)
    T2 = T_g * T_g
    den = R * R * T2 - 1.0
    pref = (1.0 - T2) / (1.0 - R * R * T2)
    expo = (alpha**2 + beta**2) * (1.0 - R + R * R * T2 - R * T2) / den
    expo += 2.0 * alpha * beta * T_g * (R - 1.0) ** 2 / den
    return float(pref * np.exp(expo))


def p_no_click_marginal(T_g: float, eta: float, amp: float) -> float:
    """Probability that one party's detector does not click.

    The reduced state is a displaced thermal state with mean photon number
    T^2 / (1 - T^2).
    """
    R = _check(T_g, eta)
    T2 = T_g * T_g
    den = 1.0 - R * T2
    return float((1.0 - T2) / den * np.exp(-eta * amp**2 * (1.0 - T2) / den))


@dataclass(frozen=True)
class CircuitParams:
    T_g: float
    eta: float
    alphas: tuple = (0.0, 0.0)
    betas: tuple = (0.0, 0.0, 0.0)
    zeta: float = 1.0
    chi: float = 1.0
    p: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.alphas) != 2 or len(self.betas) != 3:
            raise CircuitDomainError("need 2 alpha and 3 beta displacements")
        _check(self.T_g, self.eta)
        for name in ("zeta", "chi"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise CircuitDomainError(f"{name} must lie in [0, 1]")
        if self.zeta < 1.0 and self.chi < 1.0:
            raise CircuitDomainError("combine at most one leakage model per call")
        if not 0.0 <= self.p <= 0.5:
            raise CircuitDomainError("pre-processing probability must lie in [0, 1/2]")

    @property
    def squeezing_db(self) -> float:
        return float(10.0 * np.log10((1.0 + self.T_g) / (1.0 - self.T_g)))

    def vector(self) -> np.ndarray:
        """(T_g, alpha1, alpha2, beta0, beta1, beta2) as optimised by the key-rate searches."""
        return np.array([self.T_g, *self.alphas, *self.betas])

    def with_vector(self, v: Sequence[float]) -> "CircuitParams":
        return replace(self, T_g=float(v[0]), alphas=tuple(v[1:3]), betas=tuple(v[3:6]))

    def to_dict(self) -> dict:
        return {
            "T_g": self.T_g,
            "eta": self.eta,
            "alphas": list(self.alphas),
            "betas": list(self.betas),
            "zeta": self.zeta,
            "chi": self.chi,
            "p": self.p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitParams":
        return cls(**{k: d[k] for k in ("T_g", "eta", "alphas", "betas", "zeta", "chi", "p") if k in d})


# The operating point quoted for eta = 87.5 %.
OPERATING_POINT = CircuitParams(
    T_g=0.249, eta=0.875, alphas=(0.024, -0.521), betas=(0.013, -0.104, 0.0340), p=0.042
)

TEST_SETTINGS = [(x, y) for x in (1, 2) for y in (1, 2)]


class Behavior:
    """Conditional distribution ``P(a, b | x, y)``, ``x in {1, 2}``, ``y in {0, 1, 2}``.

    ``table[a, b, x - 1, y]``; the ``y = 0`` column is the key-generation
    setting and is only meaningful for ``x = 1``.
    """

    def __init__(self, table: np.ndarray):
        table = np.asarray(table, dtype=float)
        if table.shape != (2, 2, 2, 3):
            raise ValueError("behavior table must have shape (2, 2, 2, 3)")
        self.table = table

    def __call__(self, a: int, b: int, x: int, y: int) -> float:
        return float(self.table[a, b, x - 1, y])

    def joint(self, a, b, x, y) -> float:
        return self(a, b, x, y)

    def column(self, x: int, y: int) -> np.ndarray:
        """2x2 array ``[a, b]`` for one setting pair."""
        return self.table[:, :, x - 1, y]

    @property
    def key_column(self) -> np.ndarray:
        return self.column(1, 0)

    def marginal_a(self, a: int, x: int, y: int = 1) -> float:
        return float(self.table[a, :, x - 1, y].sum())

    def marginal_b(self, b: int, y: int, x: int = 1) -> float:
        return float(self.table[:, b, x - 1, y].sum())

    def test_vector(self) -> np.ndarray:
        """16 test-round components ordered ``(x, y, a, b)`` with ``x, y in {1, 2}``."""
        return np.array(
            [self.table[a, b, x - 1, y] for x in (1, 2) for y in (1, 2) for a in (0, 1) for b in (0, 1)]
        )

    @classmethod
    def from_test_vector(cls, vec: Sequence[float], key: np.ndarray | None = None) -> "Behavior":
        vec = np.asarray(vec, dtype=float)
        table = np.zeros((2, 2, 2, 3))
        k = 0
        for x in (1, 2):
            for y in (1, 2):
                for a in (0, 1):
                    for b in (0, 1):
                        table[a, b, x - 1, y] = vec[k]
                        k += 1
        if key is None:
            key = table[:, :, 0, 1]
        table[:, :, 0, 0] = key
        table[:, :, 1, 0] = key
        return cls(table)

    def normalization_error(self) -> float:
        cols = [self.column(x, y).sum() for x, y in TEST_SETTINGS + [(1, 0)]]
        return float(max(abs(c - 1.0) for c in cols))

    def signaling_error(self, include_key: bool = True) -> float:
        ys = (0, 1, 2) if include_key else (1, 2)
        err = 0.0
        for x in (1, 2):
            ma = [self.table[:, :, x - 1, y].sum(axis=1) for y in ys]
            err = max(err, max(np.max(np.abs(m - ma[0])) for m in ma))
        for y in ys:
            mb = [self.table[:, :, x - 1, y].sum(axis=0) for x in (1, 2)]
            err = max(err, float(np.max(np.abs(mb[0] - mb[1]))))
        return float(err)

    def copy(self) -> "Behavior":
        return Behavior(self.table.copy())

    def __repr__(self):
        return f"Behavior(P00|11={self(0, 0, 1, 1):.6g}, ...)"


def _no_click(params: CircuitParams, amp_a: float | None, amp_b: float | None) -> float:
    """No-click probability of the listed detectors (``None`` = detector ignored)."""
    T, eta, zeta, chi = params.T_g, params.eta, params.zeta, params.chi
    if zeta < 1.0:
        # squeezer leaks into a second mode pair that is never displaced
        modes = [(np.sqrt(zeta) * T, 1.0), (np.sqrt(1.0 - zeta) * T, 0.0)]
    elif chi < 1.0:
        # displacements leak into a second mode pair that is in vacuum
        modes = [(T, np.sqrt(chi)), (0.0, np.sqrt(1.0 - chi))]
    else:
        modes = [(T, 1.0)]
    out = 1.0
    for t_mode, scale in modes:
        if amp_a is not None and amp_b is not None:
            out *= p_no_click_joint(t_mode, eta, scale * amp_a, scale * amp_b)
        elif amp_a is not None:
            out *= p_no_click_marginal(t_mode, eta, scale * amp_a)
        else:
            out *= p_no_click_marginal(t_mode, eta, scale * amp_b)
    return out


def behavior(params: CircuitParams, preprocess: bool = False) -> Behavior:
    """Behavior of the circuit; outcome 0 = no click, 1 = click.

    With ``preprocess=True`` the noisy pre-processing flip ``params.p`` is
    applied to the key column.
    """
    table = np.zeros((2, 2, 2, 3))
    pa = [_no_click(params, a, None) for a in params.alphas]
    pb = [_no_click(params, None, b) for b in params.betas]
    for xi, a_amp in enumerate(params.alphas):
        for y, b_amp in enumerate(params.betas):
            p00 = _no_click(params, a_amp, b_amp)
            table[0, 0, xi, y] = p00
            table[0, 1, xi, y] = pa[xi] - p00
            table[1, 0, xi, y] = pb[y] - p00
            table[1, 1, xi, y] = 1.0 - pa[xi] - pb[y] + p00
    out = Behavior(table)
    return apply_preprocessing(out, params.p) if preprocess else out


def apply_preprocessing(b: Behavior, p: float) -> Behavior:
    """Flip Alice's key-round outcome with probability ``p`` (key column only)."""
    if not 0.0 <= p <= 0.5:
        raise CircuitDomainError("pre-processing probability must lie in [0, 1/2]")
    out = b.copy()
    key = b.table[:, :, 0, 0]
    out.table[:, :, 0, 0] = (1.0 - p) * key + p * key[::-1, :]
    return out


def correlator(b: Behavior, x: int, y: int) -> float:
    col = b.column(x, y)
    return float(col[0, 0] + col[1, 1] - col[0, 1] - col[1, 0])


def chsh_score(b: Behavior) -> float:
    """S = E11 + E12 + E21 - E22."""
    return sum((-1.0 if (x, y) == (2, 2) else 1.0) * correlator(b, x, y) for x, y in TEST_SETTINGS)


def best_chsh(b: Behavior) -> float:
    """Largest of the eight CHSH forms related to ``chsh_score`` by relabelling outcomes."""
    E = [correlator(b, x, y) for x, y in TEST_SETTINGS]
    total = sum(E)
    return float(max(max(total - 2 * e, -(total - 2 * e)) for e in E))


def uniform_behavior() -> Behavior:
    return Behavior(np.full((2, 2, 2, 3), 0.25))


def deterministic_behavior(a_out=(0, 0), b_out=(0, 0, 0)) -> Behavior:
    """Local deterministic strategy: Alice outputs ``a_out[x-1]``, Bob ``b_out[y]``."""
    table = np.zeros((2, 2, 2, 3))
    for x in (1, 2):
        for y in (0, 1, 2):
            table[a_out[x - 1], b_out[y], x - 1, y] = 1.0
    return Behavior(table)
