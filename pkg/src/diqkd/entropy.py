"""Lower bounds on H(A1|E) and H(A1 B1|E) from the quadrature-based moment SDPs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

from .circuit import Behavior
from .npa import (
    MomentStructure,
    StructureError,
    build_structure,
    chsh_row,
    gauss_radau,
    monomial_set,
    objective_rows,
)
from .sdp import INACCURATE, OPTIMAL, SdpProblem, SdpSolution, Block, solve_sdp

CERTIFY_GAP = 1e-6
COMPONENTS = [(a, b, x, y) for x in (1, 2) for y in (1, 2) for a in (0, 1) for b in (0, 1)]


def binary_entropy(q: float) -> float:
    if q <= 0.0 or q >= 1.0:
        return 0.0
    return float(-q * math.log2(q) - (1.0 - q) * math.log2(1.0 - q))


@dataclass(frozen=True)
class ScoreConstraint:
    """Constraint ``offset + sum_k coeffs[k] P_k = value`` over the 16 test components."""

    coeffs: tuple
    offset: float
    value: float

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.coeffs) != 16:
            raise ValueError("score needs 16 coefficients")


Target = Union[Behavior, float, ScoreConstraint, None]  # None: normalization only


@dataclass
class EntropyBound:
    value: float  # clipped to [floor, ceiling]
    raw_value: float  # certified dual value before clipping
    primal_value: float
    dual_multipliers: dict
    solver_status: str
    duality_gap: float
    mode: str
    m: int
    floor: float = 0.0
    certifying: bool = True
    block_values: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def certified(self) -> bool:
        return self.certifying and self.solver_status in (OPTIMAL, INACCURATE) and self.duality_gap <= CERTIFY_GAP


@lru_cache(maxsize=32)
def _structure(monomials: str, m: int, mode: str, joint: bool) -> MomentStructure:
    return build_structure(monomial_set(monomials), m, mode=mode, joint=joint)


def get_structure(monomials, m: int, mode: str = "block", joint: bool = False) -> MomentStructure:
    if isinstance(monomials, str):
        return _structure(monomials, m, mode, joint)
    return build_structure(list(monomials), m, mode=mode, joint=joint)


def _objective(st: MomentStructure, p: float, key_input: int, key_input_b: int) -> np.ndarray:
    rows = objective_rows(st, gauss_radau(st.m), p=p, key_input=key_input, key_input_b=key_input_b)
    c = np.zeros(st.n_moments)
    for r in rows:
        for k, v in r.items():
            c[k] += v
    return c


def _constraints(st: MomentStructure, g: int, target: Target):
    """Labelled constraint rows ``(label, {moment: coef}, rhs)`` for group ``g``."""
    if target is None:
        return [("norm", {st.identity_ids[g]: 1.0}, 1.0)]
    comp_rows = st.constraint_rows[g]
    index = {c: i for i, c in enumerate(st.components)}
    if isinstance(target, Behavior):
        out = []
        for comp in COMPONENTS:
            out.append((comp, comp_rows[index[comp]], target(*comp)))
        return out
    if isinstance(target, ScoreConstraint):
        row: dict[int, float] = {}
        for comp, coef in zip(COMPONENTS, target.coeffs):
            if coef:
                for k, v in comp_rows[index[comp]].items():
                    row[k] = row.get(k, 0.0) + coef * v
        return [("norm", {st.identity_ids[g]: 1.0}, 1.0), ("score", row, target.value - target.offset)]
    s = float(target)
    if abs(s) > 2.0 * math.sqrt(2.0) + 1e-9:
        raise ValueError("CHSH value outside the quantum range")
    return [("norm", {st.identity_ids[g]: 1.0}, 1.0), ("chsh", chsh_row(st, g), s)]


def build_problem(st: MomentStructure, objective: np.ndarray, target: Target, group: int | None = None):
    """SdpProblem for one group (``group=None`` = all groups, only for full/block)."""
    groups = range(len(st.groups)) if group is None else [group]
    blocks, labels, rhs, trip = [], [], [], ([], [], [])
    for g in groups:
        for b in st.groups[g]:
            blocks.append(Block.from_ids(st.blocks[b]))
        for label, row, r in _constraints(st, g, target):
            i = len(rhs)
            labels.append(label)
            rhs.append(r)
            for k, v in row.items():
                trip[0].append(i)
                trip[1].append(k)
                trip[2].append(v)
    E = sp.csr_matrix((trip[2], (trip[0], trip[1])), shape=(len(rhs), st.n_moments))
    if group is not None:
        # drop the other groups' moments
        used = np.unique(np.concatenate([blk.var for blk in blocks]))
        remap = -np.ones(st.n_moments, dtype=np.int64)
        remap[used] = np.arange(len(used))
        for blk in blocks:
            blk.var = remap[blk.var]
        E = E[:, used]
        objective = objective[used]
        return SdpProblem(len(used), blocks, objective, E, np.asarray(rhs), labels)
    return SdpProblem(st.n_moments, blocks, objective, E, np.asarray(rhs), labels)


def _check_behavior(b: Behavior, tol: float = 1e-7):
    if b.normalization_error() > tol:
        raise ValueError("behavior is not normalized")
    if b.signaling_error(include_key=False) > tol:
        raise ValueError("behavior is signaling")


def _solve(st, objective, target, tol):
    if st.mode == "split":
        sols = [solve_sdp(build_problem(st, objective, target, g), tol=tol) for g in range(len(st.groups))]
    else:
        sols = [solve_sdp(build_problem(st, objective, target), tol=tol)]
    return sols


def _merge(sols: Sequence[SdpSolution], labels, mode, m, floor, ceiling, certifying) -> EntropyBound:
    status = OPTIMAL
    for s in sols:
        if s.status not in (OPTIMAL, INACCURATE):
            status = s.status
            break
        if s.status == INACCURATE:
            status = INACCURATE
    raw = float(sum(s.dual_value for s in sols))
    primal = float(sum(s.primal_value for s in sols))
    mult: dict = {}
    for s in sols:
        for lab, lam in zip(labels, s.eq_duals):
            mult[lab] = mult.get(lab, 0.0) + float(lam)
    value = raw if np.isfinite(raw) else floor
    return EntropyBound(
        value=float(min(max(value, floor), ceiling)),
        raw_value=raw,
        primal_value=primal,
        dual_multipliers=mult,
        solver_status=status,
        duality_gap=abs(primal - raw),
        mode=mode,
        m=m,
        floor=floor,
        certifying=certifying,
        block_values=[s.dual_value for s in sols] if len(sols) > 1 else [],
        seconds=float(sum(s.seconds for s in sols)),
    )


def h_cond_bound(
    target: Target,
    m: int = 8,
    mode: str = "block",
    monomials="npa2",
    p: float = 0.0,
    key_input: int = 1,
    tol: float = 1e-8,
) -> EntropyBound:
    """Lower bound on H(A_x|E) for Alice's (noisy pre-processed) key input.

    ``target`` is a Behavior (full statistics), a CHSH value, or a
    ScoreConstraint fixing one linear functional of the behavior.
    """
    if not 0.0 <= p <= 0.5:
        raise ValueError("p must lie in [0, 1/2]")
    if isinstance(target, Behavior):
        _check_behavior(target)
    st = get_structure(monomials, m, mode, False)
    c = _objective(st, p, key_input, 1)
    sols = _solve(st, c, target, tol)
    labels = [lab for lab, _, _ in _constraints(st, 0, target)]
    return _merge(sols, labels, mode, m, binary_entropy(p), 1.0, mode != "split")


def h_joint_bound(
    target: Target,
    m: int = 8,
    mode: str = "block",
    monomials="npa2",
    tol: float = 1e-8,
) -> EntropyBound:
    """Lower bound on H(A1 B1|E)."""
    if not isinstance(target, (Behavior, ScoreConstraint)):
        s = float(target)
        if not 2.0 - 1e-12 <= s <= 2.0 * math.sqrt(2.0) + 1e-9:
            raise ValueError("CHSH value must lie in [2, 2 sqrt 2]")
    elif isinstance(target, Behavior):
        _check_behavior(target)
    st = get_structure(monomials, m, mode, True)
    c = _objective(st, 0.0, 1, 1)
    sols = _solve(st, c, target, tol)
    labels = [lab for lab, _, _ in _constraints(st, 0, target)]
    return _merge(sols, labels, mode, m, 0.0, 2.0, mode != "split")


def extract_iscore(bound: EntropyBound) -> np.ndarray:
    """16 dual coefficients ``lam`` with ``sum_k lam_k P_k <= H_block(P)`` on no-signaling behaviors.

    The normalization of each setting is implied by the component rows, so
    no separate offset is needed (it is 0).
    """
    if not bound.certifying:
        raise ValueError("split-mode multipliers do not certify a bound")
    if not all(c in bound.dual_multipliers for c in COMPONENTS):
        raise ValueError("bound was not computed from full statistics")
    return np.array([bound.dual_multipliers[c] for c in COMPONENTS])


def dual_functional(lam: np.ndarray, b: Behavior) -> float:
    return float(np.dot(lam, b.test_vector()))
