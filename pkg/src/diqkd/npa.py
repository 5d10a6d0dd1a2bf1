"""Noncommutative operator words, Gauss-Radau nodes and moment-matrix structures.

Operators are Alice's and Bob's dichotomic observables ``A_x``, ``B_y``
(hermitian, squaring to the identity) and Eve's unconstrained operators
``Z_k`` together with their adjoints.  Letters of different parties commute,
so a word is stored as three independent parts ``(a, b, z)``.

Moment matrices are real, hence a moment ``<w>`` is identified with
``<w^dagger>``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MODES = ("full", "split", "block")
EVE_RULES = ("product", "letters")


class StructureError(ValueError):
    """Raised for malformed monomial lists or requests the structure cannot serve."""


@dataclass(frozen=True, order=True)
class Letter:
    party: str
    index: int | tuple
    dagger: bool = False

    def __post_init__(self):
        if self.party not in ("A", "B", "Z"):
            raise ValueError(f"unknown party {self.party!r}")
        if self.party != "Z" and self.dagger:
            # A and B are hermitian
            object.__setattr__(self, "dagger", False)

    def adjoint(self) -> "Letter":
        if self.party == "Z":
            return Letter("Z", self.index, not self.dagger)
        return self


def _reduce_dichotomic(word: Iterable[int]) -> tuple:
    stack: list[int] = []
    for x in word:
        if stack and stack[-1] == x:
            stack.pop()
        else:
            stack.append(x)
    return tuple(stack)


@dataclass(frozen=True, order=True)
class Monomial:
    """A canonical word: Alice part, Bob part, Eve part (Eve letters as ``(index, dagger)``)."""

    a: tuple = ()
    b: tuple = ()
    z: tuple = ()

    def __mul__(self, other: "Monomial") -> "Monomial":
        return Monomial(
            _reduce_dichotomic(self.a + other.a),
            _reduce_dichotomic(self.b + other.b),
            self.z + other.z,
        )

    def adjoint(self) -> "Monomial":
        return Monomial(
            self.a[::-1], self.b[::-1], tuple((k, not d) for k, d in reversed(self.z))
        )

    @property
    def is_identity(self) -> bool:
        return not (self.a or self.b or self.z)

    @property
    def has_eve(self) -> bool:
        return bool(self.z)

    def moment_key(self) -> "Monomial":
        """Representative shared by ``w`` and ``w^dagger`` (real moment matrices)."""
        adj = self.adjoint()
        return self if self <= adj else adj

    def letters(self) -> list[Letter]:
        out = [Letter("A", x) for x in self.a] + [Letter("B", y) for y in self.b]
        out += [Letter("Z", k, d) for k, d in self.z]
        return out

    def __str__(self) -> str:
        if self.is_identity:
            return "1"
        parts = [f"A{x}" for x in self.a] + [f"B{y}" for y in self.b]
        for k, d in self.z:
            idx = ",".join(str(v) for v in (k if isinstance(k, tuple) else (k,)))
            parts.append(f"Z[{idx}]" + ("'" if d else ""))
        return " ".join(parts)


IDENTITY = Monomial()


def canonicalize(word: Sequence[Letter] | Monomial) -> Monomial:
    """Bring a word to canonical form.

    A letters move to the front, then B letters, then Z letters (cross-party
    commutation), and ``A_x A_x = B_y B_y = 1``.
    """
    if isinstance(word, Monomial):
        word = word.letters()
    a = [l.index for l in word if l.party == "A"]
    b = [l.index for l in word if l.party == "B"]
    z = tuple((l.index, l.dagger) for l in word if l.party == "Z")
    return Monomial(_reduce_dichotomic(a), _reduce_dichotomic(b), z)


def A(x: int) -> Monomial:
    return Monomial(a=(x,))


def B(y: int) -> Monomial:
    return Monomial(b=(y,))


def Z(index, dagger: bool = False) -> Monomial:
    return Monomial(z=((index, dagger),))


# --------------------------------------------------------------------------
# monomial sets


def local_level_words(inputs: Sequence[int], level: int) -> list[tuple]:
    """All reduced words of length <= level over dichotomic letters ``inputs``."""
    words = [()]
    frontier = [()]
    for _ in range(level):
        nxt = []
        for w in frontier:
            for x in inputs:
                if not w or w[-1] != x:
                    nxt.append(w + (x,))
        words += nxt
        frontier = nxt
    return words


def monomials_npa(level: int, inputs_a=(1, 2), inputs_b=(1, 2)) -> list[Monomial]:
    """Standard NPA level: all products of at most ``level`` A/B letters."""
    out = {IDENTITY}
    for la in range(level + 1):
        for wa in local_level_words(inputs_a, la):
            if len(wa) != la:
                continue
            for wb in local_level_words(inputs_b, level - la):
                out.add(Monomial(wa, wb))
    return sorted(out, key=lambda w: (len(w.a) + len(w.b), w))


def monomials_local_product(level: int, inputs_a=(1, 2), inputs_b=(1, 2)) -> list[Monomial]:
    """Tensor-product set ``O_A(level) x O_B(level)``, e.g. 5 x 5 = 25 words at level 2."""
    wa = local_level_words(inputs_a, level)
    wb = local_level_words(inputs_b, level)
    return [Monomial(x, y) for x in wa for y in wb]


def monomials_keyrate() -> list[Monomial]:
    """The 14-word Alice-Bob set used for the key-rate computations.

    ``[1, A1, A2] x [1, B1, B2]``, ``A1A2``, ``A2A1``, ``A1B2B1`` and the sum
    ``(A1A2 + A2A1) B1B2`` expanded into its two words.
    """
    out = [Monomial(x, y) for x in ((), (1,), (2,)) for y in ((), (1,), (2,))]
    out += [
        Monomial((1, 2)),
        Monomial((2, 1)),
        Monomial((1,), (2, 1)),
        Monomial((1, 2), (1, 2)),
        Monomial((2, 1), (1, 2)),
    ]
    return out


MONOMIAL_SETS = {
    "npa1": lambda: monomials_npa(1),
    "npa2": lambda: monomials_npa(2),
    "local1": lambda: monomials_local_product(1),
    "local2": lambda: monomials_local_product(2),
    "keyrate14": monomials_keyrate,
}


def monomial_set(name: str) -> list[Monomial]:
    try:
        return MONOMIAL_SETS[name]()
    except KeyError:
        raise StructureError(
            f"unknown monomial set {name!r}; choose from {sorted(MONOMIAL_SETS)}"
        ) from None


# --------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class GaussRadauQuadrature:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def m(self) -> int:
        return len(self.nodes)


def gauss_radau(m: int) -> GaussRadauQuadrature:
    """Gauss-Radau rule on [0, 1] with the right endpoint fixed at t = 1.

    Golub's modification of the Legendre Jacobi matrix: the last diagonal
    entry is chosen so that x = 1 is an eigenvalue; nodes are the
    eigenvalues, weights the squared first eigenvector components.
    """
    if int(m) != m or m < 1:
        raise ValueError("gauss_radau needs m >= 1")
    m = int(m)
    if m == 1:
        return GaussRadauQuadrature(np.array([1.0]), np.array([1.0]))
    k = np.arange(1, m)
    off = k / np.sqrt(4.0 * k**2 - 1.0)
    # solve (J_{m-1} - I) delta = off_{m-1}^2 e_{m-1}
    jm1 = np.diag(off[:-1], 1) + np.diag(off[:-1], -1) if m > 2 else np.zeros((1, 1))
    rhs = np.zeros(m - 1)
    rhs[-1] = off[-1] ** 2
    delta = np.linalg.solve(jm1 - np.eye(m - 1), rhs)
    diag = np.zeros(m)
    diag[-1] = 1.0 + delta[-1]
    jac = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    x, vec = np.linalg.eigh(jac)
    w = 2.0 * vec[0, :] ** 2
    x[-1] = 1.0
    t = (x + 1.0) / 2.0
    w = w / 2.0
    order = np.argsort(t)
    t, w = t[order], w[order]
    t[-1] = 1.0
    return GaussRadauQuadrature(t, w / w.sum())


# --------------------------------------------------------------------------
# moment structures


def behavior_components(inputs_a=(1, 2), inputs_b=(1, 2)) -> list[tuple]:
    """Ordered (a, b, x, y) components constrained by the SDP."""
    return [(a, b, x, y) for x in inputs_a for y in inputs_b for a in (0, 1) for b in (0, 1)]


def eve_keys(i: int, joint: bool) -> list[tuple]:
    if joint:
        return [(i, a, b) for a in (0, 1) for b in (0, 1)]
    return [(i, a) for a in (0, 1)]


def eve_set(keys: Sequence[tuple]) -> list[Monomial]:
    out = [IDENTITY]
    for k in keys:
        out += [Z(k), Z(k, True)]
    return out


@dataclass
class MomentStructure:
    """Index structure of one of the three hierarchies.

    ``blocks[b][u, v]`` is the moment id of ``<rows[b][u]^dagger rows[b][v]>``.
    ``groups`` lists the blocks that form one SDP (one group for full and
    block, one group per block for split).  ``constraint_rows[g][k]`` maps
    moment id to coefficient for behavior component ``components[k]``;
    ``identity_ids[g]`` is the id of ``<1>`` in group ``g``.
    """

    mode: str
    m: int
    joint: bool
    rows: list[list[Monomial]]
    blocks: list[np.ndarray]
    moments: list[Monomial]
    moment_block: np.ndarray
    groups: list[list[int]]
    components: list[tuple]
    constraint_rows: list[list[dict[int, float]]]
    identity_ids: list[int]
    objective_rows: list[dict[int, float]] | None = None
    _lookup: list[dict] = field(default_factory=list, repr=False)

    @property
    def n_moments(self) -> int:
        return len(self.moments)

    @property
    def block_sizes(self) -> list[int]:
        return [len(r) for r in self.rows]

    def group_of_block(self, b: int) -> int:
        for g, members in enumerate(self.groups):
            if b in members:
                return g
        raise KeyError(b)

    def moment_id(self, group: int, word: Monomial) -> int | None:
        return self._lookup[group].get(word.moment_key())

    def require_id(self, group: int, word: Monomial) -> int:
        mid = self.moment_id(group, word)
        if mid is None:
            raise StructureError(f"moment <{word}> not present in the moment matrix")
        return mid


def _check_monomials(monomials_ab: Sequence[Monomial]) -> list[Monomial]:
    mons = []
    seen = set()
    for w in monomials_ab:
        w = canonicalize(w)
        if w.z:
            raise StructureError("Alice-Bob monomials must not contain Eve letters")
        if w not in seen:
            seen.add(w)
            mons.append(w)
    if IDENTITY not in seen:
        raise StructureError("monomial list must contain the identity")
    return mons


def _block_rows(mons_ab, keys, eve: str) -> list[Monomial]:
    if eve == "product":
        rows = [w * z for w in mons_ab for z in eve_set(keys)]
    else:
        rows = list(mons_ab) + eve_set(keys)[1:]
    out, seen = [], set()
    for r in rows:
        if r not in seen:
            seen.add(r)
            out.append(r)
    return out


def build_structure(
    monomials_ab: Sequence[Monomial],
    m: int,
    mode: str = "block",
    joint: bool = False,
    eve: str = "product",
    inputs_a=(1, 2),
    inputs_b=(1, 2),
    quadrature: GaussRadauQuadrature | None = None,
) -> MomentStructure:
    """Assemble the moment-matrix structure of the full, split or block hierarchy.

    ``eve="product"`` generates each block from ``monomials_ab x {1, Z, Z^dagger}``;
    ``eve="letters"`` appends the bare Eve letters to ``monomials_ab`` instead
    (the plain NPA level-1 count, used for size comparisons only).
    """
    if mode not in MODES:
        raise StructureError(f"mode must be one of {MODES}")
    if eve not in EVE_RULES:
        raise StructureError(f"eve must be one of {EVE_RULES}")
    if m < 1:
        raise StructureError("m must be >= 1")
    mons = _check_monomials(monomials_ab)

    if mode == "full":
        keys_per_block = [[k for i in range(1, m + 1) for k in eve_keys(i, joint)]]
        groups = [[0]]
    else:
        keys_per_block = [eve_keys(i, joint) for i in range(1, m + 1)]
        groups = [[b] for b in range(m)] if mode == "split" else [list(range(m))]

    rows = [_block_rows(mons, keys, eve) for keys in keys_per_block]
    moments: list[Monomial] = []
    owner: list[int] = []
    lookups: list[dict] = []
    blocks: list[np.ndarray] = [None] * len(rows)
    for g, members in enumerate(groups):
        lookup: dict = {}
        for b in members:
            r = rows[b]
            n = len(r)
            adj = [w.adjoint() for w in r]
            ids = np.empty((n, n), dtype=np.int64)
            for u in range(n):
                for v in range(u, n):
                    key = (adj[u] * r[v]).moment_key()
                    mid = lookup.get(key)
                    if mid is None:
                        mid = len(moments)
                        lookup[key] = mid
                        moments.append(key)
                        owner.append(b if (key.z or mode == "split") else -1)
                    ids[u, v] = ids[v, u] = mid
            blocks[b] = ids
        lookups.append(lookup)

    components = behavior_components(inputs_a, inputs_b)
    constraint_rows = []
    identity_ids = []
    for g in range(len(groups)):
        lookup = lookups[g]
        identity_ids.append(lookup[IDENTITY])
        rows_g = []
        for a, b_, x, y in components:
            sa, sb = (-1) ** a, (-1) ** b_
            terms = [(IDENTITY, 0.25), (A(x), 0.25 * sa), (B(y), 0.25 * sb), (A(x) * B(y), 0.25 * sa * sb)]
            row: dict[int, float] = {}
            for w, c in terms:
                mid = lookup.get(w.moment_key())
                if mid is None:
                    raise StructureError(f"constraint moment <{w}> missing; add level-1 monomials")
                row[mid] = row.get(mid, 0.0) + c
            rows_g.append(row)
        constraint_rows.append(rows_g)

    st = MomentStructure(
        mode=mode,
        m=m,
        joint=joint,
        rows=rows,
        blocks=blocks,
        moments=moments,
        moment_block=np.asarray(owner, dtype=np.int64),
        groups=groups,
        components=components,
        constraint_rows=constraint_rows,
        identity_ids=identity_ids,
        _lookup=lookups,
    )
    try:
        st.objective_rows = objective_rows(st, quadrature or gauss_radau(m), p=0.0)
    except StructureError:
        st.objective_rows = None
    return st


def objective_rows(
    st: MomentStructure,
    quad: GaussRadauQuadrature,
    p: float = 0.0,
    key_input: int = 1,
    key_input_b: int = 1,
) -> list[dict[int, float]]:
    """Per-node linear functionals whose sum is the entropy objective.

    For node ``i`` with weight ``w`` and abscissa ``t`` the functional is
    ``w/(t ln 2) * (<1> + sum_a <M_a (Z + Z^dag + (1-t) Z^dag Z)> + t <Z Z^dag>)``
    with ``M_a`` Alice's (noisy) projector, or Alice's times Bob's projector
    for the joint entropy.  The ``<1>`` term is the constant of the
    logarithm's integral representation.
    """
    if quad.m != st.m:
        raise StructureError("quadrature size differs from structure m")
    out = []
    for i in range(1, st.m + 1):
        t = float(quad.nodes[i - 1])
        c = float(quad.weights[i - 1]) / (t * np.log(2.0))
        b = i - 1 if st.mode != "full" else 0
        g = st.group_of_block(b)
        row: dict[int, float] = {}

        def add(word: Monomial, coef: float):
            mid = st.require_id(g, word)
            row[mid] = row.get(mid, 0.0) + coef

        add(IDENTITY, c)
        for key in eve_keys(i, st.joint):
            z, zd = Z(key), Z(key, True)
            for proj_word, pc in _projector(key, p, key_input, key_input_b, st.joint):
                add(proj_word * z, c * pc)
                add(proj_word * zd, c * pc)
                if t < 1.0:
                    add(proj_word * zd * z, c * pc * (1.0 - t))
            add(z * zd, c * t)
        out.append(row)
    return out


def _projector(key, p, x, y, joint):
    """Expansion of the outcome projector attached to Eve's operator ``key``.

    Returns (word, coefficient) pairs.  Alice's projector for outcome ``a``
    after noisy pre-processing is ``1/2 + (1-2p)(-1)^a A_x / 2``.
    """
    a = key[1]
    sa = (-1) ** a * (1.0 - 2.0 * p)
    terms = [(IDENTITY, 0.5), (A(x), 0.5 * sa)]
    if not joint:
        return terms
    sb = (-1) ** key[2]
    return [(w * wb, ca * cb) for w, ca in terms for wb, cb in ((IDENTITY, 0.5), (B(y), 0.5 * sb))]


def chsh_row(st: MomentStructure, group: int = 0) -> dict[int, float]:
    """Moment functional of the CHSH expression <A1B1> + <A1B2> + <A2B1> - <A2B2>."""
    row = {}
    for x, y in itertools.product((1, 2), (1, 2)):
        mid = st.require_id(group, A(x) * B(y))
        row[mid] = row.get(mid, 0.0) + (-1.0 if (x, y) == (2, 2) else 1.0)
    return row
