"""Primal-dual interior-point solver for block-diagonal moment SDPs.

The problem is posed on a vector of moments ``x``::

    minimize    c . x
    subject to  Gamma_b(x) = sum_j x_j F_bj  >= 0      for every block b
                E x = f

Equalities are eliminated first (``x = x0 + T z``); what remains is a
linear-matrix-inequality problem in ``z`` solved with the HKM search
direction and Mehrotra's predictor-corrector.  The Schur complement is
assembled per block and reduced over the block-local variables before the
small system on variables shared by several blocks is solved, so the cost
grows linearly with the number of blocks.

Returned dual information: ``X_b`` (one PSD matrix per block) and one
multiplier per equality row with ``c = sum_b F_b^*(X_b) + E^T lambda``, so
``f . lambda`` is a certified lower bound whenever the ``X_b`` are exactly
feasible.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL = "numerical_failure"
MAX_ITER = "max_iterations"
INACCURATE = "optimal_inaccurate"  # stalled with gap and residuals below ``loose_tol``


class SdpError(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass
class Block:
    """One PSD block: upper-triangle entries ``(row, col, var, coef)``."""

    size: int
    rows: np.ndarray
    cols: np.ndarray
    var: np.ndarray
    coef: np.ndarray

    @classmethod
    def from_ids(cls, ids: np.ndarray) -> "Block":
        n = ids.shape[0]
        r, c = np.triu_indices(n)
        return cls(n, r, c, ids[r, c].astype(np.int64), np.ones(len(r)))


@dataclass
class SdpProblem:
    n_vars: int
    blocks: list[Block]
    objective: np.ndarray
    eq_matrix: sp.csr_matrix
    eq_rhs: np.ndarray
    eq_labels: list = field(default_factory=list)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.eq_matrix = sp.csr_matrix(self.eq_matrix)
        self.eq_rhs = np.asarray(self.eq_rhs, dtype=float)
        if self.objective.shape != (self.n_vars,):
            raise ValueError("objective length must equal n_vars")
        if self.eq_matrix.shape != (len(self.eq_rhs), self.n_vars):
            raise ValueError("equality matrix shape mismatch")
        used = set()
        for b in self.blocks:
            used.update(np.unique(b.var).tolist())
        bad = np.flatnonzero(self.objective)
        if any(int(j) not in used and not self.eq_matrix[:, j].nnz for j in bad):
            raise ValueError("objective references variables absent from every block")


@dataclass
class SdpSolution:
    status: str
    primal_value: float  # c . x at the returned moments
    dual_value: float  # certified side: f . lambda
    x: np.ndarray
    eq_duals: np.ndarray
    dual_blocks: list[np.ndarray]
    iterations: int
    primal_residual: float
    dual_residual: float
    seconds: float

    @property
    def gap(self) -> float:
        return abs(self.primal_value - self.dual_value)

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, INACCURATE)


# --------------------------------------------------------------------------
# equality elimination


def _eliminate(problem: SdpProblem):
    """Return ``x0``, sparse ``T`` with ``x = x0 + T z``, and per-row bookkeeping."""
    n = problem.n_vars
    E = problem.eq_matrix.tocsc()
    f = problem.eq_rhs
    touched = np.unique(E.tocoo().col)
    free = np.setdiff1d(np.arange(n), touched)
    x0 = np.zeros(n)
    if len(touched):
        Ek = E[:, touched].toarray()
        sol, *_ = np.linalg.lstsq(Ek, f, rcond=None)
        if np.linalg.norm(Ek @ sol - f) > 1e-9 * (1.0 + np.linalg.norm(f)):
            raise SdpError("equality constraints are inconsistent")
        x0[touched] = sol
        u, s, vt = np.linalg.svd(Ek)
        rank = int(np.sum(s > 1e-10 * max(1.0, s[0] if len(s) else 1.0)))
        null = vt[rank:].T  # touched x (k - rank)
    else:
        null = np.zeros((0, 0))
    nz = len(free) + null.shape[1]
    T = sp.lil_matrix((n, nz))
    for j, v in enumerate(free):
        T[v, j] = 1.0
    for j in range(null.shape[1]):
        for r, val in zip(touched, null[:, j]):
            if abs(val) > 1e-14:
                T[r, len(free) + j] = val
    return x0, T.tocsc(), touched


# --------------------------------------------------------------------------
# solver


class _BlockData:
    """Block map in reduced variables: Gamma = C + sum_j z_j G_j (dense per column)."""

    def __init__(self, block: Block, x0: np.ndarray, T: sp.csc_matrix):
        n = block.size
        self.n = n
        r, c, v, a = block.rows, block.cols, block.var, block.coef
        # full symmetric entry list
        off = r != c
        rr = np.concatenate([r, c[off]])
        cc = np.concatenate([c, r[off]])
        vv = np.concatenate([v, v[off]])
        aa = np.concatenate([a, a[off]])
        lin = rr + n * cc  # column-major index
        inc = sp.csr_matrix((aa, (lin, vv)), shape=(n * n, T.shape[0]))
        self.C = (inc @ x0).reshape(n, n, order="F")
        P = (inc @ T).tocsc()
        P.eliminate_zeros()
        self.vars = np.flatnonzero(np.diff(P.indptr))
        self.P = P[:, self.vars].tocsc()  # n^2 x |vars|
        # columns grouped by entry count so the Schur products run batched
        counts = np.diff(self.P.indptr)
        self.groups = []
        for k in np.unique(counts):
            cols = np.flatnonzero(counts == k)
            for s0 in range(0, len(cols), 512):
                cc_ = cols[s0:s0 + 512]
                pos = self.P.indptr[cc_][:, None] + np.arange(k)[None, :]
                idx = self.P.indices[pos]
                self.groups.append((cc_, idx % n, idx // n, self.P.data[pos]))
        self.PT = self.P.T.tocsr()

    def gamma(self, z: np.ndarray) -> np.ndarray:
        return self.C + (self.P @ z[self.vars]).reshape(self.n, self.n, order="F")

    def adjoint(self, X: np.ndarray) -> np.ndarray:
        """<G_j, X> for the block's variables."""
        return self.P.T @ X.reshape(-1, order="F")

    def schur(self, X: np.ndarray, Sinv: np.ndarray) -> np.ndarray:
        """M_ij = <G_i, X G_j Sinv> over the block's variables."""
        n = self.n
        M = np.empty((self.P.shape[1], self.P.shape[1]))
        for cols, U, V, A in self.groups:
            Xg = X[:, U].transpose(1, 0, 2)  # (c, n, k)
            Sg = A[:, :, None] * Sinv[V, :]  # (c, k, n)
            W = np.matmul(Xg, Sg)  # (c, n, n) = X G_j Sinv
            M[:, cols] = self.PT @ W.transpose(0, 2, 1).reshape(len(cols), n * n).T
        return 0.5 * (M + M.T)


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Li = sla.solve_triangular(L, np.eye(len(X)), lower=True)
    ev = np.linalg.eigvalsh(Li @ dX @ Li.T)
    lo = ev[0]
    return np.inf if lo >= 0 else -1.0 / lo


def _chol_inv(S: np.ndarray):
    L = np.linalg.cholesky(S)
    Li = sla.solve_triangular(L, np.eye(len(S)), lower=True)
    return Li.T @ Li


class _SchurSolver:
    """Block-arrow factorization of the Schur complement."""

    def __init__(self, blocks: list[_BlockData], nz: int):
        counts = np.zeros(nz, dtype=int)
        for bd in blocks:
            counts[bd.vars] += 1
        self.shared = np.flatnonzero(counts > 1)
        self.missing = np.flatnonzero(counts == 0)
        pos = -np.ones(nz, dtype=int)
        pos[self.shared] = np.arange(len(self.shared))
        self.nz = nz
        self.parts = []
        for bd in blocks:
            is_sh = pos[bd.vars] >= 0
            self.parts.append(
                (np.flatnonzero(~is_sh), np.flatnonzero(is_sh), bd.vars[~is_sh], pos[bd.vars[is_sh]])
            )

    def factor(self, Ms: list[np.ndarray]):
        ns = len(self.shared)
        S = np.zeros((ns, ns))
        self.fac = []
        for M, (li, si, lg, sg) in zip(Ms, self.parts):
            Mll = M[np.ix_(li, li)]
            Mls = M[np.ix_(li, si)]
            Mss = M[np.ix_(si, si)]
            S[np.ix_(sg, sg)] += Mss
            if len(li):
                cf = _robust_factor(Mll)
                K = _robust_solve(cf, Mls)
                S[np.ix_(sg, sg)] -= Mls.T @ K
            else:
                cf, K = None, np.zeros((0, len(si)))
            self.fac.append((cf, K))
        self.sfac = _robust_factor(S) if ns else None

    def solve(self, r: np.ndarray) -> np.ndarray:
        out = np.zeros(self.nz)
        rs = r[self.shared].copy()
        sols = []
        for (cf, K), (li, si, lg, sg) in zip(self.fac, self.parts):
            if cf is None:
                sols.append(None)
                continue
            w = _robust_solve(cf, r[lg])
            sols.append(w)
            rs[sg] -= K.T @ r[lg]
        ys = _robust_solve(self.sfac, rs) if self.sfac is not None else rs
        out[self.shared] = ys
        for w, (cf, K), (li, si, lg, sg) in zip(sols, self.fac, self.parts):
            if w is not None:
                out[lg] = w - K @ ys[sg]
        return out


def _robust_factor(M):
    d = np.sqrt(np.maximum(np.abs(np.diag(M)), 1e-300))
    Ms = M / d[:, None] / d[None, :]
    try:
        return ("chol", sla.cho_factor(Ms + 1e-14 * np.eye(len(M)), lower=True), d)
    except (np.linalg.LinAlgError, ValueError):
        return ("lu", sla.lu_factor(Ms + 1e-12 * np.eye(len(M))), d)


def _robust_solve(fac, r):
    kind, f, d = fac
    rr = r / (d[:, None] if r.ndim == 2 else d)
    s = sla.cho_solve(f, rr) if kind == "chol" else sla.lu_solve(f, rr)
    return s / (d[:, None] if r.ndim == 2 else d)


def solve_sdp(
    problem: SdpProblem,
    tol: float = 1e-8,
    max_iter: int = 120,
    raise_on_failure: bool = False,
    loose_tol: float = 1e-6,
) -> SdpSolution:
    """Solve a moment SDP; see the module docstring for the problem form.

    ``status`` is one of ``optimal``, ``optimal_inaccurate`` (stalled after
    reaching ``loose_tol``), ``infeasible`` (no moments satisfy the
    constraints), ``unbounded``, ``numerical_failure`` or ``max_iterations``.
    """
    t_start = time.perf_counter()
    x0, T, touched = _eliminate(problem)
    nz = T.shape[1]
    c = problem.objective
    cz = T.T @ c
    c0 = float(c @ x0)
    blocks = [_BlockData(b, x0, T) for b in problem.blocks]
    schur = _SchurSolver(blocks, nz)
    if len(schur.missing) and np.any(np.abs(cz[schur.missing]) > 1e-12):
        return _finish(problem, UNBOUNDED, x0, T, np.zeros(nz), [np.eye(b.n) for b in blocks],
                       blocks, -np.inf, -np.inf, 0, np.inf, np.inf, t_start)

    b = -cz  # SDPA dual form: max b.y, S = C - sum y_j A_j with A_j = -G_j
    N = sum(bd.n for bd in blocks)
    normb = 1.0 + np.linalg.norm(b)
    normC = 1.0 + np.sqrt(sum(np.sum(bd.C**2) for bd in blocks))
    normA = max([1.0] + [float(np.sqrt(bd.P.multiply(bd.P).sum(axis=0).max())) for bd in blocks if bd.P.nnz])
    xi = max(10.0, np.sqrt(N), N * np.max((1.0 + np.abs(b)) / (1.0 + normA)) if nz else 10.0)
    eta = max(10.0, np.sqrt(N), normC)
    X = [xi * np.eye(bd.n) for bd in blocks]
    S = [eta * np.eye(bd.n) for bd in blocks]
    y = np.zeros(nz)

    def A_of(Xs):
        out = np.zeros(nz)
        for bd, Xb in zip(blocks, Xs):
            out[bd.vars] -= bd.adjoint(Xb)
        return out

    def Astar(yv):
        return [-(bd.P @ yv[bd.vars]).reshape(bd.n, bd.n, order="F") for bd in blocks]

    status = MAX_ITER
    pinf = dinf = relgap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        rp = b - A_of(X)
        Ay = Astar(y)
        Rd = [bd.C - Ayb - Sb for bd, Ayb, Sb in zip(blocks, Ay, S)]
        XS = sum(float(np.sum(Xb * Sb)) for Xb, Sb in zip(X, S))
        mu = XS / N
        pobj = sum(float(np.sum(bd.C * Xb)) for bd, Xb in zip(blocks, X))
        dobj = float(b @ y)
        pinf = np.linalg.norm(rp) / normb
        dinf = np.sqrt(sum(float(np.sum(R**2)) for R in Rd)) / normC
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        log.debug("it %d pobj %.10g dobj %.10g gap %.2e pinf %.2e dinf %.2e", it, pobj, dobj, relgap, pinf, dinf)
        if relgap < tol and pinf < tol and dinf < tol:
            status = OPTIMAL
            break
        # infeasibility certificates
        nX = sum(np.trace(Xb) for Xb in X)
        if pobj < 0 and nX > 1e8 and np.linalg.norm(A_of(X)) / -pobj < 1e-6 and dinf > 10 * tol:
            status = INFEASIBLE
            break
        if dobj > 1e8 * (1.0 + abs(pobj)) and pinf > 10 * tol:
            status = UNBOUNDED
            break
        try:
            Sinv = [_chol_inv(Sb) for Sb in S]
            schur.factor([bd.schur(Xb, Si) for bd, Xb, Si in zip(blocks, X, Sinv)])
        except (np.linalg.LinAlgError, ValueError):
            status = NUMERICAL
            break

        def direction(Rc):
            tmp = [(Rcb - Xb @ Rdb) @ Si for Rcb, Xb, Rdb, Si in zip(Rc, X, Rd, Sinv)]
            rhs = rp - A_of(tmp)
            dy = schur.solve(rhs)
            Ady = Astar(dy)
            dS = [Rdb - Adb for Rdb, Adb in zip(Rd, Ady)]
            dX = [(Rcb - Xb @ dSb) @ Si for Rcb, Xb, dSb, Si in zip(Rc, X, dS, Sinv)]
            dX = [0.5 * (d + d.T) for d in dX]
            return dX, dy, dS

        def steps(dX, dS):
            ap = min([_max_step(Xb, d) for Xb, d in zip(X, dX)] + [np.inf])
            ad = min([_max_step(Sb, d) for Sb, d in zip(S, dS)] + [np.inf])
            return ap, ad

        XSm = [-(Xb @ Sb) for Xb, Sb in zip(X, S)]
        dXp, dyp, dSp = direction(XSm)
        ap, ad = steps(dXp, dSp)
        ap, ad = min(1.0, ap), min(1.0, ad)
        newgap = sum(float(np.sum((Xb + ap * d1) * (Sb + ad * d2))) for Xb, d1, Sb, d2 in zip(X, dXp, S, dSp))
        sigma = min(1.0, max(0.0, newgap / XS)) ** 3
        Rc = [sigma * mu * np.eye(len(Xb)) - Xb @ Sb - d1 @ d2 for Xb, Sb, d1, d2 in zip(X, S, dXp, dSp)]
        dX, dy, dS = direction(Rc)
        ap, ad = steps(dX, dS)
        gam = 0.95 if it < 5 else 0.98
        ap, ad = min(1.0, gam * ap), min(1.0, gam * ad)
        if ap < 1e-10 and ad < 1e-10:
            status = NUMERICAL
            break
        X = [Xb + ap * d for Xb, d in zip(X, dX)]
        S = [Sb + ad * d for Sb, d in zip(S, dS)]
        y = y + ad * dy
    else:
        it = max_iter
    if status in (NUMERICAL, MAX_ITER) and max(relgap, pinf, dinf) < loose_tol:
        status = INACCURATE

    pobj = sum(float(np.sum(bd.C * Xb)) for bd, Xb in zip(blocks, X))
    dobj = float(b @ y)
    sol = _finish(problem, status, x0, T, y, X, blocks, c0 - dobj, c0 - pobj, it, pinf, dinf, t_start)
    if raise_on_failure and status != OPTIMAL:
        raise SdpError(f"SDP solve ended with status {status}", sol)
    return sol


def _finish(problem, status, x0, T, z, X, blocks, primal, dual, it, pinf, dinf, t_start):
    x = x0 + T @ z
    # multipliers: E^T lam = c - sum_b F_b^*(X_b) on touched variables
    g = problem.objective.copy()
    for blk, Xb in zip(problem.blocks, X):
        w = np.where(blk.rows == blk.cols, 1.0, 2.0) * blk.coef * Xb[blk.rows, blk.cols]
        np.subtract.at(g, blk.var, w)
    E = problem.eq_matrix
    if E.shape[0]:
        lam, *_ = np.linalg.lstsq(E.toarray().T, g, rcond=None)
    else:
        lam = np.zeros(0)
    if E.shape[0] and status in (OPTIMAL, INACCURATE):
        dual = float(problem.eq_rhs @ lam)
    return SdpSolution(
        status=status,
        primal_value=float(primal),
        dual_value=float(dual),
        x=x,
        eq_duals=lam,
        dual_blocks=X,
        iterations=it,
        primal_residual=float(dinf),
        dual_residual=float(pinf),
        seconds=time.perf_counter() - t_start,
    )


# --------------------------------------------------------------------------
# interchange format


def dump_sdpa(problem: SdpProblem, path) -> None:
    """Write the problem in SDPA sparse format (``.dat-s``).

    SDPA's primal ``min c.x s.t. sum_i x_i F_i - F_0 >= 0`` matches the
    moment form directly; equalities are kept as extra 1x1 blocks pairs
    ``E x - f >= 0`` and ``f - E x >= 0`` so that external solvers see the
    unreduced problem.
    """
    E = problem.eq_matrix.tocoo()
    lines = ['"moment SDP: min c.x s.t. Gamma(x) >= 0, E x = f']
    nb = len(problem.blocks)
    neq = E.shape[0]
    lines.append(str(problem.n_vars))
    lines.append(str(nb + (1 if neq else 0)))
    sizes = [str(b.size) for b in problem.blocks]
    if neq:
        sizes.append(str(-2 * neq))  # diagonal LP block
    lines.append(" ".join(sizes))
    lines.append(" ".join(repr(float(v)) for v in problem.objective))
    for k, fk in enumerate(problem.eq_rhs):
        if fk:
            lines.append(f"0 {nb + 1} {2 * k + 1} {2 * k + 1} {float(fk)!r}")
            lines.append(f"0 {nb + 1} {2 * k + 2} {2 * k + 2} {-float(fk)!r}")
    for bi, blk in enumerate(problem.blocks, start=1):
        for r, c, v, a in zip(blk.rows, blk.cols, blk.var, blk.coef):
            lines.append(f"{v + 1} {bi} {r + 1} {c + 1} {float(a)!r}")
    for k, j, val in zip(E.row, E.col, E.data):
        lines.append(f"{j + 1} {nb + 1} {2 * k + 1} {2 * k + 1} {float(val)!r}")
        lines.append(f"{j + 1} {nb + 1} {2 * k + 2} {2 * k + 2} {-float(val)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_sdpa(path) -> SdpProblem:
    """Read a file written by :func:`dump_sdpa` back into an :class:`SdpProblem`."""
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip() and ln.strip()[0] not in '"*']
    n = int(raw[0].split()[0])
    nblk = int(raw[1].split()[0])
    sizes = [int(s) for s in raw[2].replace(",", " ").split()[:nblk]]
    c = np.array([float(s) for s in raw[3].replace(",", " ").split()[:n]])
    psd = [i for i, s in enumerate(sizes) if s > 0]
    ents = {i: ([], [], [], []) for i in psd}
    lp_rows: dict[int, dict[int, float]] = {}
    lp_rhs: dict[int, float] = {}
    for ln in raw[4:]:
        mat, blk, i, j, val = ln.split()
        mat, blk, i, j, val = int(mat), int(blk) - 1, int(i) - 1, int(j) - 1, float(val)
        if sizes[blk] > 0:
            if mat == 0:
                raise ValueError("constant PSD terms are not supported by load_sdpa")
            r, cc, v, a = ents[blk]
            r.append(min(i, j)); cc.append(max(i, j)); v.append(mat - 1); a.append(val)
        elif i % 2 == 0:  # keep only the "E x - f >= 0" rows
            k = i // 2
            if mat == 0:
                lp_rhs[k] = val
            else:
                lp_rows.setdefault(k, {})[mat - 1] = val
    blocks = [
        Block(sizes[i], np.array(ents[i][0]), np.array(ents[i][1]), np.array(ents[i][2], dtype=np.int64), np.array(ents[i][3]))
        for i in psd
    ]
    neq = max(list(lp_rows) + list(lp_rhs) + [-1]) + 1
    E = sp.lil_matrix((neq, n))
    for k, row in lp_rows.items():
        for j, v in row.items():
            E[k, j] = v
    f = np.array([lp_rhs.get(k, 0.0) for k in range(neq)])
    return SdpProblem(n, blocks, c, E.tocsr(), f)
