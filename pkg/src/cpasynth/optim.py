"""Backend-neutral LP/QP/SDP containers and their solvers.

SDPs go to Clarabel through its native sparse interface; small dense QPs go
to CVXOPT and are then polished on their active set so that active bounds are
met exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import clarabel
import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"

DEFAULT_TOL = 1e-7


def tri_size(d: int) -> int:
    return d * (d + 1) // 2


def tri_index(r: int, c: int) -> int:
    """Position of entry (r, c), r >= c, in the row-major lower triangle."""
    return r * (r + 1) // 2 + c


def unpack_tri(vec: np.ndarray, d: int) -> np.ndarray:
    M = np.zeros((d, d))
    rows, cols = np.tril_indices(d)
    M[rows, cols] = vec
    M[cols, rows] = vec
    return M


@dataclass
class ConicProblem:
    """``min 1/2 x'Px + c'x  s.t.  A_eq x = b_eq,  G x <= h,  M_k(x) >= 0``.

    Each PSD block ``M_k(x) = F0_k + F_k x`` is stored as its lower triangle in
    row-major order; all blocks are stacked into ``psd_F``/``psd_F0``.
    """

    n_vars: int
    c: np.ndarray
    P: Optional[sp.spmatrix] = None
    A_eq: Optional[sp.spmatrix] = None
    b_eq: Optional[np.ndarray] = None
    G: Optional[sp.spmatrix] = None
    h: Optional[np.ndarray] = None
    psd_sizes: list = field(default_factory=list)
    psd_F: Optional[sp.spmatrix] = None
    psd_F0: Optional[np.ndarray] = None
    constant: float = 0.0

    def __post_init__(self):
        n = self.n_vars
        self.c = np.asarray(self.c, dtype=float).reshape(n)
        empty = sp.csr_matrix((0, n))
        self.A_eq = empty if self.A_eq is None else sp.csr_matrix(self.A_eq)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.G = empty if self.G is None else sp.csr_matrix(self.G)
        self.h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).reshape(-1)
        self.psd_F = empty if self.psd_F is None else sp.csr_matrix(self.psd_F)
        self.psd_F0 = np.zeros(0) if self.psd_F0 is None else np.asarray(self.psd_F0, dtype=float).reshape(-1)
        if self.P is not None:
            self.P = sp.csr_matrix(self.P)
        for M in (self.A_eq, self.G, self.psd_F):
            if M.shape[1] != n:
                raise ValueError("constraint matrix column count differs from n_vars")
        if self.A_eq.shape[0] != self.b_eq.size or self.G.shape[0] != self.h.size:
            raise ValueError("constraint right-hand side has the wrong length")
        if sum(tri_size(d) for d in self.psd_sizes) != self.psd_F.shape[0] or self.psd_F0.size != self.psd_F.shape[0]:
            raise ValueError("PSD block sizes do not match the stacked block data")

    def add_psd_block(self, F0: np.ndarray, F: np.ndarray):
        """Append one block given as dense symmetric ``F0`` and ``F[k]`` per variable."""
        d = F0.shape[0]
        rows, cols = np.tril_indices(d)
        f0 = F0[rows, cols]
        Fk = np.stack([Fi[rows, cols] for Fi in F], axis=1) if len(F) else np.zeros((f0.size, 0))
        self.psd_F = sp.vstack([self.psd_F, sp.csr_matrix(Fk)]).tocsr()
        self.psd_F0 = np.concatenate([self.psd_F0, f0])
        self.psd_sizes.append(d)

    def objective(self, x: np.ndarray) -> float:
        val = float(self.c @ x) + self.constant
        if self.P is not None:
            val += 0.5 * float(x @ (self.P @ x))
        return val

    def psd_blocks(self, x: np.ndarray) -> list:
        vec = self.psd_F0 + self.psd_F @ x
        out, pos = [], 0
        for d in self.psd_sizes:
            k = tri_size(d)
            out.append(unpack_tri(vec[pos:pos + k], d))
            pos += k
        return out

    def min_eigenvalues(self, x: np.ndarray) -> np.ndarray:
        blocks = self.psd_blocks(x)
        out = np.empty(len(blocks))
        by_size = {}
        for k, B in enumerate(blocks):
            by_size.setdefault(B.shape[0], []).append(k)
        for d, ks in by_size.items():
            out[ks] = np.linalg.eigvalsh(np.stack([blocks[k] for k in ks]))[:, 0]
        return out

    def max_residual(self, x: np.ndarray) -> float:
        res = 0.0
        if self.b_eq.size:
            res = max(res, float(np.abs(self.A_eq @ x - self.b_eq).max()))
        if self.h.size:
            res = max(res, float(np.max(self.G @ x - self.h, initial=0.0)))
        if self.psd_sizes:
            res = max(res, float(max(0.0, -self.min_eigenvalues(x).min())))
        return res


@dataclass
class SolveResult:
    status: str
    x: Optional[np.ndarray]
    objective: float
    residual: float
    dual: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)


def _svec_scale(sizes) -> np.ndarray:
    out = []
    for d in sizes:
        rows, cols = np.tril_indices(d)
        out.append(np.where(rows == cols, 1.0, math.sqrt(2.0)))
    return np.concatenate(out) if out else np.zeros(0)


def solve_conic(P: ConicProblem, tol: float = DEFAULT_TOL, verbose: bool = False) -> SolveResult:
    n = P.n_vars
    blocks, rhs, cones = [], [], []
    if P.b_eq.size:
        blocks.append(P.A_eq)
        rhs.append(P.b_eq)
        cones.append(clarabel.ZeroConeT(P.b_eq.size))
    if P.h.size:
        blocks.append(P.G)
        rhs.append(P.h)
        cones.append(clarabel.NonnegativeConeT(P.h.size))
    if P.psd_sizes:
        S = sp.diags(_svec_scale(P.psd_sizes))
        blocks.append(-(S @ P.psd_F))
        rhs.append(S @ P.psd_F0)
        for d in P.psd_sizes:
            cones.append(clarabel.NonnegativeConeT(1) if d == 1 else clarabel.PSDTriangleConeT(d))
    A = sp.vstack(blocks).tocsc() if blocks else sp.csc_matrix((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    Pq = sp.triu(P.P).tocsc() if P.P is not None else sp.csc_matrix((n, n))

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.tol_feas = min(settings.tol_feas, tol * 0.1)
    settings.tol_gap_abs = min(settings.tol_gap_abs, tol * 0.1)
    settings.max_iter = 200
    solver = clarabel.DefaultSolver(Pq, P.c, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    x = np.asarray(sol.x, dtype=float)
    info = {"backend": "clarabel", "backend_version": clarabel.__version__,
            "backend_status": status, "iterations": int(sol.iterations)}
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveResult(INFEASIBLE, None, math.inf, math.inf, info=info)
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return SolveResult(UNBOUNDED, None, -math.inf, math.inf, info=info)
    if not np.all(np.isfinite(x)):
        return SolveResult(NUMERICAL_FAILURE, None, math.nan, math.inf, info=info)
    res = P.max_residual(x)
    # AlmostSolved is accepted only when the independent residual agrees
    if status == "Solved" or (status == "AlmostSolved" and res <= 10 * tol):
        return SolveResult(OPTIMAL, x, P.objective(x), res, info=info)
    return SolveResult(NUMERICAL_FAILURE, x, P.objective(x), res, info=info)


def solve_qp(Hmat, hvec, A, b, tol: float = DEFAULT_TOL) -> SolveResult:
    """``min u'Hu + h'u  s.t.  A u <= b`` for positive definite ``H``."""
    import cvxopt

    H = np.atleast_2d(np.asarray(Hmat, dtype=float))
    hv = np.asarray(hvec, dtype=float).reshape(-1)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    cvxopt.solvers.options["show_progress"] = False
    cvxopt.solvers.options["abstol"] = 1e-10
    cvxopt.solvers.options["reltol"] = 1e-10
    cvxopt.solvers.options["feastol"] = 1e-10
    try:
        sol = cvxopt.solvers.qp(cvxopt.matrix(2 * H), cvxopt.matrix(hv), cvxopt.matrix(A), cvxopt.matrix(b))
    except (ValueError, ArithmeticError):
        return SolveResult(NUMERICAL_FAILURE, None, math.nan, math.inf)
    if sol["status"] != "optimal" and sol["x"] is None:
        return SolveResult(INFEASIBLE, None, math.inf, math.inf)
    u = np.array(sol["x"]).reshape(-1)
    lam = np.array(sol["z"]).reshape(-1)
    u, lam = _polish(H, hv, A, b, u, lam)
    res = float(np.max(A @ u - b, initial=0.0))
    if res > tol:
        return SolveResult(INFEASIBLE, u, float(u @ H @ u + hv @ u), res, dual=lam)
    return SolveResult(OPTIMAL, u, float(u @ H @ u + hv @ u), res, dual=lam)


def _polish(H, hv, A, b, u, lam, act_tol=1e-7):
    """Re-solve the KKT system on the detected active set; keep it if consistent."""
    active = np.flatnonzero(b - A @ u < act_tol * (1 + np.abs(b)))
    m = u.size
    if active.size == 0:
        cand = np.linalg.solve(2 * H, -hv)
        if np.all(A @ cand <= b):
            return cand, np.zeros_like(lam)
        return u, lam
    Aa = A[active]
    K = np.block([[2 * H, Aa.T], [Aa, np.zeros((active.size, active.size))]])
    rhs = np.concatenate([-hv, b[active]])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    cand, la = sol[:m], sol[m:]
    if np.all(la >= -1e-9) and np.all(A @ cand <= b + 1e-12) and np.allclose(Aa @ cand, b[active], atol=1e-12):
        full = np.zeros_like(lam)
        full[active] = np.clip(la, 0.0, None)
        return cand, full
    return u, lam


def qp_kkt_residual(Hmat, hvec, A, b, u, lam) -> float:
    """Max of stationarity, primal/dual feasibility and complementarity violations."""
    H = np.atleast_2d(np.asarray(Hmat, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    stat = 2 * H @ u + np.asarray(hvec, dtype=float) + A.T @ lam
    slack = np.asarray(b, dtype=float) - A @ u
    return float(max(np.abs(stat).max(), max(0.0, -slack.min()), max(0.0, -lam.min()),
                     np.abs(lam * slack).max()))


def write_sdpa(P: ConicProblem, path) -> None:
    """Dump a linear-objective problem in SDPA sparse format (``.dat-s``).

    Layout: block 1 is diagonal and holds ``h - Gx >= 0`` followed by both
    directions of ``A_eq x = b_eq``; blocks 2.. are the PSD blocks in order.
    SDPA's ``F0`` is the negated constant term of each block.
    """
    if P.P is not None and P.P.nnz:
        raise ValueError("SDPA format has no quadratic objective")
    G = sp.vstack([P.G, P.A_eq, -P.A_eq]).tocsc()
    h = np.concatenate([P.h, P.b_eq, -P.b_eq])
    lp = h.size
    sizes = ([-lp] if lp else []) + list(P.psd_sizes)
    lines = [f"{P.n_vars}", f"{len(sizes)}", " ".join(str(s) for s in sizes),
             " ".join(repr(float(v)) for v in P.c)]
    entries = []
    blk0 = 1
    if lp:
        for r in range(lp):
            if h[r] != 0:
                entries.append((0, 1, r + 1, r + 1, -h[r]))
        Gc = G.tocoo()
        for r, k, v in zip(Gc.row, Gc.col, Gc.data):
            entries.append((k + 1, 1, r + 1, r + 1, -v))
        blk0 = 2
    pos = 0
    F = P.psd_F.tocsr()
    for bi, d in enumerate(P.psd_sizes):
        rows, cols = np.tril_indices(d)
        for t in range(tri_size(d)):
            r, c = rows[t], cols[t]
            if P.psd_F0[pos + t] != 0:
                entries.append((0, blk0 + bi, c + 1, r + 1, -P.psd_F0[pos + t]))
            row = F.getrow(pos + t)
            for k, v in zip(row.indices, row.data):
                entries.append((k + 1, blk0 + bi, c + 1, r + 1, v))
        pos += tri_size(d)
    entries.sort()
    lines += [f"{k} {blk} {i} {j} {float(v)!r}" for k, blk, i, j, v in entries]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
