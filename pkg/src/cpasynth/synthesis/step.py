"""One convex-overbounding iteration.

The bilinear decrease condition at vertex ``x_ij`` is expanded around the
current point ``y``; the cross terms ``dgradV'G du``, ``db2 dV`` and
``c eta dz 1'dl`` are bounded by ``w'v <= (w'w + v'v)/2`` and moved into a
Schur-complement block that is linear in the perturbation.  Any perturbation
that keeps every block negative semidefinite therefore keeps the exact
condition satisfied.

Origin vertices carry no block: there ``f(0) = 0``, ``u_0 = dV_0 = du_0 = 0``
and ``c_i0 = 0`` make the exact condition read ``0 <= 0`` for every
perturbation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..optim import DEFAULT_TOL, NUMERICAL_FAILURE, OPTIMAL, ConicProblem, SolveResult, solve_conic
from .problem import (BLOCKS, CostSpec, DecisionPoint, SynthesisContext, constraint_residuals,
                      gradients, max_feasible_b2)

FEASIBILITY_TOL = 1e-6


def grad_operators(ctx: SynthesisContext) -> np.ndarray:
    """``D_i`` with ``grad W_i = D_i @ W[simplex i]``; shape (m_T, n, n+1)."""
    T = ctx.T
    n = T.n
    E = np.hstack([-np.ones((n, 1)), np.eye(n)])
    return np.einsum("ikl,lj->ikj", T.shape_inv, E)


@dataclass
class StepLayout:
    """Map from decision blocks to SDP variable indices (-1 marks a fixed entry)."""

    vmap: np.ndarray
    lmap: np.ndarray
    umap: np.ndarray
    zmap: np.ndarray
    ib1: int
    ib2: int
    n_vars: int

    def apply(self, y: DecisionPoint, dx: np.ndarray) -> DecisionPoint:
        out = y.copy()
        take = lambda idx: np.where(idx >= 0, dx[np.maximum(idx, 0)], 0.0)
        out.V = y.V + take(self.vmap)
        out.L = y.L + take(self.lmap)
        out.U = y.U + take(self.umap)
        out.Z = y.Z + take(self.zmap)
        out.b1 = y.b1 + float(dx[self.ib1])
        if self.ib2 >= 0:
            out.b2 = y.b2 + float(dx[self.ib2])
        return out

    def as_vector(self, dy: dict) -> np.ndarray:
        """Pack a perturbation given per block (same shapes as ``DecisionPoint``)."""
        x = np.zeros(self.n_vars)
        for idx, key in ((self.vmap, "V"), (self.lmap, "L"), (self.umap, "U"), (self.zmap, "Z")):
            if key in dy:
                sel = idx >= 0
                x[idx[sel]] = np.asarray(dy[key], dtype=float)[sel]
        x[self.ib1] = dy.get("b1", 0.0)
        if self.ib2 >= 0:
            x[self.ib2] = dy.get("b2", 0.0)
        return x


def make_layout(ctx: SynthesisContext, z_active: np.ndarray, pin_b2: bool) -> StepLayout:
    T = ctx.T
    N, M, n, m = T.n_vertices, T.n_simplices, T.n, ctx.model.m
    nonorigin = ctx.nonorigin
    k = 0
    vmap = -np.ones(N, dtype=np.int64)
    vmap[nonorigin] = np.arange(nonorigin.sum())
    k += int(nonorigin.sum())
    lmap = (k + np.arange(M * n)).reshape(M, n)
    k += M * n
    umap = -np.ones((N, m), dtype=np.int64)
    umap[nonorigin] = (k + np.arange(int(nonorigin.sum()) * m)).reshape(-1, m)
    k += int(nonorigin.sum()) * m
    zmap = -np.ones(M, dtype=np.int64)
    zmap[z_active] = k + np.arange(int(z_active.sum()))
    k += int(z_active.sum())
    ib1 = k
    k += 1
    ib2 = -1
    if not pin_b2:
        ib2 = k
        k += 1
    return StepLayout(vmap, lmap, umap, zmap, ib1, ib2, k)


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, row, cols, vals):
        cols = np.atleast_1d(cols)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape)
        keep = cols >= 0
        self.rows.append(np.full(int(keep.sum()), row, dtype=np.int64))
        self.cols.append(cols[keep])
        self.vals.append(vals[keep])

    def matrix(self, n_rows, n_cols):
        if not self.rows:
            return sp.csr_matrix((n_rows, n_cols))
        return sp.csr_matrix((np.concatenate(self.vals), (np.concatenate(self.rows),
                                                          np.concatenate(self.cols))),
                             shape=(n_rows, n_cols))


def _objective(layout: StepLayout, y: DecisionPoint, J: CostSpec):
    c = np.zeros(layout.n_vars)
    pdiag = np.zeros(layout.n_vars)
    maps = {"V": layout.vmap, "L": layout.lmap, "U": layout.umap, "Z": layout.zmap,
            "b1": np.array(layout.ib1), "b2": np.array(layout.ib2)}
    for name in BLOCKS:
        idx = maps[name]
        val = np.asarray(y.block(name), dtype=float)
        lin = np.broadcast_to(np.asarray(J.linear.get(name, 0.0), dtype=float), val.shape)
        quad = np.broadcast_to(np.asarray(J.quadratic.get(name, 0.0), dtype=float), val.shape)
        sel = idx >= 0
        np.add.at(c, idx[sel], (lin + 2 * quad * val)[sel])
        np.add.at(pdiag, idx[sel], (2 * quad)[sel])
    P = sp.diags(pdiag) if np.any(pdiag) else None
    return c, P


def z_active_mask(ctx: SynthesisContext, J: CostSpec) -> np.ndarray:
    """Simplexes whose input-gradient bound is a decision variable."""
    if J.weighs("Z"):
        return np.ones(ctx.T.n_simplices, dtype=bool)
    return ctx.eta > 0


def assemble_step(ctx: SynthesisContext, y: DecisionPoint, J: CostSpec, pin_b2: bool = False):
    """Build the perturbation SDP around ``y``; returns ``(ConicProblem, StepLayout)``."""
    T = ctx.T
    n, m = T.n, ctx.model.m
    z_active = z_active_mask(ctx, J)
    lay = make_layout(ctx, z_active, pin_b2)
    Dops = grad_operators(ctx)
    gV, gU = gradients(ctx, y)
    H, h_c = ctx.inputs.H, ctx.inputs.h_c
    norms = ctx.norms()
    o = T.origin_id

    lin = _Triplets()
    h = []

    def row(cols, vals, rhs):
        lin.add(len(h), cols, vals)
        h.append(rhs)

    # b1 + db1 >= eps
    row(lay.ib1, -1.0, y.b1 - ctx.eps_pos)
    for v in np.flatnonzero(ctx.nonorigin):
        # (b1 + db1)|x|^a <= V_x + dV_x
        w = norms[v] ** y.a
        row(np.array([lay.ib1, lay.vmap[v]]), np.array([w, -1.0]), y.V[v] - y.b1 * w)
        # H (u_x + du_x) <= h_c
        for r in range(H.shape[0]):
            row(lay.umap[v], H[r], h_c[r] - H[r] @ y.U[v])
    for i in range(T.n_simplices):
        ids = T.simplices[i]
        Di = Dops[i]
        for k in range(n):
            for sign in (1.0, -1.0):
                # sign * (gradV + dgradV)_k <= l + dl
                row(np.concatenate([lay.vmap[ids], [lay.lmap[i, k]]]),
                    np.concatenate([sign * Di[k], [-1.0]]), y.L[i, k] - sign * gV[i, k])
        if z_active[i]:
            for s in range(m):
                for k in range(n):
                    for sign in (1.0, -1.0):
                        row(np.concatenate([lay.umap[ids, s], [lay.zmap[i]]]),
                            np.concatenate([sign * Di[k], [-1.0]]), y.Z[i] - sign * gU[i, s, k])

    psd = _Triplets()
    F0 = []
    sizes = []
    lsum = y.L.sum(axis=1)
    for i in range(T.n_simplices):
        ids = T.simplices[i]
        Di = Dops[i]
        for j in range(n + 1):
            v = ids[j]
            if v == o:
                continue
            c = T.c[i, j]
            use_q = ctx.eta[i] > 0 and c > 0
            d = 2 * n + 3 + (2 if use_q else 0)
            base = len(F0)
            block0 = np.zeros(d * (d + 1) // 2)
            Gx = ctx.G_vals[v]
            g = ctx.f_vals[v] + Gx @ y.U[v]
            # (0, 0): -phi_hat
            phi0 = float(g @ gV[i]) + c * (ctx.mu[i] + ctx.eta[i] * y.Z[i]) * lsum[i] + y.b2 * y.V[v]
            block0[0] = -phi0
            coefV = g @ Di
            coefV = coefV + np.where(np.arange(n + 1) == j, y.b2, 0.0)
            psd.add(base, lay.vmap[ids], -coefV)
            psd.add(base, lay.umap[v], -(Gx.T @ gV[i]))
            psd.add(base, lay.lmap[i], -c * (ctx.mu[i] + ctx.eta[i] * y.Z[i]))
            if ctx.eta[i] > 0 and lay.zmap[i] >= 0:
                psd.add(base, lay.zmap[i], -c * ctx.eta[i] * lsum[i])
            if lay.ib2 >= 0:
                psd.add(base, lay.ib2, -y.V[v])
            # first column below the corner: the perturbations being squared
            for k in range(n):
                r = 1 + k
                psd.add(base + r * (r + 1) // 2, lay.vmap[ids], -Di[k])
                r = 1 + n + k
                psd.add(base + r * (r + 1) // 2, lay.umap[v], -Gx[k])
            r = 1 + 2 * n
            psd.add(base + r * (r + 1) // 2, lay.vmap[v], -1.0)
            r = 2 + 2 * n
            if lay.ib2 >= 0:
                psd.add(base + r * (r + 1) // 2, lay.ib2, -1.0)
            for r in range(1, 2 * n + 3):
                block0[r * (r + 1) // 2 + r] = 2.0
            if use_q:
                ec = 2.0 / (ctx.eta[i] * c)
                r = 2 * n + 3
                psd.add(base + r * (r + 1) // 2, lay.lmap[i], -1.0)
                block0[r * (r + 1) // 2 + r] = ec
                r = 2 * n + 4
                psd.add(base + r * (r + 1) // 2, lay.zmap[i], -1.0)
                block0[r * (r + 1) // 2 + r] = ec
            F0.extend(block0.tolist())
            sizes.append(d)

    c_obj, P_obj = _objective(lay, y, J)
    prob = ConicProblem(
        n_vars=lay.n_vars, c=c_obj, P=P_obj,
        G=lin.matrix(len(h), lay.n_vars), h=np.array(h),
        psd_sizes=sizes, psd_F=psd.matrix(len(F0), lay.n_vars), psd_F0=np.array(F0),
        constant=J(y),
    )
    return prob, lay


def polish(ctx: SynthesisContext, y: DecisionPoint, z_active: np.ndarray, pin_b2: bool) -> DecisionPoint:
    """Remove solver-tolerance slop so the simple constraints hold exactly.

    Inputs are scaled toward 0 into the input polytope, gradient bounds are
    raised to the actual gradients, ``b1`` is lowered to the tight value and
    ``b2`` is set to (phase 1) or capped by (phase 2) the exact feasible rate.
    """
    y = y.copy()
    T = ctx.T
    ratio = (y.U @ ctx.inputs.H.T) / ctx.inputs.h_c
    scale = np.maximum(1.0, ratio.max(axis=1, initial=0.0))
    y.U = y.U / scale[:, None]
    if T.origin_id >= 0:
        y.V[T.origin_id] = 0.0
        y.U[T.origin_id] = 0.0
    gV, gU = gradients(ctx, y)
    y.L = np.maximum(y.L, np.abs(gV))
    tight_z = np.abs(gU).max(axis=(1, 2))
    y.Z = np.where(z_active, np.maximum(y.Z, tight_z), tight_z)
    nz = ctx.nonorigin
    norms = ctx.norms()[nz]
    y.b1 = max(ctx.eps_pos, min(y.b1, float(np.min(y.V[nz] / norms ** y.a))))
    tight = max_feasible_b2(ctx, y)
    y.b2 = min(y.b2, tight) if pin_b2 else tight
    return y


def step(ctx: SynthesisContext, y: DecisionPoint, J: CostSpec, pin_b2: bool = False,
         tol: float = DEFAULT_TOL):
    """Solve one perturbation SDP; returns ``(y_next, SolveResult)``.

    On any solver breakdown or if the polished point fails the exact
    feasibility pass, ``y`` is returned unchanged with status
    ``numerical_failure``.
    """
    prob, lay = assemble_step(ctx, y, J, pin_b2)
    res = solve_conic(prob, tol)
    if res.status != OPTIMAL:
        return y, res
    y_next = polish(ctx, lay.apply(y, res.x), z_active_mask(ctx, J), pin_b2)
    worst = max(constraint_residuals(ctx, y_next).values())
    if worst > FEASIBILITY_TOL:
        return y, SolveResult(NUMERICAL_FAILURE, res.x, res.objective, worst, info=res.info)
    res.info["feasibility_residual"] = worst
    return y_next, res
