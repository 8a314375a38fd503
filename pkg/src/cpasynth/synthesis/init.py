"""Feasible starting points for the iterative synthesis."""
from __future__ import annotations

import numpy as np
import scipy.linalg

from ..system import linearize
from .problem import DecisionPoint, SynthesisContext, gradients, max_feasible_b2


class RiccatiFailure(RuntimeError):
    pass


def solve_care(A, B, Q, R):
    """Stabilizing solution of ``A'P + PA - P B R^-1 B' P + Q = 0`` and gain ``K``."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    try:
        P = scipy.linalg.solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RiccatiFailure(str(exc)) from exc
    K = np.linalg.solve(R, B.T @ P)
    if not np.all(np.isfinite(P)) or np.max(np.linalg.eigvals(A - B @ K).real) >= 0:
        raise RiccatiFailure("no stabilizing Riccati solution")
    return 0.5 * (P + P.T), K


def care_residual(A, B, Q, R, P) -> float:
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    M = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.abs(M).max())


def _complete(ctx: SynthesisContext, V, U, a, b1) -> DecisionPoint:
    """Tight gradient bounds and the largest feasible decay rate for given V, U."""
    T = ctx.T
    y = DecisionPoint(V, np.zeros((T.n_simplices, T.n)), U, np.zeros(T.n_simplices), a, b1, 0.0)
    gV, gU = gradients(ctx, y)
    y.L = np.abs(gV)
    y.Z = np.abs(gU).max(axis=(1, 2))
    y.b2 = max_feasible_b2(ctx, y)
    return y


def admissible_scale(inputs, U: np.ndarray) -> float:
    """Smallest ``kappa >= 1`` with ``H u / kappa <= h_c`` at every row of ``U``."""
    ratios = (U @ inputs.H.T) / inputs.h_c
    return max(1.0, float(ratios.max(initial=0.0)))


def init_simple(ctx: SynthesisContext, a: float = 2.0, b1: float = 1.0, seed=None,
                random_inputs: bool = False) -> DecisionPoint:
    """``V_x = b1 |x|^a`` with zero inputs, or uniform random admissible inputs."""
    if a <= 0 or b1 <= 0:
        raise ValueError("a and b1 must be positive")
    T = ctx.T
    V = b1 * np.linalg.norm(T.vertices, axis=1) ** a
    U = np.zeros((T.n_vertices, ctx.model.m))
    if random_inputs:
        rng = np.random.default_rng(seed)
        lo, hi = -ctx.inputs.extents, ctx.inputs.extents
        for k in range(T.n_vertices):
            while True:
                u = rng.uniform(lo, hi)
                if ctx.inputs.contains(u):
                    U[k] = u
                    break
    if T.origin_id >= 0:
        V[T.origin_id] = 0.0
        U[T.origin_id] = 0.0
    return _complete(ctx, V, U, float(a), float(b1))


def init_lqr(ctx: SynthesisContext, Q, R, v_scale: float = 1.0) -> DecisionPoint:
    """Quadratic LQR value function and gain sampled at the mesh vertices.

    ``v_scale`` multiplies the sampled value function (and hence ``b1``); any
    positive multiple of a Lyapunov function is one, but the size of the
    convex-overbounding steps depends on it.
    """
    if v_scale <= 0:
        raise ValueError("v_scale must be positive")
    A, B = linearize(ctx.model)
    P, K = solve_care(A, B, Q, R)
    P = v_scale * P
    X = ctx.T.vertices
    V = np.einsum("ij,jk,ik->i", X, P, X)
    U_lqr = -X @ K.T
    kappa = admissible_scale(ctx.inputs, U_lqr)
    U = U_lqr / kappa
    if ctx.T.origin_id >= 0:
        V[ctx.T.origin_id] = 0.0
        U[ctx.T.origin_id] = 0.0
    return _complete(ctx, V, U, 2.0, float(np.linalg.eigvalsh(P)[0]))
