"""Independent certificate check.

Everything is recomputed from the mesh vertices, the stored vertex data and
the plant: gradients by solving each simplex's vertex system, remainder
factors and curvature bounds simplex by simplex, then the Dini bound at every
vertex. A second, sampling-based pass applies the closed loop at random
interior points and compares finite-difference quotients with the claimed
decay rate.
"""
from __future__ import annotations

import math

import numpy as np

from ..cpa import evaluate
from ..geometry import OutOfDomain
from ..system import ControlAffineModel, InputConstraint

RESIDUAL_TOL = 1e-6
DINI_SLACK = 1e-4


def _simplex_data(pts: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Gradient of the affine interpolant of ``values`` on the simplex ``pts``."""
    n = pts.shape[1]
    M = np.hstack([pts, np.ones((n + 1, 1))])
    coef = np.linalg.solve(M, values)
    return coef[:n]


def _remainder_factor(pts: np.ndarray, j: int) -> float:
    n = pts.shape[1]
    d = [math.dist(pts[k], pts[0]) for k in range(n + 1)]
    return 0.5 * n * d[j] * (max(d[1:]) + d[j])


def _curvature(model: ControlAffineModel, pts: np.ndarray, inputs: InputConstraint):
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    mu = model.hess_f_bound(lo, hi)
    eta = 0.0
    for s in range(model.m):
        mu += model.hess_G_bound(lo, hi, s) * inputs.extents[s]
        eta += 2.0 * model.grad_G_bound(lo, hi, s)
    return float(mu), float(eta)


def constraint_pass(cert, model: ControlAffineModel, inputs: InputConstraint) -> dict:
    """Largest violation of each feasibility condition over the certified simplexes."""
    T, y = cert.T, cert.y
    X = T.vertices
    origin = [k for k in range(T.n_vertices) if not np.any(T.lattice[k])]
    worst = {key: 0.0 for key in ("origin", "lower_bound", "grad_V", "inputs", "grad_u", "decrease")}
    if origin:
        o = origin[0]
        worst["origin"] = max(abs(y.V[o]), float(np.abs(y.U[o]).max()))
    worst["origin"] = max(worst["origin"], max(0.0, 1e-6 - y.b1), max(0.0, -y.a))
    used = sorted({int(v) for i in cert.domain for v in T.simplices[i]})
    for v in used:
        if origin and v == origin[0]:
            continue
        worst["lower_bound"] = max(worst["lower_bound"], y.b1 * np.linalg.norm(X[v]) ** y.a - y.V[v])
        worst["inputs"] = max(worst["inputs"], float(np.max(inputs.H @ y.U[v] - inputs.h_c)))
    for i in cert.domain:
        ids = T.simplices[i]
        pts = X[ids]
        gV = _simplex_data(pts, y.V[ids])
        gU = np.array([_simplex_data(pts, y.U[ids, s]) for s in range(y.U.shape[1])])
        worst["grad_V"] = max(worst["grad_V"], float(np.max(np.abs(gV) - y.L[i])))
        mu, eta = _curvature(model, pts, inputs)
        if eta > 0:
            worst["grad_u"] = max(worst["grad_u"], float(np.abs(gU).max() - y.Z[i]))
        for j, v in enumerate(ids):
            if origin and v == origin[0]:
                continue
            x = X[v]
            g = np.asarray(model.f(x), dtype=float) + model.Gmat(x) @ y.U[v]
            c = _remainder_factor(pts, j)
            D = float(g @ gV) + c * (mu + eta * y.Z[i]) * float(np.sum(y.L[i]))
            worst["decrease"] = max(worst["decrease"], D + y.b2 * y.V[v])
    return {k: float(max(0.0, v)) for k, v in worst.items()}


def _sample_points(T, simplices, count: int, rng: np.random.Generator) -> np.ndarray:
    simplices = np.asarray(simplices, dtype=np.int64)
    vols = np.abs(np.linalg.det(T.shape[simplices]))
    pick = rng.choice(simplices, size=count, p=vols / vols.sum())
    w = rng.dirichlet(np.ones(T.n + 1), size=count)
    return np.einsum("kj,kjn->kn", w, T.vertices[T.simplices[pick]]), pick


def dini_sampling(cert, model: ControlAffineModel, n_points: int = 10_000, h: float = 1e-5,
                  slack: float = DINI_SLACK, seed: int = 0) -> dict:
    """Finite-difference decrease test of the CPA closed loop at random points.

    A point whose step leaves the mesh is counted as an exit; exits from inside
    the attraction set count as failures, others are skipped.
    """
    T, y = cert.T, cert.y
    rng = np.random.default_rng(seed)
    pts, _ = _sample_points(T, cert.domain, n_points, rng)
    V = cert.V
    u = cert.controller
    domain = set(int(i) for i in cert.domain)
    worst_excess = -math.inf
    worst_lower = -math.inf
    exits_inside = exits = failures = checked = 0
    for x in pts:
        Vx = evaluate(V, x)
        worst_lower = max(worst_lower, y.b1 * np.linalg.norm(x) ** y.a - Vx)
        g = model.rhs(x, u(x))
        xh = x + h * g
        try:
            hits = T.locate_all(xh)
        except OutOfDomain:
            hits = []
        if not any(i in domain for i, _ in hits):
            exits += 1
            if Vx < cert.r:
                exits_inside += 1
            continue
        quotient = (evaluate(V, xh) - Vx) / h
        excess = quotient + y.b2 * Vx
        worst_excess = max(worst_excess, excess)
        failures += int(excess > slack)
        checked += 1
    return {
        "n_points": int(n_points), "h": h, "slack": slack, "checked": checked,
        "exits": exits, "exits_inside_region": exits_inside,
        "max_decrease_excess": float(worst_excess), "max_lower_bound_excess": float(worst_lower),
        "failures": failures,
        "passed": bool(failures == 0 and exits_inside == 0 and worst_lower <= RESIDUAL_TOL),
    }


def verify_certificate(cert, model: ControlAffineModel, inputs: InputConstraint,
                       n_points: int = 10_000, h: float = 1e-5, seed: int = 0) -> dict:
    """Report with per-condition residuals and the sampling result."""
    residuals = constraint_pass(cert, model, inputs)
    dini = dini_sampling(cert, model, n_points, h, seed=seed)
    checks = {k: v <= RESIDUAL_TOL for k, v in residuals.items()}
    checks["b2_positive"] = cert.b2 > 0
    checks["r_positive"] = cert.r > 0
    checks["dini_sampling"] = dini["passed"]
    return {
        "fingerprint": cert.T.fingerprint(),
        "b1": cert.b1, "b2": cert.b2, "a": cert.a, "r": cert.r,
        "residuals": residuals, "dini": dini, "checks": checks,
        "passed": bool(all(checks.values())),
    }
