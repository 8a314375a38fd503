"""Constrained control-affine plants ``xdot = f(x) + G(x) u`` and per-simplex derivative bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog

from .geometry import Triangulation


class UnboundedInputSet(ValueError):
    pass


def sup_abs_sin(lo: float, hi: float) -> float:
    """max |sin t| for t in [lo, hi]."""
    k = math.ceil((lo - math.pi / 2) / math.pi)
    if math.pi / 2 + k * math.pi <= hi:
        return 1.0
    return max(abs(math.sin(lo)), abs(math.sin(hi)))


def sup_abs_cos(lo: float, hi: float) -> float:
    return sup_abs_sin(lo + math.pi / 2, hi + math.pi / 2)


def sup_abs(lo: float, hi: float) -> float:
    return max(abs(lo), abs(hi))


@dataclass(frozen=True)
class InputConstraint:
    """Polytope ``{u : H u <= h_c}`` containing 0 in its interior."""

    H: np.ndarray
    h_c: np.ndarray
    extents: np.ndarray = field(init=False)

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h_c, dtype=float).reshape(-1)
        if np.any(h <= 0):
            raise ValueError("0 must be strictly inside the input set")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h_c", h)
        object.__setattr__(self, "extents", np.array([axis_extent(self, s) for s in range(H.shape[1])]))

    @property
    def m(self) -> int:
        return self.H.shape[1]

    @classmethod
    def box(cls, lo, hi) -> "InputConstraint":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        m = lo.size
        return cls(np.vstack([np.eye(m), -np.eye(m)]), np.concatenate([hi, -lo]))

    def contains(self, u, tol: float = 0.0) -> bool:
        return bool(np.all(self.H @ np.atleast_1d(u) <= self.h_c + tol))

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "h_c": self.h_c.tolist()}


def axis_extent(U: InputConstraint, s: int) -> float:
    """``max |u^(s)|`` over the input polytope, from two LPs."""
    m = U.H.shape[1]
    out = 0.0
    for sign in (1.0, -1.0):
        c = np.zeros(m)
        c[s] = -sign
        res = linprog(c, A_ub=U.H, b_ub=U.h_c, bounds=[(None, None)] * m, method="highs")
        if res.status == 3:
            raise UnboundedInputSet(f"input set is unbounded along axis {s}")
        if res.status != 0:
            raise ValueError(f"extent LP failed: {res.message}")
        out = max(out, abs(res.x[s]))
    return float(out)


@dataclass(frozen=True)
class ControlAffineModel:
    """Plant data plus box oracles for the derivative bounds.

    Bound oracles take the corners ``lo, hi`` of an axis-aligned box (and an
    input column ``s`` for the ``G`` oracles) and return an upper bound on the
    largest absolute entry of the corresponding derivative tensor over the box.
    """

    n: int
    m: int
    f: Callable
    G: Callable
    hess_f_bound: Callable
    hess_G_bound: Callable
    grad_G_bound: Callable
    jac_f: Optional[Callable] = None
    name: str = "custom"
    constant_G: bool = False

    def rhs(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.f(x), dtype=float) + np.asarray(self.G(x), dtype=float) @ np.atleast_1d(u)

    def Gmat(self, x) -> np.ndarray:
        return np.asarray(self.G(np.asarray(x, dtype=float)), dtype=float).reshape(self.n, self.m)


@dataclass(frozen=True)
class SimplexBounds:
    mu: float
    eta: float
    c: np.ndarray


def simplex_box(vertices: np.ndarray):
    return vertices.min(axis=0), vertices.max(axis=0)


def simplex_bounds(model: ControlAffineModel, vertices: np.ndarray, U: InputConstraint,
                   c: Optional[np.ndarray] = None) -> SimplexBounds:
    from .geometry import c_coefficients

    lo, hi = simplex_box(np.asarray(vertices, dtype=float))
    mu = float(model.hess_f_bound(lo, hi))
    eta = 0.0
    for s in range(model.m):
        mu += float(model.hess_G_bound(lo, hi, s)) * U.extents[s]
        eta += float(model.grad_G_bound(lo, hi, s))
    eta *= 2.0
    if c is None:
        c = c_coefficients(vertices)
    return SimplexBounds(mu, eta, np.asarray(c))


def mesh_bounds(model: ControlAffineModel, T: Triangulation, U: InputConstraint):
    """(mu, eta) arrays over all simplexes of ``T``."""
    out = [simplex_bounds(model, T.vertices[ids], U, T.c[i]) for i, ids in enumerate(T.simplices)]
    return np.array([b.mu for b in out]), np.array([b.eta for b in out])


def linearize(model: ControlAffineModel, step: float = 1e-6):
    n = model.n
    zero = np.zeros(n)
    if model.jac_f is not None:
        A = np.asarray(model.jac_f(zero), dtype=float).reshape(n, n)
    else:
        A = np.zeros((n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = step
            A[:, k] = (np.asarray(model.f(e)) - np.asarray(model.f(-e))) / (2 * step)
    return A, model.Gmat(zero)


# ---- built-in plants ------------------------------------------------------

def pendulum() -> ControlAffineModel:
    """Inverted pendulum ``x1' = x2, x2' = 4.9 sin x1 - 0.3 x2 + u``."""

    def f(x):
        return np.array([x[1], 4.9 * math.sin(x[0]) - 0.3 * x[1]])

    def G(x):
        return np.array([[0.0], [1.0]])

    def jac_f(x):
        return np.array([[0.0, 1.0], [4.9 * math.cos(x[0]), -0.3]])

    return ControlAffineModel(
        n=2, m=1, f=f, G=G,
        hess_f_bound=lambda lo, hi: 4.9 * sup_abs_sin(lo[0], hi[0]),
        hess_G_bound=lambda lo, hi, s: 0.0,
        grad_G_bound=lambda lo, hi, s: 0.0,
        jac_f=jac_f, name="pendulum", constant_G=True,
    )


def varying_gain_oscillator() -> ControlAffineModel:
    """``x1' = x2, x2' = -x1 + (1 + 0.25 x1^2) u``; state-dependent input gain."""

    def f(x):
        return np.array([x[1], -x[0]])

    def G(x):
        return np.array([[0.0], [1.0 + 0.25 * x[0] ** 2]])

    return ControlAffineModel(
        n=2, m=1, f=f, G=G,
        hess_f_bound=lambda lo, hi: 0.0,
        hess_G_bound=lambda lo, hi, s: 0.5,
        grad_G_bound=lambda lo, hi, s: 0.5 * sup_abs(lo[0], hi[0]),
        jac_f=lambda x: np.array([[0.0, 1.0], [-1.0, 0.0]]),
        name="varying_gain_oscillator",
    )


def scalar_linear(a: float = -1.0, g: float = 1.0) -> ControlAffineModel:
    """``x' = a x + g u``."""
    return ControlAffineModel(
        n=1, m=1,
        f=lambda x: np.array([a * x[0]]),
        G=lambda x: np.array([[g]]),
        hess_f_bound=lambda lo, hi: 0.0,
        hess_G_bound=lambda lo, hi, s: 0.0,
        grad_G_bound=lambda lo, hi, s: 0.0,
        jac_f=lambda x: np.array([[a]]),
        name="scalar_linear", constant_G=True,
    )


BUILTIN_MODELS = {
    "pendulum": pendulum,
    "varying_gain_oscillator": varying_gain_oscillator,
    "scalar_linear": scalar_linear,
}
