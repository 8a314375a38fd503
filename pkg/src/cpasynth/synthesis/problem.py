"""Decision point, cost, and the vertex-wise Dini-derivative bounds."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..cpa import simplex_gradients
from ..geometry import Triangulation
from ..system import ControlAffineModel, InputConstraint, mesh_bounds

EPS_POS = 1e-6
BLOCKS = ("V", "L", "U", "Z", "b1", "b2")


@dataclass
class DecisionPoint:
    """Stacked unknowns: vertex values ``V``, gradient bounds ``L``, vertex
    inputs ``U``, input-gradient bounds ``Z``, exponent ``a`` and ``b1, b2``."""

    V: np.ndarray
    L: np.ndarray
    U: np.ndarray
    Z: np.ndarray
    a: float
    b1: float
    b2: float

    def copy(self) -> "DecisionPoint":
        return replace(self, V=self.V.copy(), L=self.L.copy(), U=self.U.copy(), Z=self.Z.copy())

    def block(self, name: str):
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {"V": self.V.tolist(), "L": self.L.tolist(), "U": self.U.tolist(),
                "Z": self.Z.tolist(), "a": self.a, "b1": self.b1, "b2": self.b2}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionPoint":
        U = np.array(d["U"], dtype=float)
        return cls(np.array(d["V"], dtype=float), np.array(d["L"], dtype=float),
                   U.reshape(U.shape[0], -1), np.array(d["Z"], dtype=float),
                   float(d["a"]), float(d["b1"]), float(d["b2"]))


@dataclass
class CostSpec:
    """Separable linear-plus-diagonal-quadratic cost over decision blocks.

    ``J(y) = sum_B <linear[B], y_B> + <quadratic[B], y_B**2>``; each weight is a
    scalar (broadcast over the block) or an array shaped like the block.
    """

    linear: dict = field(default_factory=dict)
    quadratic: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in list(self.linear) + list(self.quadratic):
            if name not in BLOCKS:
                raise ValueError(f"unknown cost block {name!r}")
        for name, w in self.quadratic.items():
            if np.any(np.asarray(w) < 0):
                raise ValueError(f"quadratic weight on {name} must be nonnegative")

    def __call__(self, y: DecisionPoint) -> float:
        total = 0.0
        for name, w in self.linear.items():
            total += float(np.sum(np.asarray(w) * y.block(name)))
        for name, w in self.quadratic.items():
            total += float(np.sum(np.asarray(w) * np.square(y.block(name))))
        return total

    def weighs(self, name: str) -> bool:
        return bool(np.any(np.asarray(self.linear.get(name, 0.0)) != 0)
                    or np.any(np.asarray(self.quadratic.get(name, 0.0)) != 0))

    @classmethod
    def maximize_b2(cls) -> "CostSpec":
        return cls(linear={"b2": -1.0})

    @classmethod
    def smooth_small_input(cls, u_weight: float = 1e-2) -> "CostSpec":
        return cls(linear={"Z": 1.0}, quadratic={"U": u_weight})

    def to_dict(self) -> dict:
        conv = lambda d: {k: np.asarray(v).tolist() for k, v in d.items()}
        return {"linear": conv(self.linear), "quadratic": conv(self.quadratic)}


@dataclass
class SynthesisContext:
    """Everything about one triangulation that stays fixed across iterations."""

    T: Triangulation
    model: ControlAffineModel
    inputs: InputConstraint
    mu: np.ndarray
    eta: np.ndarray
    f_vals: np.ndarray
    G_vals: np.ndarray
    eps_pos: float = EPS_POS

    @classmethod
    def build(cls, T: Triangulation, model: ControlAffineModel, inputs: InputConstraint,
              eps_pos: float = EPS_POS) -> "SynthesisContext":
        if model.n != T.n or model.m != inputs.m:
            raise ValueError("model, mesh and input set dimensions disagree")
        mu, eta = mesh_bounds(model, T, inputs)
        f_vals = np.array([model.f(x) for x in T.vertices], dtype=float).reshape(T.n_vertices, T.n)
        G_vals = np.array([model.Gmat(x) for x in T.vertices])
        return cls(T, model, inputs, mu, eta, f_vals, G_vals, eps_pos)

    @property
    def nonorigin(self) -> np.ndarray:
        mask = np.ones(self.T.n_vertices, dtype=bool)
        if self.T.origin_id >= 0:
            mask[self.T.origin_id] = False
        return mask

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.T.vertices, axis=1)


def gradients(ctx: SynthesisContext, y: DecisionPoint):
    """(grad V_i, grad u_i) with shapes (m_T, n) and (m_T, m, n)."""
    gV = simplex_gradients(ctx.T, y.V)
    gU = np.stack([simplex_gradients(ctx.T, y.U[:, s]) for s in range(y.U.shape[1])], axis=1)
    return gV, gU


def dini_table(ctx: SynthesisContext, y: DecisionPoint) -> np.ndarray:
    """``D+_{i,j} V`` for every simplex ``i`` and local vertex ``j``; shape (m_T, n+1)."""
    T = ctx.T
    gV, _ = gradients(ctx, y)
    ids = T.simplices
    g = ctx.f_vals[ids] + np.einsum("ijnm,ijm->ijn", ctx.G_vals[ids], y.U[ids])
    drift = np.einsum("ijn,in->ij", g, gV)
    lsum = y.L.sum(axis=1)
    curv = T.c * ((ctx.mu + ctx.eta * y.Z) * lsum)[:, None]
    return drift + curv


def dini_upper(ctx: SynthesisContext, y: DecisionPoint, i: int, j: int) -> float:
    """Scalar ``D+_{i,j} V = phi_ij + u'G'gradV_i + c_ij eta_i z_i 1'l_i``."""
    T = ctx.T
    v = T.simplices[i, j]
    gV, _ = gradients(ctx, y)
    lsum = float(y.L[i].sum())
    c = T.c[i, j]
    phi = float(ctx.f_vals[v] @ gV[i]) + c * ctx.mu[i] * lsum
    return phi + float(y.U[v] @ ctx.G_vals[v].T @ gV[i]) + c * ctx.eta[i] * y.Z[i] * lsum


def decrease_ratios(ctx: SynthesisContext, y: DecisionPoint) -> np.ndarray:
    """``-D+_{i,j}V / V_{x_ij}`` with NaN at origin vertices."""
    D = dini_table(ctx, y)
    Vv = y.V[ctx.T.simplices]
    at_origin = ctx.T.simplices == ctx.T.origin_id
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where(at_origin, np.nan, -D / np.where(at_origin, 1.0, Vv))
    return R


def max_feasible_b2(ctx: SynthesisContext, y: DecisionPoint, simplices=None) -> float:
    """Largest ``b2`` with ``D+_{i,j}V <= -b2 V_{x_ij}`` at every non-origin vertex."""
    R = decrease_ratios(ctx, y)
    if simplices is not None:
        R = R[np.asarray(simplices, dtype=np.int64)]
    return float(np.nanmin(R))


def constraint_residuals(ctx: SynthesisContext, y: DecisionPoint, simplices=None) -> dict:
    """Max violation of each feasibility condition (0 when satisfied)."""
    T = ctx.T
    sel = np.arange(T.n_simplices) if simplices is None else np.asarray(simplices, dtype=np.int64)
    verts = np.unique(T.simplices[sel])
    nz = verts[verts != T.origin_id]
    gV, gU = gradients(ctx, y)
    res = {}
    o = T.origin_id
    res["origin"] = max(abs(float(y.V[o])) if o >= 0 else 0.0, max(0.0, ctx.eps_pos - y.b1),
                    max(0.0, -y.a))
    norms = ctx.norms()
    res["lower_bound"] = float(np.max(y.b1 * norms[nz] ** y.a - y.V[nz], initial=0.0))
    res["grad_V"] = float(np.max(np.abs(gV[sel]) - y.L[sel], initial=0.0))
    u_viol = y.U[nz] @ ctx.inputs.H.T - ctx.inputs.h_c
    res["inputs"] = max(float(np.max(u_viol, initial=0.0)), float(np.abs(y.U[o]).max()) if o >= 0 else 0.0)
    zneed = ctx.eta[sel] > 0
    res["grad_u"] = float(np.max(np.abs(gU[sel][zneed]).max(axis=(1, 2)) - y.Z[sel][zneed], initial=0.0)) \
        if zneed.any() else 0.0
    D = dini_table(ctx, y)[sel]
    Vv = y.V[T.simplices[sel]]
    viol = np.where(T.simplices[sel] == o, 0.0, D + y.b2 * Vv)
    res["decrease"] = float(np.max(viol, initial=0.0))
    return res
