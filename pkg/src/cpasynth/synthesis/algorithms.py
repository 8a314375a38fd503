"""Two-phase synthesis on a fixed mesh, the fallback check, and mesh refinement."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..cpa import (CpaScalarField, CpaVectorField, DegenerateSet, SublevelSet, _level_segments,
                   interpolate, interpolate_vector, sublevel_set)
from ..geometry import (GeometryError, Polytope, Triangulation, build_triangulation,
                        connected_component, coverage_ratio)
from ..optim import DEFAULT_TOL, OPTIMAL
from ..system import ControlAffineModel, InputConstraint
from .init import init_lqr, init_simple
from .problem import (CostSpec, DecisionPoint, SynthesisContext, constraint_residuals,
                      dini_table, max_feasible_b2)
from .step import step

log = logging.getLogger(__name__)


@dataclass
class Initializer:
    """Recipe for the feasible starting point on any mesh."""

    kind: str = "lqr"
    Q: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    v_scale: float = 1.0
    a: float = 2.0
    b1: float = 1.0
    seed: Optional[int] = None
    random_inputs: bool = False

    def __call__(self, ctx: SynthesisContext) -> DecisionPoint:
        if self.kind == "lqr":
            n, m = ctx.model.n, ctx.model.m
            Q = np.eye(n) if self.Q is None else np.atleast_2d(self.Q)
            R = np.eye(m) if self.R is None else np.atleast_2d(self.R)
            return init_lqr(ctx, Q, R, self.v_scale)
        if self.kind == "simple":
            return init_simple(ctx, self.a, self.b1, self.seed, self.random_inputs)
        raise ValueError(f"unknown initialization {self.kind!r}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "lqr":
            out.update(Q=None if self.Q is None else np.asarray(self.Q).tolist(),
                       R=None if self.R is None else np.asarray(self.R).tolist(),
                       v_scale=self.v_scale)
        else:
            out.update(a=self.a, b1=self.b1, seed=self.seed, random_inputs=self.random_inputs)
        return out


@dataclass
class SynthesisOptions:
    max_iter_phase1: int = 5
    max_iter_phase2: int = 5
    b2_target: float = 0.3
    stall_rel: float = 1e-4
    shrink: float = 0.99
    tol: float = DEFAULT_TOL
    cost: CostSpec = field(default_factory=CostSpec.smooth_small_input)
    # accept a Corollary-1 certificate as soon as one is found during refinement
    eager_fallback: bool = True

    def to_dict(self) -> dict:
        return {"max_iter_phase1": self.max_iter_phase1, "max_iter_phase2": self.max_iter_phase2,
                "b2_target": self.b2_target, "stall_rel": self.stall_rel, "shrink": self.shrink,
                "tol": self.tol, "cost": self.cost.to_dict(), "eager_fallback": self.eager_fallback}


@dataclass
class IterationRecord:
    phase: int
    k: int
    b2: float
    J: float
    residual: float
    status: str

    def as_row(self) -> list:
        return [self.phase, self.k, repr(self.b2), repr(self.J), repr(self.residual), self.status]


@dataclass
class Certificate:
    """A verified CPA controller, its Lyapunov function and the attraction set."""

    T: Triangulation
    y: DecisionPoint
    region: SublevelSet
    residuals: dict
    domain: list
    source: str = "algorithm1"
    provenance: dict = field(default_factory=dict)

    @property
    def a(self) -> float:
        return self.y.a

    @property
    def b1(self) -> float:
        return self.y.b1

    @property
    def b2(self) -> float:
        return self.y.b2

    @property
    def r(self) -> float:
        return self.region.r

    @property
    def rho(self) -> float:
        return self.T.rho

    @property
    def fingerprint(self) -> str:
        return self.T.fingerprint()

    @property
    def V(self) -> CpaScalarField:
        return self.region.V

    @property
    def controller(self) -> CpaVectorField:
        return interpolate_vector(self.T, self.y.U)

    def norm_bound(self, t):
        """``(r/b1)^(1/a) exp(-(b2/a) t)``."""
        return (self.r / self.b1) ** (1.0 / self.a) * np.exp(-(self.b2 / self.a) * np.asarray(t))

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "a": self.a, "b1": self.b1, "b2": self.b2, "r": self.r,
            "rho": self.rho,
            "fingerprint": self.fingerprint,
            "residuals": {k: float(v) for k, v in sorted(self.residuals.items())},
            "domain": [int(i) for i in self.domain],
            "region_members": [int(i) for i in self.region.members],
            "triangulation": self.T.to_dict(),
            "point": self.y.to_dict(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        T = Triangulation.from_dict(d["triangulation"])
        if T.fingerprint() != d["fingerprint"]:
            raise ValueError("triangulation does not match the recorded fingerprint")
        y = DecisionPoint.from_dict(d["point"])
        V = interpolate(T, y.V)
        members = [int(i) for i in d["region_members"]]
        region = SublevelSet(V, float(d["r"]), members, _level_segments(T, V.values, float(d["r"]), members))
        return cls(T, y, region, dict(d["residuals"]), list(d["domain"]), d.get("source", "algorithm1"),
                   d.get("provenance", {}))


@dataclass
class Failure:
    """Typed unsuccessful outcome; carries the last decision point when there is one."""

    reason: str
    y: Optional[DecisionPoint] = None
    log: list = field(default_factory=list)
    attempts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"error": "synthesis_failed", "reason": self.reason,
                "b2": None if self.y is None else self.y.b2, "attempts": self.attempts}


def _stalled(prev: float, cur: float, rel: float) -> bool:
    return abs(cur - prev) < rel * (1.0 + abs(cur))


def _certify(ctx: SynthesisContext, y: DecisionPoint, domain, shrink: float, source: str,
             provenance: dict):
    """Build the sublevel set and residual table; ``None`` when no set exists."""
    V = interpolate(ctx.T, y.V)
    full = len(domain) == ctx.T.n_simplices
    try:
        region = sublevel_set(V, shrink, None if full else domain)
    except DegenerateSet as exc:
        log.info("no sublevel set: %s", exc)
        return None
    res = constraint_residuals(ctx, y, None if full else domain)
    return Certificate(ctx.T, y, region, res, list(domain), source, provenance)


def algorithm1(ctx: SynthesisContext, cost: CostSpec, y0: DecisionPoint,
               opts: Optional[SynthesisOptions] = None):
    """Raise ``b2`` by convex overbounding, then fix it and minimise ``cost``.

    Returns ``(Certificate or Failure, iteration log)``.
    """
    opts = opts or SynthesisOptions()
    y = y0
    J1 = CostSpec.maximize_b2()
    history = [IterationRecord(1, 0, y.b2, J1(y), max(constraint_residuals(ctx, y).values()), "init")]
    k = 0
    while k < opts.max_iter_phase1 and y.b2 < opts.b2_target:
        k += 1
        y_next, res = step(ctx, y, J1, tol=opts.tol)
        resid = max(constraint_residuals(ctx, y_next).values())
        history.append(IterationRecord(1, k, y_next.b2, J1(y_next), resid, res.status))
        done = res.status != OPTIMAL or _stalled(y.b2, y_next.b2, opts.stall_rel)
        y = y_next
        if done:
            break
    if y.b2 <= 0:
        return Failure("b2 not positive", y, history), history

    for k in range(1, opts.max_iter_phase2 + 1):
        before = cost(y)
        y_next, res = step(ctx, y, cost, pin_b2=True, tol=opts.tol)
        resid = max(constraint_residuals(ctx, y_next).values())
        history.append(IterationRecord(2, k, y_next.b2, cost(y_next), resid, res.status))
        y = y_next
        if res.status != OPTIMAL or _stalled(before, cost(y), opts.stall_rel):
            break

    prov = {"phase1_iterations": sum(1 for h in history if h.phase == 1 and h.k > 0),
            "phase2_iterations": sum(1 for h in history if h.phase == 2)}
    cert = _certify(ctx, y, range(ctx.T.n_simplices), opts.shrink, "algorithm1", prov)
    if cert is None:
        return Failure("no sublevel set inside the mesh", y, history), history
    return cert, history


def corollary1_check(ctx: SynthesisContext, y: DecisionPoint, shrink: float = 0.99):
    """Certificate on the part of the mesh where the decrease condition holds.

    ``I0`` are the simplexes at the origin, ``I1`` those whose non-origin
    vertices all have a strictly negative derivative bound. When ``I0`` is
    inside ``I1`` the facet-connected component of ``I1`` holding the origin
    carries a Lyapunov function with rate ``min(-D+/V)`` over that component.
    Returns ``None`` when the inclusion fails or no sublevel set fits.
    """
    T = ctx.T
    D = dini_table(ctx, y)
    off = T.simplices != T.origin_id
    neg = np.where(off, D < 0, True).all(axis=1)
    I0 = T.origin_simplices()
    if not neg[I0].all():
        return None
    E1 = connected_component(T, np.flatnonzero(neg), I0)
    z = y.copy()
    z.b2 = max_feasible_b2(ctx, y, E1)
    if not z.b2 > 0:
        return None
    return _certify(ctx, z, E1, shrink, "corollary1", {"b2_mesh": float(y.b2)})


def _attempt_record(rho, T, coverage, outcome, history):
    return {"rho": rho, "n_simplices": None if T is None else int(T.n_simplices),
            "coverage": coverage, "outcome": outcome,
            "iterations": len([h for h in history if h.k > 0]),
            "b2": None if not history else float(history[-1].b2)}


def _attempt(X, model, inputs, initializer, opts, rho, eps_c, attempts, full_log):
    """One refinement level: a Certificate, ``(last y, fallback or None)``, or ``None`` if skipped."""
    try:
        T = build_triangulation(X, rho)
        cov = coverage_ratio(T, X)
    except GeometryError as exc:
        attempts.append(_attempt_record(rho, None, None, f"skipped: {exc}", []))
        return None
    if cov < eps_c:
        attempts.append(_attempt_record(rho, T, cov, "skipped: coverage", []))
        return None
    ctx = SynthesisContext.build(T, model, inputs)
    outcome, history = algorithm1(ctx, opts.cost, initializer(ctx), opts)
    full_log.extend((rho, h) for h in history)
    if isinstance(outcome, Certificate):
        attempts.append(_attempt_record(rho, T, cov, "certificate", history))
        return outcome
    fallback = corollary1_check(ctx, outcome.y, opts.shrink) if outcome.y is not None else None
    label = "failed" if fallback is None else "failed; fallback certificate available"
    attempts.append(_attempt_record(rho, T, cov, label, history))
    return outcome.y, fallback


def algorithm2(X: Polytope, model: ControlAffineModel, inputs: InputConstraint,
               initializer: Callable, opts: Optional[SynthesisOptions] = None,
               rho0: float = 0.5, gamma: float = 0.8, eps_c: float = 0.85,
               rho_min: float = 0.05, on_attempt: Optional[Callable] = None):
    """Refine the mesh until a certificate is found or ``rho`` drops below ``rho_min``.

    A mesh is attempted only when it covers at least ``eps_c`` of ``X``; the
    loop stops after the first level with ``rho < rho_min``. When the
    two-phase loop fails the fallback check is tried; with
    ``opts.eager_fallback`` off its certificate is held back and only returned
    if refinement runs out.

    Returns ``(Certificate or Failure, full iteration log)`` where log rows
    are ``(rho, IterationRecord)``.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not rho0 > rho_min > 0:
        raise ValueError("need rho0 > rho_min > 0")
    if not 0 < eps_c <= 1:
        raise ValueError("eps_c must lie in (0, 1]")
    opts = opts or SynthesisOptions()
    rho = rho0
    attempts, full_log = [], []
    held = None
    last_y = None
    while True:
        outcome = _attempt(X, model, inputs, initializer, opts, rho, eps_c, attempts, full_log)
        if on_attempt and attempts:
            on_attempt(attempts[-1])
        if isinstance(outcome, Certificate):
            outcome.provenance.update(attempts=attempts, options=opts.to_dict(),
                                      rho_history=[a["rho"] for a in attempts])
            return outcome, full_log
        if isinstance(outcome, tuple):
            last_y, fallback = outcome
            if fallback is not None:
                if opts.eager_fallback:
                    fallback.provenance.update(attempts=attempts, options=opts.to_dict(),
                                               rho_history=[a["rho"] for a in attempts])
                    return fallback, full_log
                held = held or fallback
        if rho < rho_min:
            break
        rho *= gamma
    if held is not None:
        held.provenance.update(attempts=attempts, options=opts.to_dict(),
                               rho_history=[a["rho"] for a in attempts])
        return held, full_log
    return Failure(f"no certificate for rho >= {rho_min}", last_y, [h for _, h in full_log],
                   attempts), full_log

