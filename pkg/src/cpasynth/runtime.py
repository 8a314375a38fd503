"""Online controllers and closed-loop simulation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .cpa import CpaScalarField, CpaVectorField, evaluate
from .geometry import OutOfDomain, Polytope
from .optim import OPTIMAL, solve_qp
from .system import ControlAffineModel, InputConstraint

BOUND_ABS_TOL = 1e-6
CPA_INPUT_TOL = 1e-9


class InfeasibleAtState(RuntimeError):
    """The min-norm QP has no solution at the queried state."""


def control_cpa(u_field: CpaVectorField, x) -> np.ndarray:
    return u_field(x)


def control_qp(x, V: CpaScalarField, b2: float, model: ControlAffineModel, inputs: InputConstraint,
               Hmat=None, hvec=None) -> np.ndarray:
    """Minimise ``u'Hu + h'u`` subject to the input set and one decrease
    constraint per simplex containing ``x``."""
    x = np.asarray(x, dtype=float)
    m = model.m
    Hmat = np.eye(m) if Hmat is None else np.atleast_2d(np.asarray(Hmat, dtype=float))
    hvec = np.zeros(m) if hvec is None else np.asarray(hvec, dtype=float).reshape(m)
    hits = V.T.locate_all(x)
    Vx = evaluate(V, x)
    fx = np.asarray(model.f(x), dtype=float)
    Gx = model.Gmat(x)
    rows = [inputs.H]
    rhs = [inputs.h_c]
    for i, _ in hits:
        g = V.grads[i]
        rows.append((g @ Gx)[None, :])
        rhs.append(np.array([-b2 * Vx - g @ fx]))
    res = solve_qp(Hmat, hvec, np.vstack(rows), np.concatenate(rhs))
    if res.status != OPTIMAL:
        raise InfeasibleAtState(f"min-norm QP {res.status} at x={x.tolist()}")
    return res.x


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    in_region: np.ndarray
    in_states: np.ndarray
    input_ok: np.ndarray
    bound_ok: np.ndarray
    bound: np.ndarray
    aborted: Optional[str] = None

    @property
    def all_flags(self) -> bool:
        return bool(self.in_region.all() and self.in_states.all() and self.input_ok.all()
                    and self.bound_ok.all() and self.aborted is None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        n, m = self.x.shape[1], self.u.shape[1]
        w.writerow(["t"] + [f"x{k}" for k in range(n)] + [f"u{s}" for s in range(m)]
                   + ["norm_bound", "in_region", "in_states", "input_ok", "bound_ok"])
        for k in range(self.t.size):
            w.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.x[k]]
                       + [repr(float(v)) for v in self.u[k]] + [repr(float(self.bound[k]))]
                       + [int(self.in_region[k]), int(self.in_states[k]), int(self.input_ok[k]),
                          int(self.bound_ok[k])])
        return buf.getvalue()


def rk4_step(rhs: Callable, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate(model: ControlAffineModel, controller: Callable, x0, dt: float, t_final: float,
             cert=None, states: Optional[Polytope] = None,
             inputs: Optional[InputConstraint] = None, input_tol: float = 0.0) -> Trajectory:
    """Classical RK4 with the controller evaluated at every stage state.

    With a certificate, each sample is flagged for membership in the
    attraction set and for the norm decay bound. A controller that cannot be
    evaluated (state left the mesh, infeasible QP) ends the run early and
    the partial trajectory is returned with ``aborted`` set.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=float).reshape(model.n)
    if cert is not None and not cert.region.contains(x, strict=True):
        raise OutOfDomain(f"initial state {x.tolist()} is not inside the attraction set")
    steps = int(round(t_final / dt))
    ts, xs, us = [], [], []
    aborted = None

    def rhs(z):
        return model.rhs(z, controller(z))

    for k in range(steps + 1):
        try:
            u = np.atleast_1d(controller(x))
        except (OutOfDomain, InfeasibleAtState) as exc:
            aborted = str(exc)
            break
        ts.append(k * dt)
        xs.append(x.copy())
        us.append(u)
        if k == steps:
            break
        try:
            x = rk4_step(rhs, x, dt)
        except (OutOfDomain, InfeasibleAtState) as exc:
            aborted = str(exc)
            break
    t = np.array(ts)
    X = np.array(xs).reshape(-1, model.n)
    U = np.array(us).reshape(-1, model.m)
    K = t.size
    if cert is not None:
        bound = cert.norm_bound(t)
        bound_ok = np.linalg.norm(X, axis=1) <= bound + BOUND_ABS_TOL
        in_region = np.array([cert.region.contains(z) for z in X], dtype=bool)
    else:
        bound = np.full(K, np.inf)
        bound_ok = np.ones(K, dtype=bool)
        in_region = np.ones(K, dtype=bool)
    in_states = np.array([states.contains(z, tol=0.0) for z in X], dtype=bool) if states \
        else np.ones(K, dtype=bool)
    input_ok = np.array([inputs.contains(u, tol=input_tol) for u in U], dtype=bool) if inputs \
        else np.ones(K, dtype=bool)
    return Trajectory(t, X, U, in_region, in_states, input_ok, bound_ok, bound, aborted)


def settling_time(traj: Trajectory, band: float) -> float:
    """Earliest sample time after which every state component stays within ``band``."""
    if band <= 0:
        raise ValueError("band must be positive")
    outside = np.flatnonzero(np.any(np.abs(traj.x) > band, axis=1))
    if outside.size == 0:
        return float(traj.t[0]) if traj.t.size else 0.0
    last = int(outside[-1])
    if last + 1 >= traj.t.size:
        return math.inf
    return float(traj.t[last + 1])
