"""Run configuration: one JSON document describing plant, sets and options."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expr import ExpressionError, compile_box_oracle, compile_matrix, compile_vector
from .geometry import GeometryError, Polytope
from .synthesis.algorithms import Initializer, SynthesisOptions
from .synthesis.problem import CostSpec
from .system import BUILTIN_MODELS, ControlAffineModel, InputConstraint, UnboundedInputSet


class ConfigError(ValueError):
    pass


def _matrix(value, name, ndim=2) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: not numeric") from exc
    if arr.ndim != ndim or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name}: expected a finite {ndim}-d array")
    return arr


def _halfspaces(spec: dict, name: str):
    if not isinstance(spec, dict):
        raise ConfigError(f"{name}: expected an object")
    if "box" in spec:
        lo = _matrix(spec["box"]["lo"], f"{name}.box.lo", 1)
        hi = _matrix(spec["box"]["hi"], f"{name}.box.hi", 1)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ConfigError(f"{name}.box: need lo < hi componentwise")
        n = lo.size
        return np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo])
    if "A" in spec and "b" in spec:
        A = _matrix(spec["A"], f"{name}.A")
        b = _matrix(spec["b"], f"{name}.b", 1)
        if A.shape[0] != b.size:
            raise ConfigError(f"{name}: A and b disagree in length")
        return A, b
    raise ConfigError(f"{name}: give either 'box' or 'A' and 'b'")


def model_from_spec(spec) -> ControlAffineModel:
    """Built-in plant by name (optionally with parameters) or an expression-defined plant."""
    if isinstance(spec, str):
        spec = {"builtin": spec}
    if not isinstance(spec, dict):
        raise ConfigError("model: expected a name or an object")
    if "builtin" in spec:
        name = spec["builtin"]
        if name not in BUILTIN_MODELS:
            raise ConfigError(f"model: unknown built-in {name!r}; choose from {sorted(BUILTIN_MODELS)}")
        try:
            return BUILTIN_MODELS[name](**spec.get("params", {}))
        except TypeError as exc:
            raise ConfigError(f"model.params: {exc}") from exc
    try:
        n, m = int(spec["n"]), int(spec["m"])
        f = compile_vector(spec["f"], n)
        G = compile_matrix(spec["G"], n)
        bounds = spec["bounds"]
        hf = compile_box_oracle(bounds["hess_f"], n)
        hG = [compile_box_oracle(t, n) for t in bounds.get("hess_G", ["0"] * m)]
        gG = [compile_box_oracle(t, n) for t in bounds.get("grad_G", ["0"] * m)]
        jac = compile_matrix(spec["jac_f"], n) if "jac_f" in spec else None
    except KeyError as exc:
        raise ConfigError(f"model: missing field {exc}") from exc
    except ExpressionError as exc:
        raise ConfigError(f"model: {exc}") from exc
    if len(spec["f"]) != n or len(spec["G"]) != n or any(len(r) != m for r in spec["G"]):
        raise ConfigError("model: f must have n entries and G must be n x m")
    if len(hG) != m or len(gG) != m:
        raise ConfigError("model.bounds: hess_G and grad_G need one entry per input")
    return ControlAffineModel(
        n=n, m=m, f=f, G=G,
        hess_f_bound=hf,
        hess_G_bound=lambda lo, hi, s: hG[s](lo, hi),
        grad_G_bound=lambda lo, hi, s: gG[s](lo, hi),
        jac_f=jac, name=spec.get("name", "custom"),
    )


@dataclass
class SimulationSpec:
    x0: np.ndarray
    dt: float = 0.01
    t_final: float = 10.0
    H_hat: Optional[np.ndarray] = None
    h_hat: Optional[np.ndarray] = None
    band: float = 0.05


@dataclass
class RunConfig:
    model: ControlAffineModel
    states: Polytope
    inputs: InputConstraint
    rho0: float = 0.5
    gamma: float = 0.8
    eps_c: float = 0.85
    rho_min: float = 0.05
    init: Initializer = field(default_factory=Initializer)
    options: SynthesisOptions = field(default_factory=SynthesisOptions)
    simulation: Optional[SimulationSpec] = None
    output_dir: Optional[str] = None
    seed: int = 0
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(d) - {"model", "states", "inputs", "refinement", "init", "synthesis",
                            "simulation", "output_dir", "seed", "description"}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        for key in ("model", "states", "inputs"):
            if key not in d:
                raise ConfigError(f"missing required key {key!r}")
        model = model_from_spec(d["model"])
        A, b = _halfspaces(d["states"], "states")
        if A.shape[1] != model.n:
            raise ConfigError("states: dimension does not match the model")
        try:
            states = Polytope.from_halfspaces(A, b)
        except (GeometryError, ValueError) as exc:
            raise ConfigError(f"states: {exc}") from exc
        H, h = _halfspaces(d["inputs"], "inputs")
        if H.shape[1] != model.m:
            raise ConfigError("inputs: dimension does not match the model")
        try:
            inputs = InputConstraint(H, h)
        except (UnboundedInputSet, ValueError) as exc:
            raise ConfigError(f"inputs: {exc}") from exc

        ref = d.get("refinement", {})
        rho0 = float(ref.get("rho0", 0.5))
        gamma = float(ref.get("gamma", 0.8))
        eps_c = float(ref.get("eps_c", 0.85))
        rho_min = float(ref.get("rho_min", 0.05))
        if not 0 < gamma < 1:
            raise ConfigError("refinement.gamma must lie in (0, 1)")
        if not rho0 > rho_min > 0:
            raise ConfigError("refinement: need rho0 > rho_min > 0")
        if not 0 < eps_c <= 1:
            raise ConfigError("refinement.eps_c must lie in (0, 1]")

        seed = int(d.get("seed", 0))
        init = _initializer(d.get("init", {}), model, seed)
        options = _options(d.get("synthesis", {}))
        sim = None
        if "simulation" in d:
            s = d["simulation"]
            x0 = _matrix(s.get("x0"), "simulation.x0", 1)
            if x0.size != model.n:
                raise ConfigError("simulation.x0: wrong dimension")
            sim = SimulationSpec(
                x0=x0, dt=float(s.get("dt", 0.01)), t_final=float(s.get("t_final", 10.0)),
                H_hat=None if "H_hat" not in s else _matrix(s["H_hat"], "simulation.H_hat"),
                h_hat=None if "h_hat" not in s else _matrix(s["h_hat"], "simulation.h_hat", 1),
                band=float(s.get("band", 0.05)),
            )
            if sim.dt <= 0 or sim.t_final <= 0 or sim.band <= 0:
                raise ConfigError("simulation: dt, t_final and band must be positive")
            if sim.H_hat is not None and np.any(np.linalg.eigvalsh(0.5 * (sim.H_hat + sim.H_hat.T)) <= 0):
                raise ConfigError("simulation.H_hat must be positive definite")
        return cls(model, states, inputs, rho0, gamma, eps_c, rho_min, init, options, sim,
                   d.get("output_dir"), seed, d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _initializer(spec: dict, model: ControlAffineModel, seed: int) -> Initializer:
    kind = spec.get("kind", "lqr")
    if kind == "lqr":
        Q = _matrix(spec["Q"], "init.Q") if "Q" in spec else None
        R = _matrix(spec["R"], "init.R") if "R" in spec else None
        if Q is not None and Q.shape != (model.n, model.n):
            raise ConfigError("init.Q must be n x n")
        if R is not None and R.shape != (model.m, model.m):
            raise ConfigError("init.R must be m x m")
        v_scale = float(spec.get("v_scale", 1.0))
        if v_scale <= 0:
            raise ConfigError("init.v_scale must be positive")
        return Initializer("lqr", Q, R, v_scale)
    if kind == "simple":
        a, b1 = float(spec.get("a", 2.0)), float(spec.get("b1", 1.0))
        if a <= 0 or b1 <= 0:
            raise ConfigError("init: a and b1 must be positive")
        return Initializer("simple", a=a, b1=b1, seed=int(spec.get("seed", seed)),
                           random_inputs=bool(spec.get("random_inputs", False)))
    raise ConfigError(f"init.kind must be 'lqr' or 'simple', got {kind!r}")


def _options(spec: dict) -> SynthesisOptions:
    opts = SynthesisOptions()
    for key in ("max_iter_phase1", "max_iter_phase2"):
        if key in spec:
            value = int(spec[key])
            if value < 0:
                raise ConfigError(f"synthesis.{key} must be nonnegative")
            setattr(opts, key, value)
    for key in ("b2_target", "stall_rel", "shrink", "tol"):
        if key in spec:
            setattr(opts, key, float(spec[key]))
    if not 0 < opts.shrink < 1:
        raise ConfigError("synthesis.shrink must lie in (0, 1)")
    if "eager_fallback" in spec:
        opts.eager_fallback = bool(spec["eager_fallback"])
    if "cost" in spec:
        try:
            opts.cost = CostSpec(linear=dict(spec["cost"].get("linear", {})),
                                 quadratic=dict(spec["cost"].get("quadratic", {})))
        except ValueError as exc:
            raise ConfigError(f"synthesis.cost: {exc}") from exc
    return opts
