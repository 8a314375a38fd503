import math

import numpy as np
import pytest

from cpasynth.geometry import Polytope, build_triangulation
from cpasynth.optim import OPTIMAL
from cpasynth.system import InputConstraint, pendulum, scalar_linear, varying_gain_oscillator
from cpasynth.synthesis import (Certificate, CostSpec, DecisionPoint, Failure, Initializer,
                                SynthesisContext, SynthesisOptions, algorithm1, algorithm2,
                                assemble_step, constraint_residuals, corollary1_check,
                                dini_upper, init_lqr, init_simple, max_feasible_b2, solve_care,
                                step)
from cpasynth.synthesis.init import admissible_scale, care_residual
from cpasynth.synthesis.step import FEASIBILITY_TOL

PEND_X = Polytope.from_halfspaces([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1]],
                                  [0.8, 0.8, 1.6, 1.6, 1.0, 1.0])


def unit_ctx(model=None, hi=1.0, rho=1.0, u=1.0):
    T = build_triangulation(Polytope.box([-hi], [hi]), rho)
    return SynthesisContext.build(T, model or scalar_linear(), InputConstraint.box([-u], [u]))


def pend_ctx(rho=0.5):
    return SynthesisContext.build(build_triangulation(PEND_X, rho), pendulum(),
                                  InputConstraint.box([-5.0], [5.0]))


def simplex_and_slot(ctx, x):
    """(simplex, local index) of the vertex at ``x`` inside the simplex touching the origin."""
    k = int(np.flatnonzero(np.all(np.isclose(ctx.T.vertices, x), axis=1))[0])
    for i in ctx.T.origin_simplices():
        hit = np.flatnonzero(ctx.T.simplices[i] == k)
        if hit.size:
            return int(i), int(hit[0])
    raise AssertionError("vertex not adjacent to the origin")


# ---- Dini bound and the decay rate --------------------------------------

def test_dini_upper_hand_values():
    ctx = unit_ctx()
    y = init_simple(ctx, a=1.0, b1=1.0)
    i, j = simplex_and_slot(ctx, [1.0])
    assert dini_upper(ctx, y, i, j) == pytest.approx(-1.0, abs=1e-12)
    y.U[np.flatnonzero(np.isclose(ctx.T.vertices[:, 0], 1.0))[0]] = -0.5
    assert dini_upper(ctx, y, i, j) == pytest.approx(-1.5, abs=1e-12)


def test_dini_zero_at_origin_slot():
    ctx = pend_ctx()
    y = init_lqr(ctx, 2 * np.eye(2), np.eye(1))
    for i in ctx.T.origin_simplices():
        j = int(np.flatnonzero(ctx.T.simplices[i] == ctx.T.origin_id)[0])
        assert dini_upper(ctx, y, i, j) == 0.0


def test_max_feasible_b2_single_constraint():
    ctx = unit_ctx()
    y = init_simple(ctx, a=1.0, b1=1.0)
    assert y.b2 == pytest.approx(1.0)
    assert max_feasible_b2(ctx, y) == pytest.approx(1.0)


def test_positive_dini_gives_negative_b2():
    ctx = unit_ctx(scalar_linear(a=1.0))
    y = init_simple(ctx)
    assert y.b2 < 0


def test_pendulum_lqr_baseline_is_finite():
    y = init_lqr(pend_ctx(0.5), 2 * np.eye(2), np.eye(1))
    assert math.isfinite(y.b2)


# ---- initialization ------------------------------------------------------

def test_init_simple_hand_values():
    ctx = unit_ctx()
    y = init_simple(ctx, a=2.0, b1=1.0)
    order = np.argsort(ctx.T.vertices[:, 0])
    assert np.allclose(y.V[order], [1.0, 0.0, 1.0])
    grads = {float(ctx.T.vertices[ids].mean()): y.L[i, 0] for i, ids in enumerate(ctx.T.simplices)}
    assert grads == {-0.5: 1.0, 0.5: 1.0}
    assert max(constraint_residuals(ctx, y).values()) == 0.0


def test_init_simple_seed_reproducible():
    ctx = pend_ctx()
    a = init_simple(ctx, seed=7, random_inputs=True)
    b = init_simple(ctx, seed=7, random_inputs=True)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)
    assert constraint_residuals(ctx, a)["inputs"] == 0.0


def test_care_scalar_and_pendulum():
    P, K = solve_care([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert P[0, 0] == pytest.approx(math.sqrt(2) - 1, abs=1e-12)
    A = np.array([[0.0, 1.0], [4.9, -0.3]])
    B = np.array([[0.0], [1.0]])
    P, K = solve_care(A, B, 2 * np.eye(2), np.eye(1))
    assert care_residual(A, B, 2 * np.eye(2), np.eye(1), P) <= 1e-8


def test_lqr_scale_is_one_when_admissible():
    ctx = unit_ctx(hi=0.5, rho=0.125)
    y = init_lqr(ctx, np.eye(1), np.eye(1))
    assert admissible_scale(ctx.inputs, y.U) == 1.0
    assert np.allclose(y.U[:, 0], -(math.sqrt(2) - 1) * ctx.T.vertices[:, 0])


def test_lqr_inputs_scaled_into_set():
    y = init_lqr(pend_ctx(0.4), 2 * np.eye(2), np.eye(1))
    assert np.abs(y.U).max() <= 5.0 + 1e-12


# ---- one convexified step --------------------------------------------------

def test_block_sizes_and_count():
    ctx = pend_ctx(0.4)
    y = init_lqr(ctx, 2 * np.eye(2), np.eye(1))
    prob, _ = assemble_step(ctx, y, CostSpec.maximize_b2())
    n = 2
    assert set(prob.psd_sizes) == {2 * n + 3}
    star = len(ctx.T.origin_simplices())
    assert len(prob.psd_sizes) == ctx.T.n_simplices * (n + 1) - star

    T = build_triangulation(Polytope.box([-1.0, -1.0], [1.0, 1.0]), 0.5)
    ctx2 = SynthesisContext.build(T, varying_gain_oscillator(), InputConstraint.box([-2.0], [2.0]))
    y2 = init_simple(ctx2)
    prob2, _ = assemble_step(ctx2, y2, CostSpec.maximize_b2())
    assert set(prob2.psd_sizes) == {2 * n + 3, 2 * n + 5}


def test_zero_perturbation_is_feasible():
    for ctx in (pend_ctx(0.4), unit_ctx(hi=0.5, rho=0.125)):
        n = ctx.T.n
        y = init_lqr(ctx, 2 * np.eye(n) if n == 2 else np.eye(1), np.eye(1))
        for J, pin in ((CostSpec.maximize_b2(), False), (CostSpec.smooth_small_input(), True)):
            prob, lay = assemble_step(ctx, y, J, pin)
            assert prob.max_residual(np.zeros(lay.n_vars)) <= 1e-9
            assert prob.objective(np.zeros(lay.n_vars)) == pytest.approx(J(y))


def test_step_increases_b2_and_stays_feasible():
    ctx = pend_ctx(0.4)
    y = init_lqr(ctx, 2 * np.eye(2), np.eye(1))
    y1, res = step(ctx, y, CostSpec.maximize_b2())
    assert res.status == OPTIMAL
    assert y1.b2 >= y.b2 - 1e-9
    assert max(constraint_residuals(ctx, y1).values()) <= FEASIBILITY_TOL


def test_pinned_step_keeps_b2_and_lowers_cost():
    ctx = unit_ctx(hi=0.5, rho=0.125)
    y = init_lqr(ctx, np.eye(1), np.eye(1))
    J = CostSpec.smooth_small_input()
    y1, res = step(ctx, y, J, pin_b2=True)
    assert res.status == OPTIMAL
    assert y1.b2 <= y.b2 + 1e-12
    assert J(y1) <= J(y) + 1e-7


def test_layout_roundtrip():
    ctx = unit_ctx(hi=0.5, rho=0.125)
    y = init_lqr(ctx, np.eye(1), np.eye(1))
    prob, lay = assemble_step(ctx, y, CostSpec.maximize_b2())
    dV = np.arange(ctx.T.n_vertices, dtype=float)
    dV[ctx.T.origin_id] = 0.0
    x = lay.as_vector({"V": dV, "b2": 0.25})
    moved = lay.apply(y, x)
    assert np.allclose(moved.V - y.V, dV)
    assert moved.b2 == pytest.approx(y.b2 + 0.25)


# ---- algorithm 1 -----------------------------------------------------------

def test_cap_zero_returns_init_on_failure():
    ctx = unit_ctx(scalar_linear(a=1.0))
    y0 = init_simple(ctx)
    outcome, history = algorithm1(ctx, CostSpec.smooth_small_input(), y0,
                                  SynthesisOptions(max_iter_phase1=0, max_iter_phase2=0))
    assert isinstance(outcome, Failure)
    assert outcome.y is y0
    assert [h.status for h in history] == ["init"]


def test_scalar_fixture_certifies_quickly():
    ctx = unit_ctx(hi=0.5, rho=0.125)
    outcome, history = algorithm1(ctx, CostSpec.smooth_small_input(),
                                  init_lqr(ctx, np.eye(1), np.eye(1)))
    assert isinstance(outcome, Certificate)
    assert outcome.b2 >= 0.5
    assert sum(1 for h in history if h.phase == 1 and h.k > 0) <= 2
    assert max(outcome.residuals.values()) <= 1e-6


def test_phase1_b2_monotone():
    ctx = pend_ctx(0.2)
    outcome, history = algorithm1(ctx, CostSpec.smooth_small_input(),
                                  init_lqr(ctx, 2 * np.eye(2), np.eye(1)),
                                  SynthesisOptions(max_iter_phase1=3, max_iter_phase2=0))
    b2 = [h.b2 for h in history if h.phase == 1]
    assert all(b >= a - 1e-9 for a, b in zip(b2, b2[1:]))


# ---- fallback check ---------------------------------------------------------

def test_corollary_all_negative_is_whole_mesh():
    ctx = unit_ctx(hi=0.5, rho=0.125)
    y = init_lqr(ctx, np.eye(1), np.eye(1))
    cert = corollary1_check(ctx, y)
    assert cert is not None
    assert cert.domain == list(range(ctx.T.n_simplices))
    assert cert.b2 == pytest.approx(max_feasible_b2(ctx, y), abs=1e-15)


def test_corollary_fails_when_origin_simplex_increases():
    ctx = unit_ctx(hi=0.5, rho=0.125)
    y = init_lqr(ctx, np.eye(1), np.eye(1))
    k = int(np.flatnonzero(np.isclose(ctx.T.vertices[:, 0], 0.125))[0])
    y.U[k] = 1.0
    assert corollary1_check(ctx, y) is None


# ---- algorithm 2 -----------------------------------------------------------

def test_algorithm2_two_attempts_then_failure():
    X = Polytope.box([-1.0], [1.0])
    opts = SynthesisOptions(max_iter_phase1=0, max_iter_phase2=0)
    outcome, _ = algorithm2(X, scalar_linear(a=1.0), InputConstraint.box([-1.0], [1.0]),
                            Initializer("simple"), opts, rho0=0.5, gamma=0.5, eps_c=0.5,
                            rho_min=0.3)
    assert isinstance(outcome, Failure)
    assert [a["rho"] for a in outcome.attempts] == [0.5, 0.25]


def test_algorithm2_scalar_no_refinement():
    X = Polytope.box([-0.5], [0.5])
    outcome, _ = algorithm2(X, scalar_linear(), InputConstraint.box([-1.0], [1.0]),
                            Initializer("lqr"), rho0=0.125)
    assert isinstance(outcome, Certificate)
    assert outcome.rho == 0.125
    assert len(outcome.provenance["attempts"]) == 1


def test_algorithm2_argument_checks():
    X = Polytope.box([-0.5], [0.5])
    args = (X, scalar_linear(), InputConstraint.box([-1.0], [1.0]), Initializer("lqr"))
    with pytest.raises(ValueError):
        algorithm2(*args, gamma=1.0)
    with pytest.raises(ValueError):
        algorithm2(*args, rho0=0.01, rho_min=0.05)
    with pytest.raises(ValueError):
        algorithm2(*args, eps_c=0.0)


def test_certificate_roundtrip():
    ctx = unit_ctx(hi=0.5, rho=0.125)
    cert, _ = algorithm1(ctx, CostSpec.smooth_small_input(), init_lqr(ctx, np.eye(1), np.eye(1)))
    back = Certificate.from_dict(cert.to_dict())
    assert back.to_dict() == cert.to_dict()
    d = cert.to_dict()
    d["fingerprint"] = "0" * 64
    with pytest.raises(ValueError):
        Certificate.from_dict(d)


def test_decision_point_roundtrip():
    y = DecisionPoint(np.ones(3), np.ones((2, 1)), np.zeros((3, 1)), np.zeros(2), 2.0, 1.0, 0.5)
    back = DecisionPoint.from_dict(y.to_dict())
    assert back.to_dict() == y.to_dict()


def test_cost_spec_validation():
    with pytest.raises(ValueError):
        CostSpec(linear={"nope": 1.0})
    with pytest.raises(ValueError):
        CostSpec(quadratic={"U": -1.0})
