import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from cpasynth.cpa import evaluate, interpolate
from cpasynth.geometry import Polytope, build_triangulation, c_coefficients
from cpasynth.optim import OPTIMAL, solve_qp
from cpasynth.synthesis import CostSpec, SynthesisContext, assemble_step, init_simple
from cpasynth.system import InputConstraint, varying_gain_oscillator

MESH = build_triangulation(Polytope.from_halfspaces(
    [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1]], [0.8, 0.8, 1.6, 1.6, 1.0, 1.0]), 0.2)
unit = st.floats(-1.0, 1.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, MESH.n_simplices - 1), st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
def test_barycentric_roundtrip(i, w):
    w = np.asarray(w) + 1e-3
    w /= w.sum()
    x = w @ MESH.vertices[MESH.simplices[i]]
    hits = MESH.locate_all(x)
    assert i in [j for j, _ in hits]
    for j, alpha in hits:
        assert alpha.min() >= 0 and abs(alpha.sum() - 1) < 1e-12
        assert np.allclose(alpha @ MESH.vertices[MESH.simplices[j]], x, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(unit, unit, unit, st.integers(0, MESH.n_simplices - 1),
       st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
def test_affine_fields_are_reproduced(a, b, c, i, w):
    F = interpolate(MESH, MESH.vertices @ np.array([a, b]) + c)
    assert np.allclose(F.grads, [a, b], atol=1e-9)
    w = np.asarray(w) / np.sum(w)
    x = w @ MESH.vertices[MESH.simplices[i]]
    assert abs(evaluate(F, x) - (a * x[0] + b * x[1] + c)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(unit, unit), min_size=3, max_size=3))
def test_c_coefficients_nonnegative(points):
    c = c_coefficients(np.array(points))
    assert c[0] == 0.0 and np.all(c >= 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(-10.0, 10.0), st.floats(-5.0, -0.01), st.floats(0.01, 5.0))
def test_scalar_qp_is_projection(H, h, lo, hi):
    res = solve_qp([[H]], [h], [[1.0], [-1.0]], [hi, -lo])
    assert res.status == OPTIMAL
    assert abs(res.x[0] - np.clip(-h / (2 * H), lo, hi)) < 1e-7
    assert lo - 1e-12 <= res.x[0] <= hi + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_zero_step_feasible_with_input_curvature(seed):
    T = build_triangulation(Polytope.box([-1.0, -1.0], [1.0, 1.0]), 0.5)
    ctx = SynthesisContext.build(T, varying_gain_oscillator(), InputConstraint.box([-2.0], [2.0]))
    y = init_simple(ctx, seed=seed, random_inputs=True)
    for J, pin in ((CostSpec.maximize_b2(), False), (CostSpec.smooth_small_input(), True)):
        prob, lay = assemble_step(ctx, y, J, pin)
        assert prob.max_residual(np.zeros(lay.n_vars)) <= 1e-9
