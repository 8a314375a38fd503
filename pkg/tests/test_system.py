import math

import numpy as np
import pytest

from cpasynth.geometry import Polytope, build_triangulation
from cpasynth.system import (ControlAffineModel, InputConstraint, UnboundedInputSet, axis_extent,
                             linearize, mesh_bounds, pendulum, scalar_linear, simplex_bounds,
                             sup_abs_cos, sup_abs_sin, varying_gain_oscillator)


def test_axis_extent_examples():
    assert axis_extent(InputConstraint.box([-5.0], [5.0]), 0) == pytest.approx(5.0)
    assert axis_extent(InputConstraint.box([-1.0, -3.0], [2.0, 1.0]), 1) == pytest.approx(3.0)
    U = InputConstraint(np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]), np.array([1.0, 1.0, 1.0]))
    assert axis_extent(U, 0) == pytest.approx(2.0)


def test_unbounded_input_set():
    with pytest.raises(UnboundedInputSet):
        InputConstraint(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]), np.ones(3))


def test_input_set_needs_interior_zero():
    with pytest.raises(ValueError):
        InputConstraint(np.array([[1.0], [-1.0]]), np.array([1.0, 0.0]))


def test_pendulum_linearization():
    A, B = linearize(pendulum())
    assert np.allclose(A, [[0.0, 1.0], [4.9, -0.3]])
    assert np.allclose(B, [[0.0], [1.0]])


def test_trivial_linearization():
    model = ControlAffineModel(2, 2, lambda x: np.zeros(2), lambda x: np.eye(2),
                               lambda lo, hi: 0.0, lambda lo, hi, s: 0.0, lambda lo, hi, s: 0.0)
    A, B = linearize(model)
    assert np.allclose(A, 0.0) and np.allclose(B, np.eye(2))


def test_finite_difference_jacobian_cubic():
    f = lambda x: np.array([x[0] ** 3 + x[1], x[0] * x[1] ** 2 - 2 * x[1]])
    model = ControlAffineModel(2, 1, f, lambda x: np.array([[0.0], [1.0]]),
                               lambda lo, hi: 0.0, lambda lo, hi, s: 0.0, lambda lo, hi, s: 0.0)
    A, _ = linearize(model)
    assert np.allclose(A, [[0.0, 1.0], [0.0, -2.0]], atol=1e-6)


def test_pendulum_mu_hand_value():
    U = InputConstraint.box([-5.0], [5.0])
    b = simplex_bounds(pendulum(), np.array([[0.0, 0.0], [0.13, 0.0], [0.13, 0.13]]), U)
    assert b.mu == pytest.approx(4.9 * math.sin(0.13), abs=1e-9)
    assert b.eta == 0.0


def test_pendulum_eta_zero_on_mesh():
    T = build_triangulation(Polytope.box([-0.8, -1.6], [0.8, 1.6]), 0.4)
    mu, eta = mesh_bounds(pendulum(), T, InputConstraint.box([-5.0], [5.0]))
    assert np.all(eta == 0.0)
    assert np.all(mu >= 0.0)


def test_varying_gain_has_input_curvature():
    U = InputConstraint.box([-2.0], [2.0])
    b = simplex_bounds(varying_gain_oscillator(), np.array([[0.5, 0.0], [1.0, 0.0], [1.0, 0.5]]), U)
    assert b.mu == pytest.approx(0.5 * 2.0)
    assert b.eta == pytest.approx(2 * 0.5 * 1.0)


def test_sup_abs_sin_cos():
    assert sup_abs_sin(0.0, 0.13) == pytest.approx(math.sin(0.13))
    assert sup_abs_sin(-0.2, 0.1) == pytest.approx(math.sin(0.2))
    assert sup_abs_sin(1.0, 2.0) == 1.0
    assert sup_abs_cos(-0.1, 0.1) == 1.0
    assert sup_abs_cos(1.0, 1.2) == pytest.approx(math.cos(1.0))


def test_bounds_dominate_sampled_hessian(rng):
    model = pendulum()
    for _ in range(50):
        lo = rng.uniform(-1, 1, 2)
        hi = lo + rng.uniform(0, 0.5, 2)
        xs = rng.uniform(lo, hi, size=(100, 2))
        assert model.hess_f_bound(lo, hi) >= np.abs(4.9 * np.sin(xs[:, 0])).max() - 1e-12


def test_rhs_control_affine():
    m = scalar_linear()
    assert m.rhs([2.0], [0.5]) == pytest.approx([-1.5])
