import json
import math

import numpy as np
import pytest

from cpasynth.config import ConfigError, RunConfig, model_from_spec
from cpasynth.expr import ExpressionError, compile_box_oracle, compile_expr

from conftest import CONFIGS


def base():
    return json.loads((CONFIGS / "scalar.json").read_text())


def test_expression_arithmetic():
    f = compile_expr("2*x1^2 - sin(x2)/x1 + exp(0) + pi", ["x1", "x2"])
    assert f([2.0, 0.5]) == pytest.approx(8 - math.sin(0.5) / 2 + 1 + math.pi)
    assert compile_expr(3, [])([]) == 3.0
    assert compile_expr("-x1 + +x1", ["x1"])([4.0]) == 0.0


@pytest.mark.parametrize("text", ["__import__('os')", "x1.real", "lambda: 1", "foo(1)", "y + 1",
                                  "x1 if x1 else 0", "[x1]", "'a'"])
def test_expression_rejects(text):
    with pytest.raises(ExpressionError):
        compile_expr(text, ["x1"])


def test_expression_runtime_error():
    with pytest.raises(ExpressionError):
        compile_expr("1/x1", ["x1"])([0.0])


def test_box_oracle_helpers():
    g = compile_box_oracle("4.9*supabs_sin(lo1, hi1) + supabs(lo2, hi2)", 2)
    assert g([0.0, -2.0], [0.13, 1.0]) == pytest.approx(4.9 * math.sin(0.13) + 2.0)


def test_expression_model_matches_builtin():
    custom = model_from_spec(base()["model"])
    builtin = model_from_spec({"builtin": "scalar_linear", "params": {"a": -1.0}})
    for x in (-0.4, 0.1, 0.3):
        assert custom.rhs([x], [0.2]) == pytest.approx(builtin.rhs([x], [0.2]))


def test_load_bundled_configs():
    pend = RunConfig.load(CONFIGS / "pendulum.json")
    assert pend.model.name == "pendulum"
    assert pend.inputs.extents == pytest.approx([5.0])
    assert (pend.rho0, pend.gamma, pend.eps_c) == (0.5, 0.8, 0.85)
    assert np.allclose(pend.init.Q, 2 * np.eye(2)) and np.allclose(pend.init.R, [[1.0]])
    assert pend.options.max_iter_phase1 == 5
    assert np.allclose(pend.simulation.x0, [0.52, -0.78])
    scal = RunConfig.load(CONFIGS / "scalar.json")
    assert scal.model.n == 1 and scal.simulation.t_final == 5.0


@pytest.mark.parametrize("mutate,message", [
    (lambda d: d.update(extra=1), "unknown configuration keys"),
    (lambda d: d.pop("states"), "missing required key"),
    (lambda d: d["refinement"].update(gamma=1.5), "gamma"),
    (lambda d: d["refinement"].update(rho_min=1.0), "rho0 > rho_min"),
    (lambda d: d["refinement"].update(eps_c=0.0), "eps_c"),
    (lambda d: d.update(model="nope"), "unknown built-in"),
    (lambda d: d["model"].update(f=["-x1", "0"]), "f must have n entries"),
    (lambda d: d["model"].update(f=["-z"]), "unknown name"),
    (lambda d: d["inputs"]["box"].update(lo=[1.0]), "lo < hi"),
    (lambda d: d.update(states={"box": {"lo": [-1, -1], "hi": [1, 1]}}), "dimension"),
    (lambda d: d["init"].update(kind="magic"), "init.kind"),
    (lambda d: d["init"].update(Q=[[1, 0], [0, 1]]), "init.Q"),
    (lambda d: d.update(synthesis={"shrink": 1.5}), "shrink"),
    (lambda d: d.update(synthesis={"max_iter_phase1": -1}), "nonnegative"),
    (lambda d: d["simulation"].update(dt=0.0), "positive"),
    (lambda d: d["simulation"].update(x0=[0.1, 0.2]), "x0"),
])
def test_config_validation(mutate, message):
    d = base()
    mutate(d)
    with pytest.raises(ConfigError, match=message):
        RunConfig.from_dict(d)


def test_json_error_names_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "model": "pendulum",\n  "states": ,\n}')
    with pytest.raises(ConfigError, match="line 3"):
        RunConfig.load(path)


def test_halfspace_states_and_simple_init():
    d = base()
    d["states"] = {"A": [[1.0], [-1.0]], "b": [0.5, 0.5]}
    d["init"] = {"kind": "simple", "a": 2.0, "b1": 1.0, "random_inputs": True}
    d["seed"] = 11
    cfg = RunConfig.from_dict(d)
    assert cfg.init.kind == "simple" and cfg.init.seed == 11
    assert cfg.states.volume() == pytest.approx(1.0)
