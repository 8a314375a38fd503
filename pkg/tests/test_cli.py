import json

import pytest

from cpasynth import cli
from cpasynth.config import RunConfig
from cpasynth.synthesis import Certificate, verify_certificate

from conftest import CONFIGS, FIXTURES

SCALAR = str(CONFIGS / "scalar.json")
PENDULUM = str(CONFIGS / "pendulum.json")


def run(*args):
    return cli.run([str(a) for a in args])


def test_scalar_all(tmp_path, capsys):
    assert run("all", "--config", SCALAR, "--out", tmp_path) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["verify"]["passed"] is True
    for name in ("certificate.json", "triangulation.json", "triangulation.csv", "iteration_log.csv",
                 "verification_report.json", "trajectory_cpa.csv", "trajectory_qp.csv",
                 "settling.json", "figure1_mesh.csv", "field.json", "figure2_timeseries.csv",
                 "figure2.svg"):
        assert (tmp_path / name).exists(), name
    log = (tmp_path / "iteration_log.csv").read_text().splitlines()
    assert log[0] == "rho,phase,k,b2,J,max_residual,status"


def test_pendulum_pipeline(tmp_path, capsys):
    assert run("all", "--config", PENDULUM, "--out", tmp_path) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["synthesize"]["b2"] > 0
    assert (tmp_path / "figure1.svg").read_text().startswith("<?xml")
    boundary = (tmp_path / "figure1_boundary.csv").read_text().splitlines()
    assert boundary[0] == "curve,point,x0,x1" and len(boundary) > 10


def test_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("--command", "synthesize", "--config", SCALAR, "--out", a, "--seed", "3") == 0
    assert run("--command", "synthesize", "--config", SCALAR, "--out", b, "--seed", "3") == 0
    assert (a / "certificate.json").read_bytes() == (b / "certificate.json").read_bytes()


def test_verify_bundled_certificate(tmp_path):
    code = run("verify", "--config", PENDULUM, "--out", tmp_path,
               "--certificate", FIXTURES / "pendulum_certificate.json")
    assert code == 0
    report = json.loads((tmp_path / "verification_report.json").read_text())
    assert report["passed"] and all(report["checks"].values())


def test_roundtrip_verifies_identically(tmp_path):
    assert run("synthesize", "--config", SCALAR, "--out", tmp_path) == 0
    cfg = RunConfig.load(SCALAR)
    cert = Certificate.from_dict(json.loads((tmp_path / "certificate.json").read_text()))
    again = Certificate.from_dict(json.loads(cli.dump_json(cert.to_dict())))
    assert verify_certificate(cert, cfg.model, cfg.inputs) == \
        verify_certificate(again, cfg.model, cfg.inputs)


def test_simulate_refuses_x0_outside(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "pendulum.json").read_text())
    cfg["simulation"]["x0"] = [0.79, 0.2]
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code = run("simulate", "--config", path, "--out", tmp_path,
               "--certificate", FIXTURES / "pendulum_certificate.json")
    assert code == cli.EXIT_SIMULATE
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "state_outside_region"
    assert not (tmp_path / "trajectory_cpa.csv").exists()
    assert json.loads((tmp_path / "error.json").read_text()) == err


def test_missing_certificate(tmp_path, capsys):
    assert run("simulate", "--config", SCALAR, "--out", tmp_path) == cli.EXIT_MISSING
    assert json.loads(capsys.readouterr().err)["error"] == "missing_certificate"


def test_invalid_config(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"model": "pendulum"}))
    assert run("synthesize", "--config", path, "--out", tmp_path) == cli.EXIT_CONFIG
    assert json.loads(capsys.readouterr().err)["error"] == "invalid_config"


def test_synthesis_failure_exit(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "scalar.json").read_text())
    cfg["model"]["f"] = ["3*x1"]
    cfg["inputs"] = {"box": {"lo": [-0.01], "hi": [0.01]}}
    cfg["refinement"] = {"rho0": 0.125, "gamma": 0.5, "rho_min": 0.1}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert run("synthesize", "--config", path, "--out", tmp_path) == cli.EXIT_SYNTHESIS
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "synthesis_failed" and len(err["details"]["attempts"]) == 2
    assert (tmp_path / "iteration_log.csv").exists()


def test_conflicting_or_missing_command(tmp_path):
    assert run("--config", SCALAR, "--out", tmp_path) == cli.EXIT_CONFIG
    assert run("verify", "--command", "simulate", "--config", SCALAR, "--out", tmp_path) == \
        cli.EXIT_CONFIG


def test_tolerance_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.TOL_ENV, "1e-8")
    assert run("synthesize", "--config", SCALAR, "--out", tmp_path) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["provenance"]["solver"]["tol"] == 1e-8
    monkeypatch.setenv(cli.TOL_ENV, "tight")
    assert run("synthesize", "--config", SCALAR, "--out", tmp_path) == cli.EXIT_CONFIG


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit):
        cli.run(["launch", "--config", SCALAR])
