import time
from pathlib import Path

import numpy as np
import pytest

from cpasynth.config import RunConfig
from cpasynth.synthesis import algorithm2

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
FIXTURES = Path(__file__).resolve().parent / "fixtures"

# (criterion, passed, detail) rows printed after the run
ACCEPTANCE = []


def _run(name):
    cfg = RunConfig.load(CONFIGS / name)
    t0 = time.perf_counter()
    outcome, log = algorithm2(cfg.states, cfg.model, cfg.inputs, cfg.init, cfg.options,
                              rho0=cfg.rho0, gamma=cfg.gamma, eps_c=cfg.eps_c, rho_min=cfg.rho_min)
    return {"cfg": cfg, "outcome": outcome, "log": log, "elapsed": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def pendulum_run():
    return _run("pendulum.json")


@pytest.fixture(scope="session")
def scalar_run():
    return _run("scalar.json")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
