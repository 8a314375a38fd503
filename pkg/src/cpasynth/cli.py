"""Command-line entry point.

    cpasynth synthesize --config cfg.json --out DIR
    cpasynth verify --config cfg.json --out DIR
    cpasynth simulate --config cfg.json --out DIR
    cpasynth export-plots --config cfg.json --out DIR
    cpasynth all --config cfg.json --out DIR

The command may also be given as ``--command NAME``. Failures exit nonzero and
write ``error.json`` to the output directory (and to stderr).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .geometry import OutOfDomain
from .runtime import InfeasibleAtState, control_cpa, control_qp, settling_time, simulate
from .synthesis.algorithms import Certificate, Failure, algorithm2
from .synthesis.verify import verify_certificate

TOL_ENV = "CPASYNTH_SOLVER_TOL"
COMMANDS = ("synthesize", "verify", "simulate", "export-plots", "all")

EXIT_CONFIG = 2
EXIT_SYNTHESIS = 3
EXIT_VERIFY = 4
EXIT_SIMULATE = 5
EXIT_MISSING = 6


class CliError(Exception):
    def __init__(self, code: str, message: str, exit_code: int, details=None):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code
        self.details = details or {}

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), "details": self.details}


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _solver_record(tol: float) -> dict:
    import clarabel
    import cvxopt
    return {"sdp": "clarabel", "sdp_version": getattr(clarabel, "__version__", "unknown"),
            "qp": "cvxopt", "qp_version": cvxopt.__version__, "tol": tol}


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _load_certificate(out: Path, path=None) -> Certificate:
    path = Path(path) if path else out / "certificate.json"
    if not path.exists():
        raise CliError("missing_certificate", f"no certificate at {path}", EXIT_MISSING)
    try:
        return Certificate.from_dict(json.loads(path.read_text()))
    except (KeyError, ValueError) as exc:
        raise CliError("bad_certificate", f"cannot load {path}: {exc}", EXIT_MISSING) from exc


def iteration_log_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rho", "phase", "k", "b2", "J", "max_residual", "status"])
    for rho, rec in rows:
        w.writerow([repr(float(rho))] + rec.as_row())
    return buf.getvalue()


def cmd_synthesize(cfg: RunConfig, out: Path) -> Certificate:
    log = logging.getLogger("cpasynth")
    outcome, rows = algorithm2(
        cfg.states, cfg.model, cfg.inputs, cfg.init, cfg.options,
        rho0=cfg.rho0, gamma=cfg.gamma, eps_c=cfg.eps_c, rho_min=cfg.rho_min,
        on_attempt=lambda a: log.info("rho=%.4g: %s", a["rho"], a["outcome"]),
    )
    _write(out, "iteration_log.csv", iteration_log_csv(rows))
    if isinstance(outcome, Failure):
        raise CliError("synthesis_failed", outcome.reason, EXIT_SYNTHESIS, outcome.to_dict())
    outcome.provenance["solver"] = _solver_record(cfg.options.tol)
    outcome.provenance["initialization"] = cfg.init.to_dict()
    outcome.provenance["config"] = cfg.raw
    outcome.provenance["package_version"] = __version__
    _write(out, "certificate.json", dump_json(outcome.to_dict()))
    _write(out, "triangulation.json", dump_json(outcome.T.to_dict()))
    _write(out, "triangulation.csv", outcome.T.to_csv())
    return outcome


def cmd_verify(cfg: RunConfig, out: Path, cert_path=None, seed: int = 0) -> dict:
    cert = _load_certificate(out, cert_path)
    report = verify_certificate(cert, cfg.model, cfg.inputs, seed=seed)
    _write(out, "verification_report.json", dump_json(report))
    if not report["passed"]:
        raise CliError("verification_failed", "certificate failed verification", EXIT_VERIFY,
                       {"checks": report["checks"]})
    return report


def _trajectories(cfg: RunConfig, cert: Certificate):
    sim = cfg.simulation
    if sim is None:
        raise CliError("invalid_config", "the configuration has no 'simulation' section", EXIT_CONFIG)
    if not cert.region.contains(sim.x0, strict=True):
        raise CliError("state_outside_region",
                       f"initial state {sim.x0.tolist()} is not inside the certified set",
                       EXIT_SIMULATE, {"x0": sim.x0.tolist(), "r": cert.r})
    u = cert.controller
    V = cert.V
    model, inputs = cfg.model, cfg.inputs
    cpa = simulate(model, lambda x: control_cpa(u, x), sim.x0, sim.dt, sim.t_final, cert,
                   cfg.states, inputs, input_tol=1e-9)
    qp = simulate(model, lambda x: control_qp(x, V, cert.b2, model, inputs, sim.H_hat, sim.h_hat),
                  sim.x0, sim.dt, sim.t_final, cert, cfg.states, inputs)
    return cpa, qp


def cmd_simulate(cfg: RunConfig, out: Path, cert_path=None) -> dict:
    cert = _load_certificate(out, cert_path)
    cpa, qp = _trajectories(cfg, cert)
    _write(out, "trajectory_cpa.csv", cpa.to_csv())
    _write(out, "trajectory_qp.csv", qp.to_csv())
    band = cfg.simulation.band
    report = {
        "band": band,
        "cpa": {"settling_time": settling_time(cpa, band), "flags_ok": cpa.all_flags,
                "aborted": cpa.aborted, "max_abs_input": float(np.abs(cpa.u).max())},
        "qp": {"settling_time": settling_time(qp, band), "flags_ok": qp.all_flags,
               "aborted": qp.aborted, "max_abs_input": float(np.abs(qp.u).max())},
    }
    _write(out, "settling.json", dump_json(report))
    if cpa.aborted or qp.aborted:
        raise CliError("simulation_aborted", cpa.aborted or qp.aborted, EXIT_SIMULATE, report)
    return report


def _read_trajectory(path: Path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


def cmd_export_plots(cfg: RunConfig, out: Path, cert_path=None) -> list:
    from . import plots

    cert = _load_certificate(out, cert_path)
    written = [
        _write(out, "figure1_mesh.csv", cert.T.to_csv()),
        _write(out, "figure1_boundary.csv", cert.region.boundary_csv()),
        _write(out, "field.json", dump_json({
            "vertices": cert.T.vertices.tolist(), "V": cert.y.V.tolist(), "u": cert.y.U.tolist(),
            "r": cert.r, "b1": cert.b1, "b2": cert.b2, "a": cert.a})),
    ]
    if cert.T.n == 2:
        written.append(_write(out, "figure1.svg", plots.mesh_svg(cert, cfg.states)))
    paths = {name: out / f"trajectory_{name}.csv" for name in ("cpa", "qp")}
    if cfg.simulation is not None and not all(p.exists() for p in paths.values()):
        cmd_simulate(cfg, out, cert_path)
    if all(p.exists() for p in paths.values()):
        series = {name: _read_trajectory(p) for name, p in paths.items()}
        written.append(_write(out, "figure2_timeseries.csv", plots.timeseries_csv(series)))
        written.append(_write(out, "figure2.svg", plots.timeseries_svg(series)))
    return written


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpasynth", description=__doc__.splitlines()[0] if __doc__ else None)
    p.add_argument("command_pos", nargs="?", choices=COMMANDS, metavar="COMMAND",
                   help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--command", choices=COMMANDS, help="same as the positional command")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (default: config output_dir or ./out)")
    p.add_argument("--seed", type=int, help="seed for random initialization and sampling")
    p.add_argument("--certificate", help="certificate path (default: OUT/certificate.json)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    command = args.command or args.command_pos
    out = Path(args.out or "out")
    try:
        if command is None:
            raise CliError("invalid_arguments", "no command given", EXIT_CONFIG)
        if args.command and args.command_pos and args.command != args.command_pos:
            raise CliError("invalid_arguments", "conflicting commands", EXIT_CONFIG)
        try:
            cfg = RunConfig.load(args.config)
        except ConfigError as exc:
            raise CliError("invalid_config", str(exc), EXIT_CONFIG) from exc
        if args.out is None and cfg.output_dir:
            out = Path(cfg.output_dir)
        if args.seed is not None:
            cfg.seed = args.seed
            if cfg.init.kind == "simple":
                cfg.init.seed = args.seed
        if os.environ.get(TOL_ENV):
            try:
                cfg.options.tol = float(os.environ[TOL_ENV])
            except ValueError as exc:
                raise CliError("invalid_config", f"{TOL_ENV} is not a number", EXIT_CONFIG) from exc
        result = {}
        if command in ("synthesize", "all"):
            cert = cmd_synthesize(cfg, out)
            result["synthesize"] = {"b1": cert.b1, "b2": cert.b2, "r": cert.r, "rho": cert.rho}
        if command in ("verify", "all"):
            result["verify"] = {"passed": cmd_verify(cfg, out, args.certificate, cfg.seed)["passed"]}
        if command in ("simulate", "all"):
            rep = cmd_simulate(cfg, out, args.certificate)
            result["simulate"] = {k: rep[k]["settling_time"] for k in ("cpa", "qp")}
        if command in ("export-plots", "all"):
            result["export-plots"] = [str(p) for p in cmd_export_plots(cfg, out, args.certificate)]
    except CliError as err:
        text = dump_json(err.to_dict())
        try:
            _write(out, "error.json", text)
        except OSError:
            pass
        sys.stderr.write(text)
        return err.exit_code
    except (OutOfDomain, InfeasibleAtState) as exc:
        err = CliError("runtime_error", str(exc), EXIT_SIMULATE)
        sys.stderr.write(dump_json(err.to_dict()))
        return err.exit_code
    sys.stdout.write(dump_json(result))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
