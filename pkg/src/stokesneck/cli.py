"""Command-line entry point.

Subcommands: ``check-aux``, ``asym``, ``solve``, ``sweep``, ``fit`` and
``oracle-compare``. Exit codes: 0 success, 1 usage or configuration error,
2 compute failure, 3 internal error. Errors are reported as one JSON object
on stderr with an ``error`` kind and a message.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import asymptotics as asy
from .aux_fields import aux_pair, aux_pair_bc, verify_bounds
from .boundary_data import BoundaryData
from .config import ConfigError, RunConfig, stamped
from .experiments import fit_rate, fmt17, read_records_csv, run_sweep, write_report
from .functionals import oracle_compare, solve_decomposition
from .mesh import build_neck_mesh, quality_report
from .provenance import content_hash
from .stokes_fem import check_compatibility, set_solver_backend, solver_backend

log = logging.getLogger("stokesneck")

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE, EXIT_INTERNAL = 0, 1, 2, 3
SUBCOMMANDS = ("check-aux", "asym", "solve", "sweep", "fit", "oracle-compare")
DIVERGENCE_TOL = 1e-10


class ComputeError(RuntimeError):
    pass


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=None, help="worker processes for sweeps")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p = _Parser(prog="stokesneck", description="Near-contact Stokes flow verification tools")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "fit":
            sp.add_argument("--input", required=True, help="sweep CSV file")
            sp.add_argument("--column", default="grad_mid", help="CSV column to fit against eps")
    return p


def _write(out_dir, name, payload, config):
    os.makedirs(out_dir, exist_ok=True)
    doc = stamped(payload, config)
    path = os.path.join(out_dir, name)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
    return path


# ---------------------------------------------------------- subcommands
def cmd_check_aux(cfg: RunConfig, out_dir):
    eps_values = [float(e) for e in cfg.experiment["check_aux_eps"]]
    n1, n2 = (int(s) for s in cfg.experiment["samples"])
    reports = []
    worst = 0.0
    pairs = [aux_pair(cfg.geometry, a) for a in (1, 2, 3)]
    for v in ("Phi1", "Phi2"):
        pairs.append(aux_pair_bc(cfg.geometry, BoundaryData(v)))
    for v, l in (("Phi3", 1), ("Phi3", 2), ("Phi4", 1), ("Phi4", 2)):
        pairs.append(aux_pair_bc(cfg.geometry, BoundaryData(v, l)))
    for pair in pairs:
        rel = verify_bounds(cfg.geometry, pair, "const", (n1, n2), "relative_divergence", eps_values)
        grad = verify_bounds(cfg.geometry, pair, "1/delta+|x1|/delta^2", (n1, n2), "gradient", eps_values)
        worst = max(worst, max(rel.constants))
        reports.append({"relative_divergence": rel.to_dict(), "gradient": grad.to_dict()})
    result = {"reports": reports, "max_relative_divergence": worst, "tolerance": DIVERGENCE_TOL,
              "pass": worst < DIVERGENCE_TOL}
    path = _write(out_dir, "check_aux.json", result, cfg.to_dict())
    print(json.dumps({"max_relative_divergence": worst, "pass": result["pass"], "output": path}))
    if not result["pass"]:
        raise ComputeError(f"auxiliary divergence {worst:.3e} exceeds {DIVERGENCE_TOL:g}")


def _num(term):
    return None if term.coefficient is None else float(term.coefficient)


def cmd_asym(cfg: RunConfig, out_dir):
    g = cfg.geometry
    rows = []
    for a, b in ((1, 1), (2, 2), (3, 3), (1, 3), (1, 2), (2, 3)):
        pr, lub = asy.a_leading(g, a, b), asy.lubrication_leading(g, a, b)
        rows.append({"entry": f"a{a}{b}", "printed": pr.describe(), "printed_value": _num(pr),
                     "lubrication": lub.describe(), "lubrication_value": _num(lub),
                     "power": str(pr.power), "bound_only": pr.bound_only})
    det_p, det_c = asy.detA_leading(g), asy.detA_leading(g, corrected=True)
    rows.append({"entry": "det", "printed": det_p.describe(), "printed_value": _num(det_p),
                 "lubrication": det_c.describe(), "lubrication_value": _num(det_c),
                 "power": str(det_p.power), "bound_only": False})
    bl = asy.blowup_leading(g)
    rows.append({"entry": "Q1-(kappa1+kappa)Q3", "printed": bl.describe(), "printed_value": _num(bl),
                 "lubrication": bl.describe(), "lubrication_value": _num(bl),
                 "power": str(bl.power), "bound_only": False})
    path = _write(out_dir, "asym.json", {"leading_terms": rows}, cfg.to_dict())
    print(f"{'entry':<22}{'printed':>28}{'lubrication':>28}")
    for r in rows:
        print(f"{r['entry']:<22}{r['printed']:>28}{r['lubrication']:>28}")
    print(f"written {path}")


def _field_csv(path, sol, config_hash):
    pts = sol.mesh.vertices
    G = sol.eval_gradient(pts)
    u = sol.eval_velocity(pts)
    p = sol.eval_pressure(pts)
    cols = ("x1", "x2", "u1", "u2", "du1_dx1", "du1_dx2", "du2_dx1", "du2_dx2", "p")
    rows = np.column_stack([pts, u, G[:, 0, 0], G[:, 0, 1], G[:, 1, 0], G[:, 1, 1], p])
    body = [",".join(fmt17(v) for v in r) for r in rows]
    digest = content_hash({"config_hash": config_hash, "rows": body})
    with open(path, "w") as f:
        f.write(f"# config_hash={config_hash}\n# content_hash={digest}\n")
        f.write(",".join(cols) + "\n")
        f.write("\n".join(body) + "\n")


def cmd_solve(cfg: RunConfig, out_dir):
    g, bc = cfg.geometry, cfg.bc
    check_compatibility(g, None, lambda p: bc.trace(g, p), tol=float(cfg.solver["compatibility_tol"]))
    t0 = time.perf_counter()
    mesh = build_neck_mesh(g, cfg.mesh)
    dec = solve_decomposition(mesh, g, bc)
    elapsed = time.perf_counter() - t0
    cfgd = cfg.to_dict()
    os.makedirs(out_dir, exist_ok=True)
    _field_csv(os.path.join(out_dir, "fields.csv"), dec.full.velocity, content_hash(cfgd))
    _write(out_dir, "interaction.json", dec.system.to_dict(), cfgd)
    diag = {
        "backend": solver_backend(),
        "seconds": elapsed,
        "u0": dec.u0.diagnostics,
        "modes": [m.diagnostics for m in dec.modes],
        "mesh": _quality(mesh, g),
    }
    _write(out_dir, "diagnostics.json", diag, cfgd)
    print(json.dumps({"C": dec.system.C.tolist(), "det": dec.system.det, "out": out_dir}))


def _quality(mesh, geom):
    q = quality_report(mesh, geom).__dict__.copy()
    q["boundary_offsets"] = {k: float(v) for k, v in q["boundary_offsets"].items()}
    return q


def cmd_sweep(cfg: RunConfig, out_dir, threads=None):
    report = run_sweep(cfg.sweep_config(workers=threads))
    write_report(report, out_dir, cfg.to_dict())
    summary = {"fits": report.fits, "n_records": len(report.records), "out": out_dir}
    print(json.dumps(summary, default=float))


def cmd_fit(cfg_dict, out_dir, path, column):
    try:
        rows = read_records_csv(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"input file not found: {path}") from exc
    if not rows or column not in rows[0]:
        raise ConfigError(f"column {column!r} not found in {path}")
    pairs = [(r["eps"], abs(r[column])) for r in rows]
    fit = fit_rate(pairs).to_dict()
    fit.update({"column": column, "input": os.path.abspath(path)})
    _write(out_dir, "fit.json", fit, cfg_dict)
    print(json.dumps(fit))


def cmd_oracle(cfg: RunConfig, out_dir):
    g, bc = cfg.geometry, cfg.bc
    mesh = build_neck_mesh(g, cfg.mesh)
    res = oracle_compare(mesh, g, bc)
    res.pop("direct")
    path = _write(out_dir, "oracle.json", res, cfg.to_dict())
    print(json.dumps({"velocity_rel_l2": res["velocity_rel_l2"], "C_abs": res["C_abs"], "output": path}))


# ----------------------------------------------------------------- main
def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"a subcommand is required: {', '.join(SUBCOMMANDS)}")
    except UsageError as exc:
        return _fail("usage", exc, EXIT_CONFIG)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.config is None and args.command != "fit":
            raise ConfigError(f"{args.command} needs --config")
        cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({})
        out_dir = args.out or cfg.output["dir"]
        set_solver_backend(cfg.solver["backend"])
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    try:
        if args.command == "check-aux":
            cmd_check_aux(cfg, out_dir)
        elif args.command == "asym":
            cmd_asym(cfg, out_dir)
        elif args.command == "solve":
            cmd_solve(cfg, out_dir)
        elif args.command == "sweep":
            cmd_sweep(cfg, out_dir, args.threads)
        elif args.command == "fit":
            cmd_fit(cfg.to_dict(), out_dir, args.input, args.column)
        elif args.command == "oracle-compare":
            cmd_oracle(cfg, out_dir)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        log.debug("compute failure", exc_info=True)
        return _fail("compute", f"{type(exc).__name__}: {exc}", EXIT_COMPUTE)
    except Exception as exc:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_INTERNAL)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
