"""Command-line entry points.

Exit codes: 0 success, 2 schema violation in an input file, 3 nominal
loop unstable, 4 solver failure, 5 certificate violation.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, certify, examples, fileio, loop, sdp, synthesis
from .errors import (
    AssemblyError,
    CertificateError,
    InvalidMultiplierError,
    InvalidQuantizerError,
    NoFeasibleInitError,
    SchemaError,
    SolverFailureError,
    UnstableLoopError,
)

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_UNSTABLE = 3
EXIT_SOLVER = 4
EXIT_CERTIFICATE = 5

log = logging.getLogger("quantaw")


def _add_run_options(p):
    p.add_argument("--tol", type=float, default=None, help="solver tolerance")
    p.add_argument("--delta", type=float, default=None, help="strictness margin for the LMIs")
    p.add_argument("--epsilon", type=float, default=None, help="objective stop threshold")
    p.add_argument("--kmax", type=int, default=None, help="iteration cap")
    p.add_argument("--tau-grid", default=None, metavar="A:B:N", help="init line-search grid")
    p.add_argument("--backend", default=None, help="SDP solver backend")
    p.add_argument("--seed", type=int, default=0, help="seed for sampled checks")


def _config(pf, args):
    overrides = {
        "epsilon": args.epsilon,
        "k_max": args.kmax,
        "delta": args.delta,
        "tol": args.tol,
        "backend": args.backend,
    }
    if args.tau_grid is not None:
        g = sdp.LineSearchConfig.from_string(args.tau_grid)
        overrides["tau_grid"] = (g.tau_min, g.tau_max, g.count)
    cfg = pf.synthesis.config(**overrides)
    log.info(
        "backend=%s tol=%g delta=%g grid=%g:%g:%d",
        cfg.backend, cfg.tol, cfg.delta,
        cfg.line_search.tau_min, cfg.line_search.tau_max, cfg.line_search.count,
    )
    return cfg


def _result_from_run(iterate, cert, trace, problem_path):
    return fileio.ResultFile(
        E=iterate.E,
        P=iterate.P,
        S1=iterate.S1,
        S2=iterate.S2,
        tau=iterate.tau,
        U=iterate.U,
        mu=cert.mu,
        varrho=cert.varrho,
        omega_trace=trace.omega_values(),
        iterations=len(trace.records) - 1,
        residuals=cert.residuals,
        tool_version=__version__,
        input_digest=fileio.file_digest(problem_path),
    )


def _synthesize_to_files(problem_path, result_path, trace_path, args):
    pf = fileio.load_problem(problem_path)
    cfg = _config(pf, args)
    cl = pf.assemble()
    E, iterate, trace = synthesis.synthesize(cl, cfg)
    cert = certify.check_conditions(iterate, cl)
    rf = _result_from_run(iterate, cert, trace, problem_path)
    fileio.save_result(rf, result_path)
    log.info("result written to %s", result_path)
    if trace_path is not None:
        trace.write_csv(trace_path)
        log.info("iteration trace written to %s", trace_path)
    log.info(
        "iterations=%d terminated_by=%s omega=%.6g",
        len(trace.records) - 1, trace.terminated_by, trace.records[-1].omega,
    )
    if trace.terminated_by == "solver-failure":
        log.error("subproblem solver failed: %s", trace.diagnostics.get("failure"))
        return EXIT_SOLVER, pf, cl, rf, cert
    if trace.terminated_by == "stalled":
        log.warning("no certifiable progress at solver precision past "
                    "iteration %d; standing on the last verified iterate",
                    trace.diagnostics.get("stall", {}).get("iteration", -1))
    if not cert.valid:
        for v in cert.violations:
            log.error("certificate violation: %s (residual %.3e)", v.condition, v.residual)
        return EXIT_CERTIFICATE, pf, cl, rf, cert
    log.info("certificate verified: mu=%.6g varrho=%.6g", cert.mu, cert.varrho)
    return EXIT_OK, pf, cl, rf, cert


def cmd_synth(args):
    code, _, _, _, _ = _synthesize_to_files(args.problem, args.out, args.trace, args)
    return code


def _write_trajectories(pf, cl, E, prefix):
    sim = pf.simulation
    if sim is None:
        raise SchemaError("simulation", "section required for trajectory output")
    flags = sim.schedule_flags()
    comp = loop.simulate(cl, E, sim.x0, sim.horizon, flags)
    unc = loop.simulate(cl, None, sim.x0, sim.horizon, flags)
    comp_path = f"{prefix}_compensated.csv"
    unc_path = f"{prefix}_uncompensated.csv"
    comp.to_csv(comp_path)
    unc.to_csv(unc_path)
    log.info("trajectories written to %s and %s", comp_path, unc_path)
    return comp, unc


def cmd_simulate(args):
    pf = fileio.load_problem(args.problem)
    rf = fileio.load_result(args.result)
    if rf.input_digest != fileio.file_digest(args.problem):
        log.warning("result digest does not match the problem file; continuing anyway")
    cl = pf.assemble()
    _write_trajectories(pf, cl, rf.E, args.out_prefix)
    return EXIT_OK


def cmd_verify(args):
    pf = fileio.load_problem(args.problem)
    rf = fileio.load_result(args.result)
    if rf.input_digest != fileio.file_digest(args.problem):
        log.warning("result digest does not match the problem file; continuing anyway")
    cl = pf.assemble()
    log.info("backend=%s tol=%g delta=%g grid=(unused for verify)",
             sdp.DEFAULT_BACKEND, sdp.DEFAULT_TOL, pf.synthesis.delta)
    try:
        iterate = rf.iterate()
    except InvalidMultiplierError as exc:
        print(f"certificate violation: {exc}")
        return EXIT_CERTIFICATE
    except ValueError as exc:
        raise SchemaError("result", str(exc)) from None

    cert = certify.check_conditions(iterate, cl)
    for name, value in sorted(cert.residuals.items()):
        print(f"{name}: {value:.9e}")
    if not cert.valid:
        for v in cert.violations:
            print(f"certificate violation: {v.condition} (residual {v.residual:.3e})")
        return EXIT_CERTIFICATE

    states = certify.sample_states(cert, args.samples, seed=args.seed)
    report = certify.empirical_ugfta(cert, cl, states)
    print(
        f"empirical check: {report.samples} trajectories, {report.steps_checked} steps, "
        f"worst decrease residual {report.worst_decrease_residual:.3e}"
    )
    if pf.simulation is not None and pf.simulation.x0.shape == (cl.n,):
        print(f"entry bound from x0: {certify.gamma_bound(cert, pf.simulation.x0)} steps")
    if not report.ok:
        print(
            "certificate violation: empirical check failed "
            f"(decrease {len(report.decrease_violations)}, "
            f"invariance {len(report.invariance_violations)}, "
            f"entry {len(report.entry_violations)})"
        )
        return EXIT_CERTIFICATE
    print(f"certificate verified: mu={cert.mu:.9e} varrho={cert.varrho:.9e}")
    return EXIT_OK


def cmd_reproduce(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem_path = out / "problem.json"
    problem_path.write_bytes(examples.example_bytes(args.example))
    log.info("problem written to %s", problem_path)

    code, pf, cl, rf, cert = _synthesize_to_files(
        str(problem_path), str(out / "result.json"), str(out / "trace.csv"), args
    )
    fileio.save_certificate(cert, out / "certificate.json", __version__)
    log.info("certificate written to %s", out / "certificate.json")
    if pf.simulation is not None:
        _write_trajectories(pf, cl, rf.E, str(out / "trajectory"))
    return code


def build_parser():
    parser = argparse.ArgumentParser(
        prog="quantaw",
        description="Anti-windup gain synthesis for loops with quantized inputs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a gain and write a result file")
    p.add_argument("problem", help="problem JSON file")
    p.add_argument("out", help="result JSON file to write")
    p.add_argument("--trace", default=None, help="also write the iteration trace CSV here")
    _add_run_options(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="write compensated/uncompensated trajectory CSVs")
    p.add_argument("problem", help="problem JSON file")
    p.add_argument("result", help="result JSON file from synth")
    p.add_argument("out_prefix", help="prefix for the two CSV files")
    _add_run_options(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="re-verify a result file's certificate")
    p.add_argument("problem", help="problem JSON file")
    p.add_argument("result", help="result JSON file to verify")
    p.add_argument("--samples", type=int, default=100, help="empirical check sample count")
    _add_run_options(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("reproduce", help="run a bundled example end to end")
    p.add_argument("example", choices=list(examples.NAMES))
    p.add_argument("out_dir", help="directory for problem/result/certificate/trajectories")
    _add_run_options(p)
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None):
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s",
        force=True,  # rebind on every call; embedded callers may swap stderr
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, AssemblyError, InvalidQuantizerError) as exc:
        log.error("schema violation: %s", exc)
        return EXIT_SCHEMA
    except UnstableLoopError as exc:
        log.error("%s", exc)
        return EXIT_UNSTABLE
    except (NoFeasibleInitError, SolverFailureError) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except CertificateError as exc:
        log.error("certificate violation: %s", exc)
        return EXIT_CERTIFICATE


if __name__ == "__main__":
    sys.exit(main())
