"""Command line front end.

Subcommands:
    check     model sanity: well-posedness and algebraic-row residuals
    synth     design a gain, grow the invariant set, verify, write reports
    verify    re-run the verification suite against a saved report
    simulate  integrate one closed-loop trajectory from a saved gain

Exit codes: 0 success, 1 a check failed or a trajectory diverged,
2 bad input, 3 iteration limit hit, 4 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .model import (ConstantDelta, PiecewiseConstantDelta, SinusoidDelta,
                    VertexCycleDelta, WellPosednessError, draw_residual_samples,
                    residual_check, simulate, validate_well_posedness)
from .modelio import (ModelFormatError, certificate_from_dict, load_model,
                      read_json, synthesis_to_dict, verification_to_dict,
                      write_json_report, write_trajectory_csv)
from .plots import plot_histories, plot_region, plot_timeseries
from .sdp import SolveOptions
from .synthesis import synthesize
from .verify import verify_certificate

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2
EXIT_ITERATION_LIMIT = 3
EXIT_SOLVER = 4


class InputError(Exception):
    """Bad command line input or model file; maps to exit code 2."""


def _out_dir(args):
    path = args.out or "."
    os.makedirs(path, exist_ok=True)
    return path


def _load(args):
    try:
        return load_model(args.model)
    except FileNotFoundError as exc:
        raise InputError(f"model file not found: {exc.filename}") from exc
    except ModelFormatError as exc:
        raise InputError(f"bad model file: {exc}") from exc


def _options(args):
    overrides = {}
    solver = getattr(args, "solver", None)
    if solver and solver != "auto":
        overrides["solver"] = solver
    return SolveOptions.from_env(**overrides)


def _delta_signal(mode, model, seed):
    if model.l == 0:
        if mode != "zero":
            print(f"note: model has no uncertainty; --delta-mode {mode} is a no-op")
        return None
    D = model.D
    if mode == "zero":
        return ConstantDelta(np.zeros(model.l))
    if mode == "vertex":
        return ConstantDelta(D.vertices()[0])
    if mode == "vertex-cycling":
        return VertexCycleDelta(D, dwell=1.0)
    if not hasattr(D, "bounds"):
        raise InputError(f"--delta-mode {mode} needs a box uncertainty set")
    if mode == "piecewise":
        return PiecewiseConstantDelta(D, dwell=1.0, seed=seed)
    return SinusoidDelta(D)


def _parse_x0(text, n):
    try:
        vals = [float(tok) for tok in text.split(",")]
    except ValueError as exc:
        raise InputError(f"bad --x0 value: {text!r}") from exc
    if len(vals) != n:
        raise InputError(f"--x0 has {len(vals)} entries, model has {n} states")
    return np.array(vals)


def cmd_check(args):
    model = _load(args)
    wp = validate_well_posedness(model, seed=args.seed)
    print(f"well-posedness: {'pass' if wp.passed else 'FAIL'} "
          f"(max cond {wp.max_cond:.3e} over {wp.points_checked} points, "
          f"cap {wp.cond_cap:.1e})")
    payload = {
        "model": model.name,
        "well_posedness": {
            "passed": wp.passed,
            "max_cond": wp.max_cond,
            "sigma2_max_cond": wp.sigma2_max_cond,
            "points_checked": wp.points_checked,
            "cond_cap": wp.cond_cap,
        },
    }
    ok = wp.passed
    if model.pi_oracle is not None:
        rep = residual_check(model, draw_residual_samples(model, args.samples,
                                                          seed=args.seed))
        res_ok = rep.max_dar_residual <= 1e-8 and rep.max_pi_mismatch <= 1e-8
        ok = ok and res_ok
        print(f"algebraic residuals: {'pass' if res_ok else 'FAIL'} "
              f"(dar {rep.max_dar_residual:.3e}, pi {rep.max_pi_mismatch:.3e}, "
              f"{rep.count} samples)")
        payload["residuals"] = {
            "passed": res_ok,
            "max_dar_residual": rep.max_dar_residual,
            "max_pi_mismatch": rep.max_pi_mismatch,
            "count": rep.count,
        }
    else:
        print("algebraic residuals: skipped (model has no pi oracle)")
    if args.out:
        path = os.path.join(_out_dir(args), "check.json")
        write_json_report(payload, path)
        print(f"wrote {path}")
    return EXIT_OK if ok else EXIT_FAILED


def _synthesis_exit(result):
    if result.status == "iteration-limit":
        return EXIT_ITERATION_LIMIT
    if result.status == "solver-failure":
        return EXIT_SOLVER
    return EXIT_OK


def cmd_synth(args):
    model = _load(args)
    options = _options(args)
    result = synthesize(model, i_max=args.imax, gamma=args.gamma,
                        options=options, skip_maximize=args.skip_maximize)
    print(f"synthesis: {result.status} ({result.exit_reason})")
    if result.lambda_history:
        print(f"  relaxation level: {result.lambda_history[0]:.6g} -> "
              f"{result.lambda_history[-1]:.6g} "
              f"in {result.design_iterations} iterations")
    if result.trace_history:
        print(f"  trace(P): {result.trace_history[0]:.6g} -> "
              f"{result.trace_history[-1]:.6g} "
              f"in {result.maximize_iterations} iterations")
    payload = synthesis_to_dict(result)

    verification = None
    if result.success:
        print(f"  gain K = {np.array2string(result.K, precision=6)}")
        verification = verify_certificate(
            model, result, samples=args.samples, n_traj=args.ntraj,
            t_final=args.tfinal, step=args.step, seed=args.seed,
            skip_roa=args.skip_roa)
        for chk in verification.checks:
            print(f"  verify {chk.name}: {'pass' if chk.passed else 'FAIL'} "
                  f"(worst {chk.worst:.3e}, tol {chk.tol:.1e})")
        payload["verification"] = verification_to_dict(verification)

    out = _out_dir(args)
    report_path = os.path.join(out, "report.json")
    write_json_report(payload, report_path)
    print(f"wrote {report_path}")
    if result.certificate is not None:
        region = plot_region(model, result, os.path.join(out, "region.png"),
                             seed=args.seed)
        if region:
            print(f"wrote {region}")
    hist = plot_histories(result, os.path.join(out, "histories.png"))
    if hist:
        print(f"wrote {hist}")

    code = _synthesis_exit(result)
    if code != EXIT_OK:
        return code
    if verification is not None and not verification.passed:
        return EXIT_FAILED
    return EXIT_OK


def _certificate_from_report(path):
    try:
        data = read_json(path)
    except FileNotFoundError as exc:
        raise InputError(f"report file not found: {exc.filename}") from exc
    obj = data.get("certificate")
    if obj is None:
        raise InputError(f"{path} has no certificate entry")
    try:
        return certificate_from_dict(obj)
    except ModelFormatError as exc:
        raise InputError(f"bad certificate in {path}: {exc}") from exc


def cmd_verify(args):
    model = _load(args)
    cert = _certificate_from_report(args.report)
    report = verify_certificate(model, cert, samples=args.samples,
                                n_traj=args.ntraj, t_final=args.tfinal,
                                step=args.step, seed=args.seed)
    for chk in report.checks:
        print(f"{chk.name}: {'pass' if chk.passed else 'FAIL'} "
              f"(worst {chk.worst:.3e}, tol {chk.tol:.1e})")
    print(f"verification: {'pass' if report.passed else 'FAIL'}")
    if args.out:
        out = _out_dir(args)
        path = os.path.join(out, "verification.json")
        write_json_report(verification_to_dict(report), path)
        print(f"wrote {path}")
        region = plot_region(model, cert, os.path.join(out, "region.png"),
                             seed=args.seed)
        if region:
            print(f"wrote {region}")
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_simulate(args):
    model = _load(args)
    cert = _certificate_from_report(args.report)
    x0 = _parse_x0(args.x0, model.n)
    sig = _delta_signal(args.delta_mode, model, args.seed)
    traj = simulate(model, cert.K, x0, args.tfinal, step=args.step,
                    delta_signal=sig)
    final = traj.x[-1]
    if traj.diverged:
        print(f"trajectory diverged at t = {traj.divergence_time:.4g}")
    else:
        print(f"trajectory ran to t = {traj.t[-1]:.4g}, "
              f"|x| final = {np.linalg.norm(final):.3e}, "
              f"saturation active {100.0 * traj.sat_active.mean():.1f}% of steps")
    out = _out_dir(args)
    csv_path = os.path.join(out, "trajectory.csv")
    write_trajectory_csv(traj, model, csv_path)
    print(f"wrote {csv_path}")
    fig_path = plot_timeseries(traj, model, os.path.join(out, "timeseries.png"))
    print(f"wrote {fig_path}")
    return EXIT_FAILED if traj.diverged else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sofsat",
        description="Static output-feedback synthesis under saturation "
                    "with certificate verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("check", help="validate a model file")
    add_common(p)
    p.add_argument("--samples", type=int, default=2000,
                   help="residual sample count")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("synth", help="design and verify a gain")
    add_common(p)
    p.add_argument("--imax", type=int, default=50, help="iteration cap per stage")
    p.add_argument("--gamma", type=float, default=1e-2,
                   help="trace-change stopping threshold")
    p.add_argument("--skip-maximize", action="store_true",
                   help="stop after the stabilizing-gain stage")
    p.add_argument("--solver", default="auto",
                   choices=("auto", "CLARABEL", "CVXOPT", "SCS"))
    p.add_argument("--samples", type=int, default=10000,
                   help="verification sample count")
    p.add_argument("--ntraj", type=int, default=100,
                   help="region-of-attraction trajectory count")
    p.add_argument("--tfinal", type=float, default=50.0)
    p.add_argument("--step", type=float, default=5e-3)
    p.add_argument("--skip-roa", action="store_true",
                   help="skip the Monte Carlo trajectory check")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="re-verify a saved certificate")
    add_common(p)
    p.add_argument("--report", required=True,
                   help="report JSON with a certificate entry")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--ntraj", type=int, default=100)
    p.add_argument("--tfinal", type=float, default=50.0)
    p.add_argument("--step", type=float, default=5e-3)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="integrate one closed-loop run")
    add_common(p)
    p.add_argument("--report", required=True,
                   help="report JSON with a certificate entry")
    p.add_argument("--x0", required=True,
                   help="initial state, comma separated")
    p.add_argument("--tfinal", type=float, default=20.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--delta-mode", default="zero",
                   choices=("zero", "vertex", "vertex-cycling", "piecewise",
                            "sine"))
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except WellPosednessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
