"""Command-line front end.

Exit codes: 0 success (and all requested checks passed), 1 a check or
certificate failed while the computation itself succeeded, 2 runtime
failure (solver or validation error), 64 usage error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .best_response import project_markovian, resolve_and_compare, solve_lp
from .config import (
    build_scenario,
    make_config,
    parse_overrides,
    resolve_radius,
    snapshot,
)
from .equilibrium import FixedPointConfig, apriori_sweep, certify, iterate
from .errors import MFGError
from .fpk import ControlField, solve_fpk
from .hypotheses import check_all
from .measures import MeasureCurve, constant_curve
from .particles import simulate, superposition_gap
from .tables import read_csv, write_csv

EX_OK = 0
EX_CHECK_FAILED = 1
EX_RUNTIME = 2
EX_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("%s: error: %s\n" % (self.prog, message))
        raise SystemExit(EX_USAGE)


def _build_parser():
    parser = _Parser(prog="mfgsolve", description=__doc__)
    parser.add_argument("--version", action="version", version="mfgsolve %s" % __version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="mfgsolve-out", help="output directory")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        dest="overrides",
        help="override a configuration key (repeatable)",
    )
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--plots", action="store_true", help="write PNG summaries")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-fpk", parents=[common],
                   help="forward transport under the model's default control")
    sub.add_parser("best-response", parents=[common],
                   help="single-agent optimal control against the frozen initial law")
    sub.add_parser("equilibrium", parents=[common],
                   help="fixed-point iteration with certificate and envelope sweep")
    cert = sub.add_parser("certify", parents=[common],
                          help="re-audit a stored equilibrium run directory")
    cert.add_argument("--run", required=True, help="directory holding mu_star.csv and u_star.csv")
    sub.add_parser("check-hypotheses", parents=[common],
                   help="run the structural checker suite on the configured model")
    sub.add_parser("particle-check", parents=[common],
                   help="compare a particle cloud against the grid transport")
    return parser


def _prepare(args):
    overrides = parse_overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = make_config(overrides)
    scenario = build_scenario(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(snapshot(cfg))
    return cfg, scenario, out


def _control_field_to_csv(field, path):
    rows = []
    K, n, du = field.values.shape
    for k in range(K):
        for i in range(n):
            rows.append([k, i] + list(field.values[k, i]))
    write_csv(path, ["k", "i"] + ["u%d" % (c + 1) for c in range(du)], rows)


def _control_field_from_csv(grid, tgrid, path):
    header, data = read_csv(path)
    du = len(header) - 2
    vals = np.zeros((tgrid.steps, grid.n_nodes, du))
    k = data[:, 0].astype(int)
    i = data[:, 1].astype(int)
    vals[k, i] = data[:, 2:]
    return ControlField(grid, tgrid, vals)


def _cmd_solve_fpk(args):
    cfg, sc, out = _prepare(args)
    rep = solve_fpk(
        sc.coeffs, sc.nu, sc.grid, sc.tgrid,
        control=sc.coeffs.default_control, mode=cfg["solver.mode"],
    )
    rep.curve.to_csv(out / "curve.csv")
    rep.to_csv(out / "report.csv")
    print(
        "transport solved: mode=%s  mass defect %.3e  leakage %.3e  final moment %.6g"
        % (rep.mode, rep.mass_defect.max(), rep.total_leakage, rep.v_moment[-1])
    )
    if args.plots:
        from .plots import curve_heatmap, moment_envelope_plot

        curve_heatmap(rep.curve, out / "curve.png")
        moment_envelope_plot(rep.curve, sc.coeffs.lyapunov, None, out / "moment.png")
    return EX_OK


def _cmd_best_response(args):
    cfg, sc, out = _prepare(args)
    R = resolve_radius(cfg, sc)
    br = solve_lp(sc.coeffs, sc.nu, sc.grid, sc.tgrid, R=R,
                  force_lp=bool(cfg["solver.force_lp"]))
    field, rep, projected, relaxed = resolve_and_compare(
        sc.coeffs, sc.nu, sc.grid, sc.tgrid, br.occupation
    )
    br.occupation.to_csv(out / "occupation.csv", threshold=1e-15)
    _control_field_to_csv(field, out / "u_star.csv")
    br.curve.to_csv(out / "mu_br.csv")
    print(
        "best response: method=%s value %.8g  projected %.8g  (R=%s)"
        % (br.method, br.value, projected, "free" if R is None else "%.4g" % R)
    )
    if args.plots:
        from .plots import curve_heatmap

        curve_heatmap(br.curve, out / "mu_br.png", title="best-response marginal")
    return EX_OK


def _cmd_equilibrium(args):
    cfg, sc, out = _prepare(args)
    R = resolve_radius(cfg, sc)
    fp = FixedPointConfig(
        max_iters=int(cfg["solver.max_iters"]),
        damping=float(cfg["solver.damping"]),
        scheme=cfg["solver.scheme"],
        tol=float(cfg["solver.tol"]),
        R=R,
        force_lp=bool(cfg["solver.force_lp"]),
    )
    result = iterate(sc.coeffs, sc.nu, sc.grid, sc.tgrid, fp)
    cert = certify(
        sc.coeffs, sc.nu, sc.grid, sc.tgrid, result.curve, result.control, R=R,
        n_random=int(cfg["certificate.n_random"]),
        perturbation=float(cfg["certificate.perturbation"]),
        seed=int(cfg["seed"]),
    )
    ladder = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    sweep = apriori_sweep(sc.coeffs, result, ladder)
    result.history_to_csv(out / "history.csv")
    result.curve.to_csv(out / "mu_star.csv")
    _control_field_to_csv(result.control, out / "u_star.csv")
    cert.to_csv(out / "certificate.csv")
    sweep.to_csv(out / "sweep.csv")
    summary = [
        "converged = %r" % result.converged,
        "iterations = %d" % result.iterations,
        "residual = %r" % result.residual,
        "value = %r" % result.value,
        "method = %s" % result.method,
        "exploitability = %r" % cert.exploitability,
        "certificate_tolerance = %r" % cert.tolerance,
        "certified = %r" % cert.certified,
        "empirical_radius = %r" % sweep.empirical_radius,
        "sweep_monotone = %r" % sweep.monotone,
    ]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    print(str(cert))
    if args.plots:
        from .plots import certificate_plot, curve_heatmap, residual_history_plot

        curve_heatmap(result.curve, out / "mu_star.png", title="equilibrium curve")
        residual_history_plot(result, out / "history.png")
        certificate_plot(cert, out / "certificate.png")
    return EX_OK if (result.converged and cert.certified) else EX_CHECK_FAILED


def _cmd_certify(args):
    cfg, sc, out = _prepare(args)
    run = Path(args.run)
    curve = MeasureCurve.from_csv(run / "mu_star.csv", sc.grid, sc.tgrid)
    field = _control_field_from_csv(sc.grid, sc.tgrid, run / "u_star.csv")
    cert = certify(
        sc.coeffs, sc.nu, sc.grid, sc.tgrid, curve, field,
        R=resolve_radius(cfg, sc),
        n_random=int(cfg["certificate.n_random"]),
        perturbation=float(cfg["certificate.perturbation"]),
        seed=int(cfg["seed"]),
    )
    cert.to_csv(out / "certificate.csv")
    print(str(cert))
    if args.plots:
        from .plots import certificate_plot

        certificate_plot(cert, out / "certificate.png")
    return EX_OK if cert.certified else EX_CHECK_FAILED


def _cmd_check_hypotheses(args):
    cfg, sc, out = _prepare(args)
    curve = constant_curve(sc.grid, sc.tgrid, sc.nu)
    suite = check_all(sc.coeffs, curve, seed=int(cfg["seed"]))
    suite.write_text(out / "hypotheses.txt")
    suite.write_violations_csv(out / "violations.csv")
    print(str(suite))
    return EX_OK if suite.passed else EX_CHECK_FAILED


def _cmd_particle_check(args):
    cfg, sc, out = _prepare(args)
    mode = cfg["solver.mode"]
    env = constant_curve(sc.grid, sc.tgrid, sc.nu)
    fv = solve_fpk(sc.coeffs, sc.nu, sc.grid, sc.tgrid,
                   control=sc.coeffs.default_control, env_curve=env, mode=mode)
    pr = simulate(
        sc.coeffs, sc.nu, sc.grid, sc.tgrid, sc.coeffs.default_control,
        n_particles=int(cfg["particles.n"]), seed=int(cfg["seed"]),
        env_curve=env, batch_size=int(cfg["particles.batch"]),
    )
    gap, idxs, gaps = superposition_gap(pr, fv.curve)
    tol = float(cfg["particles.gap_tol"])
    rows = [[sc.tgrid.times[k], gaps[i]] for i, k in enumerate(idxs)]
    write_csv(out / "superposition.csv", ["t", "gap"], rows)
    verdict = "PASS" if gap <= tol else "FAIL"
    print(
        "[%s] particle check  n=%d  worst gap %.4g  tolerance %.4g"
        % (verdict, pr.n_particles, gap, tol)
    )
    if args.plots:
        from .plots import superposition_plot

        superposition_plot(sc.tgrid.times[idxs], gaps, tol, out / "superposition.png")
    return EX_OK if gap <= tol else EX_CHECK_FAILED


_COMMANDS = {
    "solve-fpk": _cmd_solve_fpk,
    "best-response": _cmd_best_response,
    "equilibrium": _cmd_equilibrium,
    "certify": _cmd_certify,
    "check-hypotheses": _cmd_check_hypotheses,
    "particle-check": _cmd_particle_check,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except MFGError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EX_RUNTIME
    except KeyboardInterrupt:  # pragma: no cover
        return EX_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
