"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 infeasible scenario, 3 solver
nonconvergence, 4 certificate failure.  Every failure prints one line
``qne: error=<kind> <reason>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .detector import detector_stats, p_fa_p_d
from .detector import monte_carlo_detector
from .model import (
    Scenario,
    StrategyProfile,
    equi_feasibility_check,
    feasibility_check,
    generate_scenario,
    scenario_from_dict,
    scenario_from_json,
    scenario_to_dict,
    scenario_to_json,
    throughputs,
)
from .projection import InfeasibleSetError
from .solvers import SolveOptions, Variant, solve_equi_sensing
from .vi import QneCertificate, ViPoint, certify

RESULT_VERSION = "qne-result-v1"

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NONCONVERGED, EXIT_CERT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind, reason, code):
    print(f"qne: error={kind} {reason}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# argument definitions

def _solver_flags(p, solver="extragradient"):
    d = SolveOptions()
    p.add_argument("--variant", default="Priced",
                   choices=["Individual", "Priced", "EquiSensing", "individual", "priced",
                            "equisensing"])
    p.add_argument("--solver", default=solver, choices=sorted(ex.SOLVERS))
    p.add_argument("--tol", type=float, default=d.tol)
    p.add_argument("--max-iters", type=int, default=d.max_iters)
    p.add_argument("--step0", type=float, default=d.step0)
    p.add_argument("--step-shrink", type=float, default=d.step_shrink)
    p.add_argument("--c0", type=float, default=d.c0)
    p.add_argument("--c-growth", type=float, default=d.c_growth)
    p.add_argument("--c-max", type=float, default=d.c_max)
    p.add_argument("--spread-tol", type=float, default=d.spread_tol)
    p.add_argument("--seed", type=int, default=d.seed)


def _out_flags(p, formats=("csv", "json")):
    p.add_argument("--out", type=Path, default=None, help="output file (stdout if omitted)")
    p.add_argument("--format", choices=list(formats), default=formats[0])


def build_parser():
    parser = _Parser(prog="qne", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a scenario file")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--Q", type=int, default=3)
    g.add_argument("--N", type=int, default=8)
    g.add_argument("--P", type=int, default=1)
    g.add_argument("--L", type=int, default=8)
    for name in ("noise-var", "snr-d", "P-budget", "tau-min", "tau-max", "f", "T", "alpha",
                 "beta", "I-max", "I-q-max", "cross-gain"):
        g.add_argument(f"--{name}", type=float, default=None)
    g.add_argument("--signaling-model", choices=["PSK", "Gaussian"], default=None)
    g.add_argument("--no-pu-channels", action="store_true")
    g.add_argument("--out", type=Path, default=None)

    c = sub.add_parser("check", help="feasibility and equi-feasibility report")
    c.add_argument("--scenario", type=Path, required=True)
    _out_flags(c, ("json",))

    s = sub.add_parser("solve", help="compute one QNE and its certificate")
    s.add_argument("--scenario", type=Path, required=True)
    _solver_flags(s)
    s.add_argument("--out", type=Path, default=None)

    t = sub.add_parser("sweep-tau", help="common sensing-time sweep")
    t.add_argument("--scenario", type=Path, required=True)
    t.add_argument("--tau-grid", type=str, default=None, help="comma-separated seconds")
    t.add_argument("--points", type=int, default=25, help="geometric grid size if no grid")
    t.add_argument("--no-equi", action="store_true")
    t.add_argument("--jobs", type=int, default=1)
    _solver_flags(t, solver="best-response")
    _out_flags(t)

    m = sub.add_parser("sweep-imax", help="QNE vs. baseline gain over P/I_max")
    m.add_argument("--scenario", type=Path, required=True)
    m.add_argument("--ratios", type=str, required=True, help="comma-separated P/I_max values")
    m.add_argument("--jobs", type=int, default=1)
    _solver_flags(m)
    _out_flags(m)

    k = sub.add_parser("compare", help="individual vs. global interference constraints")
    k.add_argument("--scenario", type=Path, required=True)
    k.add_argument("--jobs", type=int, default=1)
    _solver_flags(k)
    _out_flags(k)

    d = sub.add_parser("mc-detector", help="Monte-Carlo check of the detector probabilities")
    d.add_argument("--noise-var", type=float, default=1.0)
    d.add_argument("--signal-var", type=float, default=0.1)
    d.add_argument("--gamma", type=float, required=True)
    d.add_argument("--tau", type=float, required=True)
    d.add_argument("--f", type=float, default=1e5)
    d.add_argument("--trials", type=int, default=100_000)
    d.add_argument("--seed", type=int, default=0)
    _out_flags(d, ("json",))

    v = sub.add_parser("certify", help="re-verify a saved solve result")
    v.add_argument("--result", type=Path, required=True)
    v.add_argument("--tol", type=float, default=None)
    return parser


# ---------------------------------------------------------------------------
# helpers

def _opts(args):
    return SolveOptions(variant=Variant.parse(args.variant), tol=args.tol,
                        max_iters=args.max_iters, step0=args.step0,
                        step_shrink=args.step_shrink, c0=args.c0, c_growth=args.c_growth,
                        c_max=args.c_max, seed=args.seed, spread_tol=args.spread_tol)


def _load_scenario(path: Path) -> Scenario:
    try:
        return scenario_from_json(path.read_text())
    except OSError as e:
        raise UsageError(f"cannot read scenario {path}: {e.strerror}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise UsageError(f"invalid scenario {path}: {e}") from None


def _emit(text, out: Path | None):
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        out.write_text(text if text.endswith("\n") else text + "\n")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from None


def _require_feasible(sc):
    rep = feasibility_check(sc)
    if not rep.ok:
        bad = np.argwhere(~rep.feasible)
        raise InfeasibleSetError(f"{len(bad)} infeasible (q,k) pairs; min margin "
                                 f"{float(rep.margin.min()):.6g}")


def _point_dict(z: ViPoint):
    return {"tau_hat": z.x.tau_hat.tolist(), "p": z.x.p.tolist(),
            "gamma_hat": z.x.gamma_hat.tolist(), "pi": z.pi.tolist(), "lambda": z.lam.tolist()}


def _point_from_dict(d) -> ViPoint:
    x = StrategyProfile(np.asarray(d["tau_hat"]), np.asarray(d["p"]), np.asarray(d["gamma_hat"]))
    return ViPoint(x, np.asarray(d["pi"]), np.asarray(d["lambda"]))


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args):
    over = {}
    names = {"noise_var": "noise_var", "snr_d": "snr_d", "P_budget": "P_budget",
             "tau_min": "tau_min", "tau_max": "tau_max", "f": "f", "T": "T", "alpha": "alpha",
             "beta": "beta", "I_max": "I_max", "I_q_max": "I_q_max", "cross_gain": "cross_gain",
             "signaling_model": "signaling_model"}
    for attr, key in names.items():
        val = getattr(args, attr)
        if val is not None:
            over[key] = val
    if args.no_pu_channels:
        over["pu_channels"] = False
    try:
        sc = generate_scenario(args.seed, Q=args.Q, N=args.N, P=args.P, L=args.L, **over)
    except ValueError as e:
        raise UsageError(str(e)) from None
    _emit(scenario_to_json(sc), args.out)
    return EXIT_OK


def cmd_check(args):
    sc = _load_scenario(args.scenario)
    rep = feasibility_check(sc)
    eq = equi_feasibility_check(sc)
    doc = {
        "scenario_digest": sc.digest(),
        "feasible": rep.ok,
        "margin": rep.margin.tolist(),
        "feasible_qk": rep.feasible.tolist(),
        "equi_feasible": eq.feasible,
        "common_tau_interval": [eq.tau_low, eq.tau_high],
    }
    _emit(json.dumps(doc, indent=1), args.out)
    if not rep.ok:
        return _fail("infeasible", f"min margin {float(rep.margin.min()):.6g}", EXIT_INFEASIBLE)
    return EXIT_OK


def _result_doc(sc, opts, solver, res, penalty, extra=None):
    doc = {
        "version": RESULT_VERSION,
        "scenario_digest": sc.digest(),
        "scenario": scenario_to_dict(sc),
        "opts": opts.to_dict(),
        "solver": solver,
        "penalty": penalty,
        "converged": res.converged,
        "iterations": res.iterations,
        "method": res.method,
        "z": _point_dict(res.z),
        "certificate": res.certificate.to_dict(),
        "sum_throughput": float(np.sum(throughputs(res.z.x, sc))),
    }
    if extra:
        doc.update(extra)
    return doc


def cmd_solve(args):
    sc = _load_scenario(args.scenario)
    _require_feasible(sc)
    opts = _opts(args)
    solver = ex.SOLVERS[args.solver]
    if opts.variant is Variant.EQUI_SENSING:
        if not equi_feasibility_check(sc).feasible:
            raise InfeasibleSetError("no common sensing time is feasible")
        eq = solve_equi_sensing(sc, opts, solver=solver)
        res = eq.final
        penalty = eq.penalties[-1]
        extra = {"tau_star": eq.tau_star, "spreads": eq.spreads, "penalties": eq.penalties,
                 "equi_converged": eq.converged}
        ok = eq.converged
        why = eq.message
    else:
        res = solver(sc, opts)
        penalty = 0.0
        extra = None
        ok = res.converged
        why = res.message
    doc = _result_doc(sc, opts, args.solver, res, penalty, extra)
    _emit(json.dumps(doc, indent=1), args.out)
    if not ok:
        return _fail("nonconvergence", why.replace("\n", " "), EXIT_NONCONVERGED)
    return EXIT_OK


def _emit_sweep(res: ex.SweepResult, args, config):
    res.metadata["config"] = config
    text = res.to_csv() if args.format == "csv" else res.to_json()
    _emit(text, args.out)
    feasible = res.series.get("feasible", [True] * len(res.axis))
    bad = [i for i, (c, f) in enumerate(zip(res.series["converged"], feasible)) if f and not c]
    if bad:
        return _fail("nonconvergence", f"{len(bad)} of {len(res.axis)} rows not converged",
                     EXIT_NONCONVERGED)
    return EXIT_OK


def _config(args):
    # The output location is left out so that a run is reproducible byte for byte
    # regardless of where it is written.
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "out":
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def cmd_sweep_tau(args):
    sc = _load_scenario(args.scenario)
    _require_feasible(sc)
    eq = equi_feasibility_check(sc)
    if not eq.feasible:
        raise InfeasibleSetError("no common sensing time is feasible")
    if args.tau_grid:
        grid = _floats(args.tau_grid)
    else:
        if args.points < 2:
            raise UsageError("--points must be at least 2")
        # At tau_low itself the threshold interval of the binding carrier is a
        # single point; start just inside so rounding cannot empty it.
        grid = np.geomspace(eq.tau_low * (1 + 1e-6), eq.tau_high, args.points).tolist()
    res = ex.sweep_sensing_tradeoff(sc, grid, _opts(args), solver=args.solver,
                                    mark_equi=not args.no_equi, jobs=args.jobs)
    return _emit_sweep(res, args, _config(args))


def cmd_sweep_imax(args):
    sc = _load_scenario(args.scenario)
    _require_feasible(sc)
    ratios = _floats(args.ratios)
    if not ratios or min(ratios) <= 0:
        raise UsageError("--ratios must be positive")
    res = ex.sweep_interference_gain(sc, ratios, _opts(args), solver=args.solver, jobs=args.jobs)
    return _emit_sweep(res, args, _config(args))


def cmd_compare(args):
    sc = _load_scenario(args.scenario)
    _require_feasible(sc)
    res = ex.compare_global_local(sc, _opts(args), solver=args.solver, jobs=args.jobs)
    return _emit_sweep(res, args, _config(args))


def cmd_mc_detector(args):
    if args.noise_var <= 0 or args.signal_var <= 0:
        raise UsageError("variances must be positive")
    stats = detector_stats(args.noise_var, args.signal_var, "Gaussian")
    try:
        pfa_emp, pd_emp = monte_carlo_detector(stats, args.gamma, args.tau, args.f, args.trials,
                                               args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    pfa, pd = p_fa_p_d(args.gamma, args.tau, args.f, stats)
    pfa, pd = float(pfa), float(pd)

    def z(emp, p):
        sd = math.sqrt(max(p * (1 - p), 1e-300) / args.trials)
        return (emp - p) / sd

    doc = {"samples": int(math.floor(args.tau * args.f)), "trials": args.trials,
           "seed": args.seed, "p_fa_emp": pfa_emp, "p_d_emp": pd_emp, "p_fa": pfa, "p_d": pd,
           "z_fa": z(pfa_emp, pfa), "z_d": z(pd_emp, pd), "config": _config(args)}
    _emit(json.dumps(doc, indent=1), args.out)
    return EXIT_OK


def cmd_certify(args):
    try:
        doc = json.loads(args.result.read_text())
    except OSError as e:
        raise UsageError(f"cannot read result {args.result}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"invalid result file: {e}") from None
    if doc.get("version") != RESULT_VERSION:
        raise UsageError(f"result file is not {RESULT_VERSION}")
    sc = scenario_from_dict(doc["scenario"])
    if sc.digest() != doc.get("scenario_digest"):
        return _fail("certificate", "scenario digest mismatch", EXIT_CERT)
    opts = SolveOptions.from_dict(doc["opts"])
    tol = args.tol if args.tol is not None else opts.tol
    z = _point_from_dict(doc["z"])
    cert = certify(z, sc, tol, priced=opts.priced, penalty=float(doc.get("penalty", 0.0)))
    stored = QneCertificate.from_dict(doc["certificate"])
    report = {"natural_residual": cert.natural_residual,
              "stored_natural_residual": stored.natural_residual,
              "passes": cert.passes(tol), "failures": cert.failures(tol)}
    print(json.dumps(report))
    if not cert.passes(tol):
        return _fail("certificate", "failed: " + ",".join(cert.failures(tol)), EXIT_CERT)
    if abs(cert.natural_residual - stored.natural_residual) > tol:
        return _fail("certificate", "recomputed residual differs from the stored one", EXIT_CERT)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "check": cmd_check, "solve": cmd_solve, "sweep-tau": cmd_sweep_tau,
            "sweep-imax": cmd_sweep_imax, "compare": cmd_compare, "mc-detector": cmd_mc_detector,
            "certify": cmd_certify}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return COMMANDS[args.command](args)
    except UsageError as e:
        return _fail("usage", str(e), EXIT_USAGE)
    except InfeasibleSetError as e:
        return _fail("infeasible", str(e), EXIT_INFEASIBLE)
    except ValueError as e:
        return _fail("usage", str(e), EXIT_USAGE)


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
