"""Desk-scale experiment drivers producing tabular sweep results."""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (
    Scenario,
    global_violations,
    interference_profile,
    throughputs,
)
from .projection import InfeasibleSetError
from .solvers import (
    SolveOptions,
    Variant,
    common_tau_objective,
    solve_baseline_deterministic,
    solve_best_response,
    solve_equi_sensing,
    solve_extragradient,
)

SWEEP_VERSION = "qne-sweep-v1"

SOLVERS = {"extragradient": solve_extragradient, "best-response": solve_best_response}


@dataclass
class SweepResult:
    axis: list
    series: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, col in self.series.items():
            if len(col) != len(self.axis):
                raise ValueError(f"SweepResult: column {name!r} has {len(col)} rows, "
                                 f"axis has {len(self.axis)}")
        if "converged" not in self.series:
            raise ValueError("SweepResult: every row needs a converged flag")

    @property
    def columns(self):
        return list(self.series)

    def rows(self):
        for i in range(len(self.axis)):
            yield {name: col[i] for name, col in self.series.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = self.columns
        buf.write(",".join(names) + "\n")
        buf.write(f"# version: {SWEEP_VERSION}\n")
        for key in sorted(self.metadata):
            buf.write(f"# {key}: {json.dumps(self.metadata[key], sort_keys=True)}\n")
        for row in self.rows():
            buf.write(",".join(_cell(row[n]) for n in names) + "\n")
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"version": SWEEP_VERSION, "axis": self.axis, "series": self.series,
                           "metadata": self.metadata}, sort_keys=True, indent=1,
                          default=_jsonable)


def _cell(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def _map(fn, items, jobs):
    """Order-preserving map, optionally across processes."""
    if jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _metadata(scenario, opts, solver, **extra):
    meta = {"scenario_digest": scenario.digest(), "seeds": [opts.seed], "opts": opts.to_dict(),
            "solver": solver}
    meta.update(extra)
    return meta


def _fixed_tau_opts(opts):
    # Sensing is frozen in a tau sweep, so the equi-sensing penalty is moot.
    if opts.variant is Variant.EQUI_SENSING:
        return replace(opts, variant=Variant.PRICED)
    return opts


def slope_sign_changes(values):
    """Number of sign changes of the discrete slope, ignoring exact ties."""
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if v.size < 3:
        return 0
    d = np.sign(np.diff(v))
    d = d[d != 0]
    return int(np.count_nonzero(d[1:] != d[:-1]))


# ---------------------------------------------------------------------------
# sensing / throughput trade-off

def _tau_point(args):
    scenario, tau, opts, solver = args
    Q = scenario.Q
    th = np.sqrt(scenario.f * tau)
    row = {"tau": float(tau), "feasible": True, "converged": False, "residual": math.nan,
           "sum_throughput": math.nan}
    for q in range(Q):
        row[f"throughput_{q}"] = math.nan
    try:
        res = SOLVERS[solver](scenario, _fixed_tau_opts(opts), fixed_tau_hat=th)
    except InfeasibleSetError:
        row["feasible"] = False
        return row
    thr = throughputs(res.z.x, scenario)
    row.update(converged=res.converged, residual=res.certificate.natural_residual,
               sum_throughput=float(thr.sum()))
    for q in range(Q):
        row[f"throughput_{q}"] = float(thr[q])
    return row


def sweep_sensing_tradeoff(scenario: Scenario, tau_grid, opts: SolveOptions | None = None, *,
                           solver="best-response", mark_equi=True, jobs=1) -> SweepResult:
    """Per common sensing time, solve the game in (p, gamma_hat, pi, lambda).

    Rows where the fixed tau leaves some threshold interval empty are kept and
    marked ``feasible = 0``.  With ``mark_equi`` the equi-sensing QNE is also
    computed and its tau and sum throughput stored in the metadata.

    Best response is the default here: with sensing frozen the game loses the
    curvature that keeps extragradient contracting, and it stalls on some
    points where the Gauss-Seidel sweep does not.
    """
    opts = opts or SolveOptions()
    grid = sorted(float(t) for t in tau_grid)
    rows = _map(_tau_point, [(scenario, t, opts, solver) for t in grid], jobs)
    series = {k: [r[k] for r in rows] for k in rows[0]}
    good = [s if (c and f) else None
            for s, c, f in zip(series["sum_throughput"], series["converged"], series["feasible"])]
    meta = _metadata(scenario, opts, solver, slope_sign_changes=slope_sign_changes(good))
    finite = [(t, s) for t, s in zip(grid, good) if s is not None]
    if finite:
        t_best, s_best = max(finite, key=lambda ts: (ts[1], -ts[0]))
        meta.update(grid_best_tau=t_best, grid_best_sum_throughput=s_best)
    if mark_equi:
        eq_opts = replace(opts, variant=Variant.EQUI_SENSING)
        eq = solve_equi_sensing(scenario, eq_opts, solver=SOLVERS[solver])
        final = eq.final.z
        meta.update(
            equi_tau_star=eq.tau_star,
            equi_converged=eq.converged,
            equi_spread=eq.spreads[-1],
            equi_sum_throughput=float(np.sum(throughputs(final.x, scenario))),
            equi_common_objective=common_tau_objective(eq.tau_star, scenario, final.x, final.pi),
        )
    return SweepResult(axis=grid, series=series, metadata=meta)


# ---------------------------------------------------------------------------
# QNE vs. no-sensing baseline

def caps_for_ratio(scenario: Scenario, ratio):
    """Scale both cap families so that P / I_max equals ``ratio``.

    P is the mean power budget; individual caps keep their ratio to I_max.
    """
    I_max = float(np.mean(scenario.P_budget)) / ratio
    scale = I_max / scenario.I_max
    return scenario.with_caps(I_q_max=scenario.I_q_max * scale[:, None],
                              I_max=np.full(scenario.P, I_max))


def _gain_point(args):
    scenario, ratio, opts, solver = args
    sc = caps_for_ratio(scenario, ratio)
    qe = SOLVERS[solver](sc, opts)
    base = solve_baseline_deterministic(sc, opts)
    sr_qe = float(np.sum(throughputs(qe.z.x, sc)))
    sr_b = base.sum_rate(sc)
    gain = 100.0 * (sr_qe - sr_b) / sr_b if sr_b > 0 else math.inf
    return {
        "P_over_Imax": float(ratio),
        "I_max": float(sc.I_max[0]),
        "SR_QE": sr_qe,
        "SR_baseline": sr_b,
        "gain_percent": gain,
        "qe_converged": qe.converged,
        "baseline_converged": base.converged,
        "converged": bool(qe.converged and base.converged),
        "qe_residual": qe.certificate.natural_residual,
        "baseline_residual": base.certificate.natural_residual,
        "qe_certified": qe.certificate.passes(opts.tol),
        "baseline_certified": base.certificate.passes(opts.tol),
    }


def sweep_interference_gain(scenario: Scenario, imax_grid, opts: SolveOptions | None = None, *,
                            solver="extragradient", jobs=1) -> SweepResult:
    """Gain (SR_QE - SR_baseline) / SR_baseline per cap level P / I_max."""
    opts = opts or SolveOptions()
    grid = sorted(float(r) for r in imax_grid)
    rows = _map(_gain_point, [(scenario, r, opts, solver) for r in grid], jobs)
    series = {k: [r[k] for r in rows] for k in rows[0]}
    return SweepResult(axis=grid, series=series, metadata=_metadata(scenario, opts, solver))


# ---------------------------------------------------------------------------
# global vs. individual constraints

def _variant_point(args):
    scenario, variant, opts, solver = args
    Q = scenario.Q
    if variant is Variant.INDIVIDUAL:
        sc = scenario.with_caps(I_q_max=np.repeat(scenario.I_max[:, None] / Q, Q, axis=1))
    else:
        sc = scenario.with_caps(I_q_max=np.repeat(scenario.I_max[:, None], Q, axis=1))
    res = SOLVERS[solver](sc, replace(opts, variant=variant))
    x = res.z.x
    aggregate = global_violations(x, sc) + sc.I_max
    profile = interference_profile(x, sc, 0)
    row = {
        "variant": variant.value,
        "sum_throughput": float(np.sum(throughputs(x, sc))),
        "converged": res.converged,
        "residual": res.certificate.natural_residual,
        "certified": res.certificate.passes(opts.tol),
        "aggregate_interference": float(aggregate[0]),
        "I_max": float(sc.I_max[0]),
    }
    for k in range(sc.N):
        row[f"interference_k{k}"] = float(profile[k])
    return row


def compare_global_local(scenario: Scenario, opts: SolveOptions | None = None, *,
                         solver="extragradient", jobs=1) -> SweepResult:
    """Individual caps I_max / Q versus the shared cap I_max enforced by a price."""
    opts = opts or SolveOptions()
    variants = [Variant.INDIVIDUAL, Variant.PRICED]
    rows = _map(_variant_point, [(scenario, v, opts, solver) for v in variants], jobs)
    series = {k: [r[k] for r in rows] for k in rows[0]}
    return SweepResult(axis=[0, 1], series=series, metadata=_metadata(scenario, opts, solver))


def seed_average(results, column, axis_index=None):
    """Mean of ``column`` over converged rows of several sweeps.

    Returns (means per axis position, converged counts).  All sweeps must share
    the same axis.
    """
    n = len(results[0].axis)
    sums = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    for res in results:
        for i, row in enumerate(res.rows()):
            if row["converged"]:
                sums[i] += row[column]
                counts[i] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    if axis_index is not None:
        return float(means[axis_index]), int(counts[axis_index])
    return means, counts
