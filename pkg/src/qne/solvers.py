"""QNE solvers: extragradient, block best response, equi-sensing continuation,
the deterministic no-sensing baseline, and the common sensing-time oracle.

Both game solvers alternate a globalizing phase with a local semismooth
Newton refinement (:mod:`qne.newton`) attempted on a geometric iteration
schedule; a run only counts as converged when the natural residual of the
returned point, recomputed from scratch, is at most ``tol``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .detector import DetectorStats, q_density, q_function
from .model import (
    Scenario,
    StrategyProfile,
    equi_feasibility_check,
    feasibility_check,
    global_violations,
    interference_plus_noise,
    local_violations,
    miss_probabilities,
    rates,
    throughputs,
)
from .newton import newton_polish
from .projection import InfeasibleSetError, project_capped_simplex
from .vi import (
    InfeasibleScenarioError,
    QneCertificate,
    ViPoint,
    ViProblem,
    certify,
    dual_caps,
    dual_step_scale,
    gradients,
    interior_point,
    lagrangian_all,
)


class Variant(str, enum.Enum):
    INDIVIDUAL = "Individual"
    PRICED = "Priced"
    EQUI_SENSING = "EquiSensing"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for v in cls:
            if v.value.lower() == str(value).lower():
                return v
        raise ValueError(f"unknown variant {value!r}")


class Init(str, enum.Enum):
    INTERIOR = "Interior"
    CUSTOM = "Custom"


@dataclass
class SolveOptions:
    variant: Variant = Variant.PRICED
    tol: float = 1e-6
    max_iters: int = 100_000
    step0: float = 1.0
    step_shrink: float = 0.5
    c0: float = 1.0
    c_growth: float = 4.0
    c_max: float = 4.0**11
    seed: int = 0
    init: Init = Init.INTERIOR
    spread_tol: float = 1e-3
    polish: bool = True
    dual_step: float = 0.5
    custom_init: ViPoint | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.init = Init(self.init)
        if not self.tol > 0:
            raise ValueError("SolveOptions.tol must be positive")
        if not 0 < self.step_shrink < 1:
            raise ValueError("SolveOptions.step_shrink must lie in (0, 1)")
        if not self.c_growth > 1:
            raise ValueError("SolveOptions.c_growth must exceed 1")
        if self.max_iters < 1 or self.step0 <= 0 or self.c0 <= 0:
            raise ValueError("SolveOptions: max_iters, step0 and c0 must be positive")
        if self.init is Init.CUSTOM and self.custom_init is None:
            raise ValueError("SolveOptions: init=Custom needs custom_init")

    @property
    def priced(self):
        return self.variant is not Variant.INDIVIDUAL

    def to_dict(self):
        d = asdict(self)
        d.pop("custom_init")
        d["variant"] = self.variant.value
        d["init"] = self.init.value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k != "custom_init"})


@dataclass
class QneResult:
    z: ViPoint
    certificate: QneCertificate
    iterations: int
    converged: bool
    history: list
    method: str = ""
    newton_attempts: int = 0
    message: str = ""


# ---------------------------------------------------------------------------
# Shared driver pieces

_POLISH_START = 25
_BR_DUAL_FACTOR = 1e-2
_T_SCALE = 1.0


def _t_unit(scenario):
    """Characteristic tau_hat length: curvature of the sensing factor is
    about 1 / (f T) per unit of throughput, so sqrt(f T) / sqrt(2 N) puts it on
    the scale of the power and threshold curvatures."""
    return float(np.sqrt(np.min(scenario.f * scenario.T) / (2 * scenario.N)))


def _polish_due(it, last):
    """Geometric schedule 25, 50, 100, ... of Newton attempts."""
    return it >= _POLISH_START and (last is None or it >= 2 * last)


def _try_polish(problem, v, tol):
    A, b = problem.rows()
    with np.errstate(all="ignore"):
        w, _ = newton_polish(problem.psi, A, b, v, problem.free)
        if not np.all(np.isfinite(w)):
            return None, np.inf
        w = problem.fix(problem.project(w))
        r = problem.residual(w)
    return (w, r) if np.isfinite(r) else (None, np.inf)


def _tighten(problem, v, r, tol, history):
    """One refinement of an already converged point, kept only if it helps."""
    if r <= 1e-3 * tol:
        return v, False
    w, rw = _try_polish(problem, v, tol)
    if w is not None and rw < r:
        history.append(rw)
        return w, True
    return v, False


def _start_vector(problem, scenario, opts):
    z0 = opts.custom_init if opts.init is Init.CUSTOM else interior_point(scenario)
    return problem.fix(problem.project(problem.fix(z0.to_vector())))


def _extragradient(problem, v, opts, history):
    """Run extragradient iterations; returns (v, iterations, method, attempts).

    The iteration runs in coordinates u = v / m (see ``coordinate_scale``):
    the map becomes m * Psi(m u) and the feasible set S / m, whose Euclidean
    projection is the projection onto S in the matching weighted norm.  This
    is the same VI up to a linear change of variables; residuals and the
    stopping test are always evaluated in the original coordinates.
    """
    s = opts.step0
    t_scale = _T_SCALE * _t_unit(problem.scenario)
    m = problem.coordinate_scale(t_scale)

    def F(u):
        return m * problem.psi(m * u)

    def P(u):
        return problem.project(m * u, boxed=True, t_scale=t_scale) / m

    last = None
    attempts = 0
    it = 0
    while it < opts.max_iters:
        r = problem.residual(v)
        history.append(r)
        if r <= opts.tol:
            v, used = _tighten(problem, v, r, opts.tol, history) if opts.polish else (v, False)
            return v, it, "extragradient+newton" if used else "extragradient", attempts + used
        if opts.polish and _polish_due(it, last):
            last = it
            attempts += 1
            w, rw = _try_polish(problem, v, opts.tol)
            if w is not None and rw <= opts.tol:
                history.append(rw)
                return w, it, "extragradient+newton", attempts
        u = v / m
        Fz = F(u)
        while True:
            y = P(u - s * Fz)
            Fy = F(y)
            dz = np.linalg.norm(u - y)
            if s * np.linalg.norm(Fz - Fy) <= 0.9 * dz or dz == 0.0 or s < 1e-14:
                break
            s *= opts.step_shrink
        v = m * P(u - s * Fy)
        # Let the step recover slowly after a shrink.
        s = min(s / opts.step_shrink**0.25, opts.step0)
        it += 1
    return v, it, "extragradient", attempts


def _finish(problem, v, iterations, history, opts, method, attempts, penalty=0.0,
            fixed_tau_hat=None, message=""):
    z = problem.point(v)
    cert = certify(z, problem.scenario, opts.tol, priced=problem.priced, penalty=penalty,
                   fixed_tau_hat=fixed_tau_hat)
    converged = bool(cert.natural_residual <= opts.tol)
    if not converged and not message:
        message = f"natural residual {cert.natural_residual:.3e} above tol after {iterations} iterations"
    return QneResult(z=z, certificate=cert, iterations=iterations, converged=converged,
                     history=history, method=method, newton_attempts=attempts, message=message)


def _problem(scenario, opts, penalty=0.0, fixed_tau_hat=None):
    return ViProblem(scenario, priced=opts.priced, penalty=penalty,
                     fixed_tau_hat=fixed_tau_hat, dual_caps=dual_caps(scenario))


def _check(scenario):
    rep = feasibility_check(scenario)
    if not rep.ok:
        raise InfeasibleScenarioError(
            f"scenario infeasible: min feasibility margin {rep.margin.min():.6g}")


# ---------------------------------------------------------------------------
# Extragradient

def solve_extragradient(scenario: Scenario, opts: SolveOptions | None = None, *,
                        penalty=0.0, fixed_tau_hat=None) -> QneResult:
    """Extragradient on VI(S, Psi) with backtracking and Newton refinement.

    ``penalty`` and ``fixed_tau_hat`` expose the equi-sensing term and frozen
    sensing times used by the continuation and the tau sweeps.
    """
    opts = opts or SolveOptions()
    _check(scenario)
    problem = _problem(scenario, opts, penalty, fixed_tau_hat)
    v = _start_vector(problem, scenario, opts)
    history = []
    v, it, method, attempts = _extragradient(problem, v, opts, history)
    return _finish(problem, v, it, history, opts, method, attempts, penalty, fixed_tau_hat)


# ---------------------------------------------------------------------------
# Best response

def waterfill(F_s, h, noise, price, p_max, budget):
    """argmax_p sum_k F_s_k log(1 + h_k p_k / noise_k) - price_k p_k over the
    capped simplex {0 <= p <= p_max, sum p <= budget}.

    Stationarity gives p_k = clip(F_s_k / (price_k + nu) - noise_k / h_k, 0, p_max)
    with nu >= 0 the budget multiplier, found by bisection.
    """
    floor = noise / h

    def alloc(nu):
        with np.errstate(divide="ignore"):
            level = np.where(price + nu > 0, F_s / np.maximum(price + nu, 1e-300), np.inf)
        return np.clip(level - floor, 0.0, p_max)

    p = alloc(0.0)
    if p.sum() <= budget:
        return p
    lo, hi = 0.0, float(np.max(F_s / floor)) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if alloc(mid).sum() > budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return alloc(hi)


def _threshold_objective(g, F, r, Wp, t, st):
    return F * (1.0 - q_function(g)) * r - Wp * ndtr((st.sigma0 * g - st.delta * t) / st.sigma1)


def _threshold_block(g, t, F, r, Wp, lo, hi, st, tol, max_iter=500):
    """Carrier-wise projected gradient ascent with Armijo backtracking."""
    g = np.clip(g, lo, hi)
    eta = np.ones_like(g)
    for _ in range(max_iter):
        b = (st.sigma0 * g - st.delta * t) / st.sigma1
        grad = F * q_density(g) * r - Wp * q_density(b) * st.sigma0 / st.sigma1
        f0 = _threshold_objective(g, F, r, Wp, t, st)
        eta = np.minimum(eta * 2.0, 1e6)
        for _ in range(60):
            g_new = np.clip(g + eta * grad, lo, hi)
            ok = _threshold_objective(g_new, F, r, Wp, t, st) >= f0 + 1e-4 * grad * (g_new - g)
            if np.all(ok):
                break
            eta = np.where(ok, eta, 0.5 * eta)
        move = np.abs(g_new - g)
        g = g_new
        if np.max(move) <= tol:
            break
    return g


def _player_lagrangian_t(t, q, x, z, scenario, penalty):
    xt = x.copy()
    xt.tau_hat[q] = t
    return lagrangian_all(ViPoint(xt, z.pi, z.lam), scenario, penalty)[q]


def _sensing_block(q, x, z, scenario, penalty, lo, hi, tol, max_iter=300):
    t = float(np.clip(x.tau_hat[q], lo, hi))
    eta = 1.0
    for _ in range(max_iter):
        x.tau_hat[q] = t
        grad = gradients(ViPoint(x, z.pi, z.lam), scenario, penalty)[q, 0]
        f0 = _player_lagrangian_t(t, q, x, z, scenario, penalty)
        eta = min(eta * 2.0, 1e8)
        while True:
            t_new = float(np.clip(t + eta * grad, lo, hi))
            if _player_lagrangian_t(t_new, q, x, z, scenario, penalty) >= \
                    f0 + 1e-4 * grad * (t_new - t) or eta < 1e-12:
                break
            eta *= 0.5
        move = abs(t_new - t)
        t = t_new
        if move <= tol:
            break
    x.tau_hat[q] = t
    return t


def best_response_sweep(z: ViPoint, scenario: Scenario, penalty=0.0, fixed_tau_hat=None,
                        inner_tol=1e-7):
    """One Gauss-Seidel pass over players of the blocks
    (a) power, (b) thresholds, (c) sensing time, with duals held fixed."""
    sc = scenario
    st = sc.stats
    x = z.x.copy()
    W = np.einsum("pq,pqk->qk", z.pi[:, None] + z.lam, sc.w)
    offset = st.sigma1 * sc.alpha_hat / st.sigma0
    slope = st.delta / st.sigma0
    fT = sc.f * sc.T
    for q in range(sc.Q):
        # (a) concave power program for fixed sensing and thresholds.
        F = 1.0 - x.tau_hat[q] ** 2 / fT[q]
        s = 1.0 - q_function(x.gamma_hat[q])
        miss = miss_probabilities(x, sc)[q]
        others = interference_plus_noise(x.p, sc)[q]
        x.p[q] = waterfill(F * s, sc.direct_gain[q], others, W[q] * miss, sc.p_max[q],
                           sc.P_budget[q])
        # (b) thresholds, carrier-separable.
        r = rates(x.p, sc)[q]
        row = _row(st, q)
        x.gamma_hat[q] = _threshold_block(
            x.gamma_hat[q], x.tau_hat[q], F, r, W[q] * x.p[q], sc.beta_hat[q],
            offset[q] + slope[q] * x.tau_hat[q], row, inner_tol)
        # (c) sensing time on the interval keeping the thresholds feasible.
        if fixed_tau_hat is None:
            lo = max(sc.tau_hat_min[q], float(np.max((x.gamma_hat[q] - offset[q]) / slope[q])))
            _sensing_block(q, x, ViPoint(x, z.pi, z.lam), sc, penalty, lo, sc.tau_hat_max[q],
                           inner_tol)
    return ViPoint(x, z.pi.copy(), z.lam.copy())


def _row(st, q):
    return DetectorStats(st.mu0[q], st.mu1[q], st.sigma0[q], st.sigma1[q])


def solve_best_response(scenario: Scenario, opts: SolveOptions | None = None, *,
                        penalty=0.0, fixed_tau_hat=None) -> QneResult:
    """Gauss-Seidel best response in the primal blocks plus projected dual ascent.

    Duals move by pi += s_d * I(x), lambda += s_d * I_q(x), with s_d scaled
    by the inverse of the cap so the update is relative to the constraint
    size; both are clipped to the dual-bound boxes.
    """
    opts = opts or SolveOptions()
    _check(scenario)
    problem = _problem(scenario, opts, penalty, fixed_tau_hat)
    v = _start_vector(problem, scenario, opts)
    z = problem.point(v)
    pi_cap, lam_cap = dual_caps(scenario)
    scale = dual_step_scale(scenario, _BR_DUAL_FACTOR)
    history = []
    last = None
    attempts = 0
    method = "best-response"
    it = 0
    inner = 0.1 * opts.tol
    while it < opts.max_iters:
        r = problem.residual(v)
        history.append(r)
        if r <= opts.tol:
            if opts.polish:
                v, used = _tighten(problem, v, r, opts.tol, history)
                attempts += used
                method = "best-response+newton" if used else method
            break
        if opts.polish and _polish_due(it, last):
            last = it
            attempts += 1
            w, rw = _try_polish(problem, v, opts.tol)
            if w is not None and rw <= opts.tol:
                v = w
                history.append(rw)
                method = "best-response+newton"
                break
        z = best_response_sweep(z, scenario, penalty, problem.fixed_tau_hat, inner)
        glob = global_violations(z.x, scenario)
        loc = local_violations(z.x, scenario)
        if opts.priced:
            z.pi = np.minimum(np.maximum(0.0, z.pi + opts.dual_step * scale[0] * glob), pi_cap)
        z.lam = np.minimum(np.maximum(0.0, z.lam + opts.dual_step * scale[1] * loc), lam_cap)
        v = problem.fix(problem.project(z.to_vector()))
        z = problem.point(v)
        it += 1
    return _finish(problem, v, it, history, opts, method, attempts, penalty,
                   problem.fixed_tau_hat)


# ---------------------------------------------------------------------------
# Equi-sensing continuation

def sensing_spread(x: StrategyProfile, scenario: Scenario):
    """Relative spread max_q |sqrt(tau_q) - mean| / mean of sqrt(tau_q)."""
    scaled = x.tau_hat / np.sqrt(scenario.f)
    mean = scaled.mean()
    return float(np.max(np.abs(scaled - mean)) / mean)


@dataclass
class EquiSensingResult:
    results: list
    tau_star: float
    spreads: list
    penalties: list
    converged: bool
    message: str = ""

    @property
    def final(self) -> QneResult:
        return self.results[-1]


def solve_equi_sensing(scenario: Scenario, opts: SolveOptions | None = None,
                       solver=None) -> EquiSensingResult:
    """Penalty continuation c = c0, c0 g, ... <= c_max, each stage warm-started."""
    opts = opts or SolveOptions(variant=Variant.EQUI_SENSING)
    _check(scenario)
    eq = equi_feasibility_check(scenario)
    if not eq.feasible:
        raise InfeasibleScenarioError("no common sensing time is feasible for all players")
    solver = solver or solve_extragradient
    stage_opts = SolveOptions(**{**opts.to_dict(), "variant": Variant.EQUI_SENSING})
    results, spreads, penalties = [], [], []
    c = opts.c0
    z = None
    ok = True
    while c <= opts.c_max * (1 + 1e-12):
        if z is not None:
            stage_opts = SolveOptions(**{**stage_opts.to_dict(), "init": Init.CUSTOM},
                                      custom_init=z)
        res = solver(scenario, stage_opts, penalty=c)
        results.append(res)
        penalties.append(c)
        spreads.append(sensing_spread(res.z.x, scenario))
        ok = ok and res.converged
        z = res.z
        c *= opts.c_growth
    final = results[-1].z.x
    tau_star = float(np.mean(final.tau_hat / np.sqrt(scenario.f)) ** 2)
    msg = ""
    if not ok:
        msg = "a continuation stage did not converge"
    elif spreads[-1] > opts.spread_tol:
        msg = f"spread {spreads[-1]:.3e} above {opts.spread_tol:g} at c_max"
    return EquiSensingResult(results=results, tau_star=tau_star, spreads=spreads,
                             penalties=penalties, converged=ok and spreads[-1] <= opts.spread_tol,
                             message=msg)


# ---------------------------------------------------------------------------
# Common sensing-time oracle

def common_tau_interval(scenario: Scenario, x: StrategyProfile | None = None):
    """Common tau values admissible for every player, optionally also keeping
    the given thresholds inside their miss bounds."""
    eq = equi_feasibility_check(scenario)
    low, high = eq.tau_low, eq.tau_high
    if x is not None:
        st = scenario.stats
        need = (st.sigma0 * x.gamma_hat - st.sigma1 * scenario.alpha_hat) / st.delta
        need = np.maximum(need.max(axis=1), 0.0)
        low = max(low, float(np.max(need**2 / scenario.f)))
    if low > high:
        raise InfeasibleSetError("common_tau: admissible interval is empty")
    return low, high


def common_tau_objective(tau, scenario: Scenario, x: StrategyProfile, pi):
    """sum_q R_q(sqrt(f_q tau), p, gamma_hat) - pi . I(...)."""
    xt = x.copy()
    xt.tau_hat = np.sqrt(scenario.f * tau)
    return float(np.sum(throughputs(xt, scenario)) - np.asarray(pi) @ global_violations(xt, scenario))


def common_tau_oracle(scenario: Scenario, x_inf: StrategyProfile, pi_inf, tau_grid=None,
                      width=1e-6):
    """Maximize the common-tau objective: grid scan, then golden section on the
    bracket around the best grid point until the bracket is narrower than
    ``width`` relative to the interval.  Ties resolve to the smallest tau."""
    low, high = common_tau_interval(scenario, x_inf)
    if tau_grid is None:
        tau_grid = np.linspace(low, high, 201)
    grid = np.asarray(tau_grid, dtype=float)
    grid = np.unique(np.clip(grid, low, high))
    vals = np.array([common_tau_objective(t, scenario, x_inf, pi_inf) for t in grid])
    j = int(np.argmax(vals))  # first maximizer = smallest tau
    if np.all(vals == vals[j]):
        return float(grid[0])
    a = grid[max(j - 1, 0)]
    b = grid[min(j + 1, len(grid) - 1)]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc = common_tau_objective(c, scenario, x_inf, pi_inf)
    fd = common_tau_objective(d, scenario, x_inf, pi_inf)
    stop = width * max(high - low, 1e-300)
    while b - a > stop:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = common_tau_objective(c, scenario, x_inf, pi_inf)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = common_tau_objective(d, scenario, x_inf, pi_inf)
    best = 0.5 * (a + b)
    # Never return something worse than the grid winner.
    if common_tau_objective(best, scenario, x_inf, pi_inf) < vals[j]:
        return float(grid[j])
    return float(best)


# ---------------------------------------------------------------------------
# Deterministic-constraint baseline

@dataclass
class BaselineProblem:
    """Power-only game: rates over the full frame, deterministic caps
    sum_k w p <= I_q_max (multipliers lambda) and, when priced, the shared cap
    sum_q sum_k w p <= I_max (price pi).

    Vector layout: [p_1, ..., p_Q, pi, lambda (P x Q row-major)].
    """

    scenario: Scenario
    priced: bool = True
    dual_caps: tuple | None = None
    # The reference multiplier assumes miss = 1 here, hence the larger factor.
    dual_factor: float = 1.0
    # Solve with zero-cap carriers removed; certify with it off.
    pin_zero_caps: bool = False
    _rows: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        sc = self.scenario
        self.nx = sc.Q * sc.N
        self.n = self.nx + sc.P + sc.P * sc.Q
        self.free = np.ones(self.n, dtype=bool)
        if not self.priced:
            self.free[self.nx:self.nx + sc.P] = False
        # A zero cap with a positive weight forces that power to zero.
        zero = (sc.I_q_max[:, :, None] == 0.0) & (sc.w > 0)
        if self.priced:
            zero |= (sc.I_max[:, None, None] == 0.0) & (sc.w > 0)
        self.pinned = zero.any(axis=0) & self.pin_zero_caps
        self.p_cap = np.where(self.pinned, 0.0, sc.p_max)

    def unpack(self, v):
        sc = self.scenario
        p = v[:self.nx].reshape(sc.Q, sc.N)
        pi = v[self.nx:self.nx + sc.P]
        lam = v[self.nx + sc.P:].reshape(sc.P, sc.Q)
        return p, pi, lam

    def violations(self, p):
        sc = self.scenario
        terms = sc.w * p[None]
        return terms.sum(axis=(1, 2)) - sc.I_max, terms.sum(axis=2) - sc.I_q_max

    def gradient(self, v):
        sc = self.scenario
        p, pi, lam = self.unpack(v)
        total = interference_plus_noise(p, sc) + sc.direct_gain * p
        W = np.einsum("pq,pqk->qk", pi[:, None] + lam, sc.w)
        return sc.direct_gain / total - W

    def psi(self, v):
        glob, loc = self.violations(self.unpack(v)[0])
        return np.concatenate((-self.gradient(v).ravel(), -glob, -loc.ravel()))

    def project(self, v, boxed=False, t_scale=1.0):
        # No sensing coordinates here; t_scale is accepted for interface parity.
        sc = self.scenario
        out = np.empty(self.n)
        p = np.asarray(v[:self.nx], dtype=float).reshape(sc.Q, sc.N)
        out[:self.nx] = project_capped_simplex(p, self.p_cap, sc.P_budget).ravel()
        duals = np.maximum(v[self.nx:], 0.0)
        if not self.priced:
            duals[:sc.P] = 0.0
        if boxed and self.dual_caps is not None:
            duals = np.minimum(duals, np.concatenate([np.ravel(c) for c in self.dual_caps]))
        out[self.nx:] = duals
        return out

    def fix(self, v):
        v = np.array(v, dtype=float)
        if not self.priced:
            v[self.nx:self.nx + self.scenario.P] = 0.0
        return v

    def coordinate_scale(self, t_scale):
        m = np.ones(self.n)
        m[self.nx:] = np.sqrt(self.step_scale(self.dual_factor)[self.nx:])
        return m

    def step_scale(self, factor=1e-2):
        d = np.ones(self.n)
        pi_s, lam_s = dual_step_scale(self.scenario, factor, miss=1.0)
        d[self.nx:self.nx + self.scenario.P] = pi_s
        d[self.nx + self.scenario.P:] = lam_s.ravel()
        return d

    def residual(self, v, step=1.0):
        return float(np.linalg.norm(v - self.project(v - step * self.psi(v))))

    def rows(self):
        if self._rows is None:
            sc = self.scenario
            N = sc.N
            As, bs = [], []
            for q in range(sc.Q):
                A = np.zeros((2 * N + 1, self.n))
                cols = q * N + np.arange(N)
                A[np.arange(N), cols] = -1.0
                A[N + np.arange(N), cols] = 1.0
                A[2 * N, cols] = 1.0
                As.append(A)
                bs.append(np.concatenate((np.zeros(N), self.p_cap[q], [sc.P_budget[q]])))
            nd = self.n - self.nx
            Ad = np.zeros((nd, self.n))
            Ad[:, self.nx:] = -np.eye(nd)
            As.append(Ad)
            bs.append(np.zeros(nd))
            self._rows = (np.vstack(As), np.concatenate(bs))
        return self._rows


@dataclass
class BaselineResult:
    p: np.ndarray
    pi: np.ndarray
    lam: np.ndarray
    certificate: QneCertificate
    iterations: int
    converged: bool
    history: list
    method: str = ""
    message: str = ""

    def sum_rate(self, scenario):
        return float(np.sum(rates(self.p, scenario)))


def certify_baseline(problem: BaselineProblem, v, tol) -> QneCertificate:
    """Certificate of the deterministic game (miss probabilities set to one).

    The level-set dual bound does not apply to this game; its check is
    reported as passed with an infinite bound.
    """
    sc = problem.scenario
    p, pi, lam = problem.unpack(v)
    grad = problem.gradient(v)
    stat = np.linalg.norm(p - project_capped_simplex(p + grad, sc.p_max, sc.P_budget), axis=1)
    glob, loc = problem.violations(p)
    price_product = pi * np.abs(glob)
    local_product = np.max(lam * np.abs(loc), axis=0)
    A, b = problem.rows()
    slacks = [float(np.min(b - A @ v)), float(np.min(-loc))]
    if problem.priced:
        slacks.append(float(np.min(-glob)))
    return QneCertificate(
        natural_residual=problem.residual(v),
        stationarity_residual=stat,
        price_compl=np.maximum(price_product, np.maximum(glob, 0.0)),
        local_compl=np.maximum(local_product, np.max(np.maximum(loc, 0.0), axis=0)),
        price_product=price_product,
        local_product=local_product,
        min_slack=min(slacks),
        nontrivial=bool(np.sum(np.abs(p)) > tol),
        dual_bound_ok=True,
        dual_lhs=float(np.sum(lam * sc.I_q_max) + pi @ sc.I_max),
        dual_bound=math.inf,
        priced=problem.priced,
    )


def _lift_pinned_multipliers(problem: BaselineProblem, v):
    """Raise the zero-cap multipliers until the pinned powers are stationary.

    On a pinned carrier the rate gradient must be offset by the weighted
    multipliers; the smallest sufficient value is a closed form, so the
    solver never has to push those multipliers up by small dual steps.
    """
    sc = problem.scenario
    v = v.copy()
    p, pi, lam = problem.unpack(v)
    pi, lam = pi.copy(), lam.copy()
    for q, k in zip(*np.nonzero(problem.pinned)):
        excess = (sc.direct_gain / (interference_plus_noise(p, sc) + sc.direct_gain * p))[q, k]
        excess -= np.sum((pi + lam[:, q]) * sc.w[:, q, k])
        if excess <= 0.0:
            continue
        zero_loc = np.flatnonzero((sc.I_q_max[:, q] == 0.0) & (sc.w[:, q, k] > 0))
        if zero_loc.size:
            r = zero_loc[0]
            lam[r, q] += excess / sc.w[r, q, k]
        else:
            r = np.flatnonzero((sc.I_max == 0.0) & (sc.w[:, q, k] > 0))[0]
            pi[r] += excess / sc.w[r, q, k]
    v[problem.nx:problem.nx + sc.P] = pi
    v[problem.nx + sc.P:] = lam.ravel()
    return v


def solve_baseline_deterministic(scenario: Scenario, opts: SolveOptions | None = None
                                 ) -> BaselineResult:
    """NE of the no-sensing power game by the extragradient driver."""
    opts = opts or SolveOptions()
    problem = BaselineProblem(scenario, priced=opts.priced, pin_zero_caps=True)
    sc = scenario
    p0 = np.minimum(np.repeat(sc.P_budget[:, None] / (2 * sc.N), sc.N, axis=1), sc.p_max)
    p0 = np.minimum(p0, problem.p_cap)
    v = problem.fix(np.concatenate((p0.ravel(), np.zeros(sc.P + sc.P * sc.Q))))
    v = problem.project(v)
    history = []
    v, it, method, _ = _extragradient(problem, v, opts, history)
    if problem.pinned.any():
        v = _lift_pinned_multipliers(problem, v)
        problem = BaselineProblem(scenario, priced=opts.priced)
    cert = certify_baseline(problem, v, opts.tol)
    p, pi, lam = problem.unpack(v)
    converged = bool(cert.natural_residual <= opts.tol)
    msg = "" if converged else f"natural residual {cert.natural_residual:.3e} above tol"
    return BaselineResult(p=p.copy(), pi=pi.copy(), lam=lam.copy(), certificate=cert,
                          iterations=it, converged=converged, history=history, method=method,
                          message=msg)
