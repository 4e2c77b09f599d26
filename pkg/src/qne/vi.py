"""The variational inequality VI(S, Psi) whose solutions are the QNE of the game.

A VI point z = (x, pi, lambda) is flattened as

    [x_1, ..., x_Q, pi_1..pi_P, lambda_{1,1}..lambda_{P,Q}]

with x_q = [tau_hat_q, p_q, gamma_hat_q] and lambda stored row-major (P, Q).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detector import detection_argument, q_density, q_function
from .model import (
    Scenario,
    StrategyProfile,
    feasibility_check,
    global_violations,
    interference_plus_noise,
    local_violations,
    miss_probabilities,
    polyhedron_matrix,
    rates,
    sensing_factor,
    throughputs,
)
from .projection import (
    InfeasibleSetError,
    dykstra,
    project_capped_simplex,
    project_sensing_block,
)


class InfeasibleScenarioError(InfeasibleSetError):
    pass


@dataclass
class ViPoint:
    x: StrategyProfile
    pi: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)

    def to_vector(self):
        x = self.x
        blocks = np.concatenate((x.tau_hat[:, None], x.p, x.gamma_hat), axis=1)
        return np.concatenate((blocks.ravel(), self.pi.ravel(), self.lam.ravel()))

    @classmethod
    def from_vector(cls, v, scenario: Scenario):
        Q, N, P = scenario.Q, scenario.N, scenario.P
        nx = Q * (2 * N + 1)
        v = np.asarray(v, dtype=float)
        blocks = v[:nx].reshape(Q, 2 * N + 1)
        x = StrategyProfile(blocks[:, 0].copy(), blocks[:, 1:N + 1].copy(),
                            blocks[:, N + 1:].copy())
        return cls(x, v[nx:nx + P].copy(), v[nx + P:].reshape(P, Q).copy())

    def copy(self):
        return ViPoint(self.x.copy(), self.pi.copy(), self.lam.copy())


def interior_point(scenario: Scenario) -> ViPoint:
    """Default starting point: uniform power at half budget, thresholds just
    above their lower bound, sensing at the middle of the box, zero duals.

    Thresholds and sensing are projected onto Y_q afterwards so the point is
    feasible even when the middle of the tau box is too short to sense.
    """
    Q, N, P = scenario.Q, scenario.N, scenario.P
    p = np.minimum(np.repeat(scenario.P_budget[:, None] / (2 * N), N, axis=1), scenario.p_max)
    t = 0.5 * (scenario.tau_hat_min + scenario.tau_hat_max)
    g = scenario.beta_hat + 0.1
    z = ViPoint(StrategyProfile(t, p, g), np.zeros(P), np.zeros((P, Q)))
    return project_S(z, scenario)


# ---------------------------------------------------------------------------
# Lagrangian and its gradient

def _equi_deviation(tau_hat, scenario: Scenario):
    scaled = tau_hat / np.sqrt(scenario.f)
    return scaled - scaled.mean()


def lagrangian_all(z: ViPoint, scenario: Scenario, penalty=0.0):
    """L_q for every player, shape (Q,)."""
    th = throughputs(z.x, scenario)
    glob = global_violations(z.x, scenario)
    loc = local_violations(z.x, scenario)
    out = th - float(z.pi @ glob) - np.einsum("pq,pq->q", z.lam, loc)
    if penalty:
        out = out - 0.5 * penalty * _equi_deviation(z.x.tau_hat, scenario) ** 2
    return out


def lagrangian(z: ViPoint, scenario: Scenario, q, penalty=0.0):
    return float(lagrangian_all(z, scenario, penalty)[q])


def gradients(z: ViPoint, scenario: Scenario, penalty=0.0):
    """Gradient of L_q w.r.t. x_q for all players, shape (Q, 2N + 1)."""
    x = z.x
    stats = scenario.stats
    t = x.tau_hat[:, None]
    g, p = x.gamma_hat, x.p
    fT = (scenario.f * scenario.T)[:, None]
    F = 1.0 - t**2 / fT
    s = 1.0 - q_function(g)
    r = rates(p, scenario)
    b = detection_argument(g, t, stats)
    miss = miss_probabilities(x, scenario)
    dens_b = q_density(b)
    # Combined price seen by each (q, k): sum_p (pi_p + lambda_pq) w_pqk.
    W = np.einsum("pq,pqk->qk", z.pi[:, None] + z.lam, scenario.w)
    total = interference_plus_noise(p, scenario) + scenario.direct_gain * p

    d_t = -(2.0 * t[:, 0] / fT[:, 0]) * np.sum(s * r, axis=1) \
        + np.sum(W * p * dens_b * stats.delta / stats.sigma1, axis=1)
    d_p = F * s * scenario.direct_gain / total - W * miss
    d_g = F * q_density(g) * r - W * p * dens_b * stats.sigma0 / stats.sigma1
    if penalty:
        Q = scenario.Q
        d_t = d_t - penalty * _equi_deviation(x.tau_hat, scenario) * (1.0 - 1.0 / Q) \
            / np.sqrt(scenario.f)
    return np.concatenate((d_t[:, None], d_p, d_g), axis=1)


def lagrangian_gradient(z: ViPoint, scenario: Scenario, q, penalty=0.0):
    return gradients(z, scenario, penalty)[q]


def psi_map(z: ViPoint, scenario: Scenario, penalty=0.0):
    """Stacked map [-grad L_q ; -I^(p) ; -I_q^(p)]."""
    grad = gradients(z, scenario, penalty)
    return np.concatenate((
        -grad.ravel(),
        -global_violations(z.x, scenario),
        -local_violations(z.x, scenario).ravel(),
    ))


# ---------------------------------------------------------------------------
# Projection onto S

def _require_feasible(scenario: Scenario):
    rep = feasibility_check(scenario)
    if not rep.ok:
        raise InfeasibleScenarioError(
            f"Y_q empty for {int(np.count_nonzero(~rep.feasible))} (q, k) pairs; "
            f"min margin {rep.margin.min():.6g}")


def _sensing_params(scenario: Scenario):
    s = scenario.stats
    offset = s.sigma1 * scenario.alpha_hat / s.sigma0
    slope = s.delta / s.sigma0
    return offset, slope


def project_players(blocks, scenario: Scenario, fixed_tau_hat=None, t_scale=1.0):
    """Exact projection of each row of ``blocks`` (Q, 2N+1) onto Y_q.

    With ``fixed_tau_hat`` the tau_hat components are held at the given values
    and only (p, gamma_hat) are projected onto the corresponding slice.
    ``t_scale`` = k measures tau_hat distances in units of k, i.e. projects in
    the norm (dt / k)^2 + |dp|^2 + |dg|^2; k = 1 is the Euclidean projection.
    """
    N = scenario.N
    blocks = np.asarray(blocks, dtype=float)
    out = np.empty_like(blocks)
    out[:, 1:N + 1] = project_capped_simplex(blocks[:, 1:N + 1], scenario.p_max,
                                             scenario.P_budget)
    offset, slope = _sensing_params(scenario)
    if fixed_tau_hat is None:
        k = t_scale
        t, g = project_sensing_block(blocks[:, 0] / k, blocks[:, N + 1:], scenario.tau_hat_min / k,
                                     scenario.tau_hat_max / k, scenario.beta_hat, offset,
                                     slope * k)
        t = t * k
    else:
        t = np.asarray(fixed_tau_hat, dtype=float)
        upper = offset + slope * t[:, None]
        if np.any(upper < scenario.beta_hat):
            raise InfeasibleSetError("fixed tau_hat leaves an empty threshold interval")
        g = np.clip(blocks[:, N + 1:], scenario.beta_hat, upper)
    out[:, 0] = t
    out[:, N + 1:] = g
    return out


def project_S(z: ViPoint, scenario: Scenario, tol=1e-10, method="exact"):
    """Euclidean projection onto prod Y_q x R_+^P x R_+^(P x Q).

    ``method="exact"`` uses the closed-form block projections,
    ``method="dykstra"`` runs Dykstra's algorithm over the half-space list.
    """
    if tol <= 0:
        raise ValueError("project_S: tol must be positive")
    _require_feasible(scenario)
    v = z.to_vector()
    Q, N = scenario.Q, scenario.N
    nx = Q * (2 * N + 1)
    blocks = v[:nx].reshape(Q, 2 * N + 1)
    if method == "exact":
        proj = project_players(blocks, scenario)
    elif method == "dykstra":
        proj = np.empty_like(blocks)
        for q in range(Q):
            A, b = polyhedron_matrix(scenario, q)
            proj[q] = dykstra(blocks[q], A, b, tol=tol)
    else:
        raise ValueError(f"project_S: unknown method {method!r}")
    out = np.concatenate((proj.ravel(), np.maximum(v[nx:], 0.0)))
    return ViPoint.from_vector(out, scenario)


# ---------------------------------------------------------------------------
# The problem object used by the solvers

@dataclass
class ViProblem:
    """VI(S, Psi) with optional frozen coordinates.

    ``priced=False`` freezes pi at zero (the individual-constraint game);
    ``fixed_tau_hat`` freezes sensing times; ``penalty`` adds the equi-sensing
    term.  ``dual_caps`` (pi caps, lambda caps) optionally boxes the duals for
    the iterates; the residual itself is always taken over the unboxed set.
    """

    scenario: Scenario
    priced: bool = True
    penalty: float = 0.0
    fixed_tau_hat: np.ndarray | None = None
    dual_caps: tuple | None = None
    dual_factor: float = 0.1
    _rows: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        _require_feasible(self.scenario)
        sc = self.scenario
        Q, N, P = sc.Q, sc.N, sc.P
        self.d = 2 * N + 1
        self.nx = Q * self.d
        self.n = self.nx + P + P * Q
        free = np.ones(self.n, dtype=bool)
        if self.fixed_tau_hat is not None:
            self.fixed_tau_hat = np.asarray(self.fixed_tau_hat, dtype=float)
            free[np.arange(Q) * self.d] = False
        if not self.priced:
            free[self.nx:self.nx + P] = False
        self.free = free

    # -- maps -------------------------------------------------------------
    def point(self, v) -> ViPoint:
        return ViPoint.from_vector(v, self.scenario)

    def psi(self, v):
        return psi_map(self.point(v), self.scenario, self.penalty)

    def project(self, v, boxed=False, t_scale=1.0):
        sc = self.scenario
        v = np.asarray(v, dtype=float)
        blocks = v[:self.nx].reshape(sc.Q, self.d)
        out = np.empty(self.n)
        out[:self.nx] = project_players(blocks, sc, self.fixed_tau_hat, t_scale).ravel()
        duals = np.maximum(v[self.nx:], 0.0)
        if not self.priced:
            duals[:sc.P] = 0.0
        if boxed and self.dual_caps is not None:
            caps = np.concatenate((np.ravel(self.dual_caps[0]), np.ravel(self.dual_caps[1])))
            duals = np.minimum(duals, caps)
        out[self.nx:] = duals
        return out

    def natural_map(self, v, step=1.0):
        return v - self.project(v - step * self.psi(v))

    def residual(self, v, step=1.0):
        return float(np.linalg.norm(self.natural_map(v, step)))

    def coordinate_scale(self, t_scale):
        """Diagonal M of the change of variables v = M u used by the iterations."""
        m = np.ones(self.n)
        m[np.arange(self.scenario.Q) * self.d] = t_scale
        m[self.nx:] = np.sqrt(self.step_scale(self.dual_factor)[self.nx:])
        return m

    def step_scale(self, factor=1e-2):
        """Positive block-constant weights D for iterating on D * Psi.

        S is a product of the Y_q, the price half-line and the multiplier
        orthant, so scaling each factor's block of Psi by a positive constant
        leaves the solution set unchanged.  The dual blocks get the ratio of a
        typical marginal rate to a typical marginal interference, divided by
        the cap, so a cap-sized violation moves a multiplier by about its
        natural size.
        """
        d = np.ones(self.n)
        pi_s, lam_s = dual_step_scale(self.scenario, factor)
        d[self.nx:self.nx + self.scenario.P] = pi_s
        d[self.nx + self.scenario.P:] = lam_s.ravel()
        return d

    # -- explicit constraint rows A z <= b over the full vector ------------
    def rows(self):
        if self._rows is None:
            sc = self.scenario
            blocks_A, blocks_b = [], []
            for q in range(sc.Q):
                A, b = polyhedron_matrix(sc, q, implied=False)
                Af = np.zeros((A.shape[0], self.n))
                Af[:, q * self.d:(q + 1) * self.d] = A
                blocks_A.append(Af)
                blocks_b.append(b)
            nd = self.n - self.nx
            Ad = np.zeros((nd, self.n))
            Ad[:, self.nx:] = -np.eye(nd)
            blocks_A.append(Ad)
            blocks_b.append(np.zeros(nd))
            self._rows = (np.vstack(blocks_A), np.concatenate(blocks_b))
        return self._rows

    def fix(self, v):
        """Overwrite frozen coordinates with their frozen values."""
        v = np.array(v, dtype=float)
        if self.fixed_tau_hat is not None:
            v[np.arange(self.scenario.Q) * self.d] = self.fixed_tau_hat
        if not self.priced:
            v[self.nx:self.nx + self.scenario.P] = 0.0
        return v


def dual_step_scale(scenario: Scenario, factor=1e-2, miss=None):
    sc = scenario
    marginal = float(np.median(sc.direct_gain / sc.noise_var))
    miss = float(np.mean(sc.alpha)) if miss is None else miss
    lam_ref = marginal / (float(np.mean(sc.w)) * miss)
    s_pi = factor * lam_ref / np.where(sc.I_max > 0, sc.I_max, 1.0)
    s_lam = factor * lam_ref / np.where(sc.I_q_max > 0, sc.I_q_max, 1.0)
    return s_pi, s_lam


def natural_residual(z: ViPoint, scenario: Scenario, step=1.0, *, priced=True, penalty=0.0,
                     fixed_tau_hat=None):
    """||z - Pi_S(z - step Psi(z))|| over the non-frozen coordinates."""
    if step <= 0:
        raise ValueError("natural_residual: step must be positive")
    prob = ViProblem(scenario, priced=priced, penalty=penalty, fixed_tau_hat=fixed_tau_hat)
    v = prob.fix(z.to_vector())
    return prob.residual(v, step)


# ---------------------------------------------------------------------------
# Dual bound

def dual_bound(scenario: Scenario):
    """Level-set bound B on sum_q lambda_q I_q^max + pi I^max.

    Evaluates the closed-form bound term by term, summed over players
    and carriers.  See :func:`dual_bound_safeguard` for the version used to box
    the dual iterates.
    """
    _require_feasible(scenario)
    th_min = scenario.tau_hat_min[:, None]
    th_max = scenario.tau_hat_max[:, None]
    fT = (scenario.f * scenario.T)[:, None]
    bracket = 2.0 * th_max * (th_max - th_min) / fT \
        + (1.0 - th_min**2 / fT) * (scenario.gamma_hat_max - scenario.beta_hat) \
        / math.sqrt(2.0 * math.pi)
    log_term = np.log1p(scenario.direct_gain * scenario.p_max / scenario.noise_var)
    return float(np.sum(bracket * log_term))


def dual_bound_safeguard(scenario: Scenario):
    """B plus the own-power term sum (1 - tau_hat^2/fT)(1-Q) h p / (sigma^2 + ...).

    Moving to the reference point with zero power also changes the rate term
    linearly in p; that contribution is nonpositive on the side of the
    inequality it appears on, so it cannot be dropped when bounding the
    multipliers.  It is at most sum h p_max / (sigma^2 + h p_max).
    """
    snr = scenario.direct_gain * scenario.p_max / scenario.noise_var
    return dual_bound(scenario) + float(np.sum(snr / (1.0 + snr)))


def dual_caps(scenario: Scenario, bound=None):
    """Boxes pi_p <= B / I_max[p], lambda_pq <= B / I_q_max[p, q] (inf for zero caps)."""
    B = dual_bound_safeguard(scenario) if bound is None else bound
    with np.errstate(divide="ignore"):
        pi_cap = np.where(scenario.I_max > 0, B / scenario.I_max, np.inf)
        lam_cap = np.where(scenario.I_q_max > 0, B / scenario.I_q_max, np.inf)
    return pi_cap, lam_cap


def dual_lhs(z: ViPoint, scenario: Scenario):
    return float(np.sum(z.lam * scenario.I_q_max) + z.pi @ scenario.I_max)


# ---------------------------------------------------------------------------
# Certificate

@dataclass
class QneCertificate:
    natural_residual: float
    stationarity_residual: np.ndarray
    price_compl: np.ndarray
    local_compl: np.ndarray
    price_product: np.ndarray
    local_product: np.ndarray
    min_slack: float
    nontrivial: bool
    dual_bound_ok: bool
    dual_lhs: float
    dual_bound: float
    priced: bool = True

    def passes(self, tol):
        ok = (self.natural_residual <= tol
              and np.all(self.local_product <= tol)
              and self.min_slack >= -tol
              and self.nontrivial and self.dual_bound_ok)
        if self.priced:
            ok = ok and np.all(self.price_product <= tol)
        return bool(ok)

    def failures(self, tol):
        out = []
        if self.natural_residual > tol:
            out.append("natural_residual")
        if self.priced and np.any(self.price_product > tol):
            out.append("price_complementarity")
        if np.any(self.local_product > tol):
            out.append("local_complementarity")
        if self.min_slack < -tol:
            out.append("feasibility")
        if not self.nontrivial:
            out.append("trivial")
        if not self.dual_bound_ok:
            out.append("dual_bound")
        return out

    def to_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        for k in ("stationarity_residual", "price_compl", "local_compl", "price_product",
                  "local_product"):
            kw[k] = np.asarray(kw[k], dtype=float)
        return cls(**kw)


def certify(z: ViPoint, scenario: Scenario, tol, *, priced=True, penalty=0.0,
            fixed_tau_hat=None, bound="closed-form") -> QneCertificate:
    """KKT certificate of a candidate QNE.

    ``bound`` selects the dual-bound check: ``"closed-form"`` compares against
    :func:`dual_bound`, ``"safeguard"`` against :func:`dual_bound_safeguard`.
    """
    if tol <= 0:
        raise ValueError("certify: tol must be positive")
    prob = ViProblem(scenario, priced=priced, penalty=penalty, fixed_tau_hat=fixed_tau_hat)
    v = prob.fix(z.to_vector())
    z = prob.point(v)
    sc = scenario
    grad = gradients(z, sc, penalty)
    blocks = v[:prob.nx].reshape(sc.Q, prob.d)
    stat = np.linalg.norm(blocks - project_players(blocks + grad, sc, prob.fixed_tau_hat), axis=1)

    glob = global_violations(z.x, sc)
    loc = local_violations(z.x, sc)
    price_product = z.pi * np.abs(glob)
    local_product = np.max(z.lam * np.abs(loc), axis=0)
    price_compl = np.maximum(price_product, np.maximum(glob, 0.0))
    local_compl = np.maximum(local_product, np.max(np.maximum(loc, 0.0), axis=0))

    # Feasibility slack: Y_q rows and the enforced interference constraints.
    A, b = prob.rows()
    live = np.any(A[:, prob.free] != 0.0, axis=1)
    slacks = [float(np.min((b - A @ v)[live])), float(np.min(-loc))]
    if priced:
        slacks.append(float(np.min(-glob)))
    min_slack = float(min(slacks))

    B = dual_bound(sc) if bound == "closed-form" else dual_bound_safeguard(sc)
    lhs = dual_lhs(z, sc)
    return QneCertificate(
        natural_residual=prob.residual(v),
        stationarity_residual=stat,
        price_compl=price_compl,
        local_compl=local_compl,
        price_product=price_product,
        local_product=local_product,
        min_slack=min_slack,
        nontrivial=bool(np.sum(np.abs(z.x.p)) > tol),
        dual_bound_ok=bool(lhs <= B + tol),
        dual_lhs=lhs,
        dual_bound=B,
        priced=priced,
    )
