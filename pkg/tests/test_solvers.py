import numpy as np
import pytest
from scipy.optimize import minimize

from qne.detector import q_function
from qne.model import (
    StrategyProfile,
    equi_feasibility_check,
    generate_scenario,
    rates,
    throughputs,
)
from qne.projection import InfeasibleSetError, project_capped_simplex
from qne.solvers import (
    Init,
    SolveOptions,
    Variant,
    best_response_sweep,
    common_tau_interval,
    common_tau_objective,
    common_tau_oracle,
    sensing_spread,
    solve_baseline_deterministic,
    solve_best_response,
    solve_equi_sensing,
    solve_extragradient,
    waterfill,
)
from qne.vi import ViPoint, certify

FAST = dict(max_iters=3000)


@pytest.fixture(scope="module")
def sc():
    return generate_scenario(5)


@pytest.fixture(scope="module")
def eg_priced(sc):
    return solve_extragradient(sc, SolveOptions(**FAST))


def test_options_validation_and_round_trip():
    for bad in (dict(tol=0), dict(step_shrink=1.0), dict(c_growth=1.0), dict(max_iters=0),
                dict(init="Custom")):
        with pytest.raises(ValueError):
            SolveOptions(**bad)
    o = SolveOptions(variant="individual", tol=1e-7, seed=3)
    assert SolveOptions.from_dict(o.to_dict()) == o
    assert Variant.parse("EquiSensing") is Variant.EQUI_SENSING
    with pytest.raises(ValueError):
        Variant.parse("nope")


def test_waterfill_matches_convex_solver():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n = 6
        F = rng.uniform(0.3, 1.0, n)
        h = rng.uniform(0.1, 3.0, n)
        noise = rng.uniform(0.01, 0.5, n)
        price = rng.uniform(0.0, 2.0, n)
        pmax = rng.uniform(0.1, 1.0, n)
        budget = rng.uniform(0.2, 2.0)
        got = waterfill(F, h, noise, price, pmax, budget)

        def neg(p):
            return -np.sum(F * np.log1p(h * p / noise) - price * p)

        ref = minimize(neg, np.full(n, min(budget / n, pmax.min()) / 2), method="SLSQP",
                       bounds=[(0, u) for u in pmax],
                       constraints=[{"type": "ineq", "fun": lambda p: budget - p.sum()}],
                       options={"ftol": 1e-14, "maxiter": 500}).x
        assert neg(got) <= neg(ref) + 1e-9
        assert np.allclose(got, ref, atol=1e-5)


def test_power_block_matches_projected_gradient(sc, eg_priced):
    # Long-run projected gradient on player 0's concave power program.
    z = eg_priced.z
    x = z.x
    q = 0
    F = 1 - x.tau_hat[q] ** 2 / (sc.f[q] * sc.T[q])
    s = 1 - q_function(x.gamma_hat[q])
    W = np.einsum("pq,pqk->qk", z.pi[:, None] + z.lam, sc.w)[q]
    from qne.model import interference_plus_noise, miss_probabilities
    miss = miss_probabilities(x, sc)[q]
    others = interference_plus_noise(x.p, sc)[q]
    h = sc.direct_gain[q]
    got = waterfill(F * s, h, others, W * miss, sc.p_max[q], sc.P_budget[q])
    p = np.full(sc.N, sc.P_budget[q] / (2 * sc.N))
    step = 0.05 * float(np.min((others / h) ** 2))
    for _ in range(200_000):
        grad = F * s * h / (others + h * p) - W * miss
        p_new = project_capped_simplex(p + step * grad, sc.p_max[q], sc.P_budget[q])[0]
        if np.max(np.abs(p_new - p)) < 1e-14:
            break
        p = p_new
    assert np.allclose(got, p, atol=1e-6)


def test_extragradient_priced_certified(sc, eg_priced):
    res = eg_priced
    assert res.converged, res.message
    assert res.certificate.passes(1e-6), res.certificate.failures(1e-6)
    assert res.certificate.natural_residual <= 1e-6
    # independent re-certification from the returned point
    assert certify(res.z, sc, 1e-6).passes(1e-6)
    assert res.history[-1] == pytest.approx(res.certificate.natural_residual, abs=1e-9)


def test_extragradient_restart_at_solution(sc, eg_priced):
    opts = SolveOptions(init=Init.CUSTOM, custom_init=eg_priced.z, **FAST)
    again = solve_extragradient(sc, opts)
    assert again.converged and again.iterations <= 2


def test_individual_variant_keeps_price_zero(sc):
    res = solve_extragradient(sc, SolveOptions(variant="Individual", **FAST))
    assert res.converged
    assert np.all(res.z.pi == 0)
    assert res.certificate.passes(1e-6)


def test_best_response_certified_and_fixed_point(sc):
    res = solve_best_response(sc, SolveOptions(**FAST))
    assert res.converged, res.message
    assert res.certificate.passes(1e-6)
    again = best_response_sweep(res.z, sc)
    assert np.allclose(again.to_vector(), res.z.to_vector(), atol=1e-5)


def test_solvers_are_deterministic(sc):
    a = solve_extragradient(sc, SolveOptions(**FAST))
    b = solve_extragradient(sc, SolveOptions(**FAST))
    assert a.history == b.history
    assert np.array_equal(a.z.to_vector(), b.z.to_vector())


def test_infeasible_scenario_raises():
    bad = generate_scenario(0, snr_d=1e-7)
    with pytest.raises(InfeasibleSetError):
        solve_extragradient(bad)
    with pytest.raises(InfeasibleSetError):
        solve_best_response(bad)


def test_single_link_matches_grid_search():
    s = generate_scenario(8, Q=1, N=1, I_max=1e6, I_q_max=1e6)
    res = solve_extragradient(s, SolveOptions(variant="Individual", **FAST))
    assert res.converged
    p_opt = min(float(s.P_budget[0]), float(s.p_max[0, 0]))
    assert res.z.x.p[0, 0] == pytest.approx(p_opt, abs=1e-6)
    # 2-D grid of the throughput over the (tau_hat, gamma_hat) slice of Y_1
    o = s.stats
    r = float(rates(np.array([[p_opt]]), s)[0, 0])

    def grid_argmax(t, g):
        T, G = np.meshgrid(t, g, indexing="ij")
        miss_ok = (o.sigma0[0, 0] * G - o.delta[0, 0] * T) / o.sigma1[0, 0] <= s.alpha_hat[0, 0]
        val = np.where(miss_ok, (1 - T**2 / (s.f[0] * s.T[0])) * (1 - q_function(G)) * r,
                       -np.inf)
        i, j = np.unravel_index(np.argmax(val), val.shape)
        return t[i], g[j], t[1] - t[0], g[1] - g[0]

    # The maximizer sits on the oblique miss-bound edge, so refine once around
    # the coarse winner.
    t0, g0, dt, dg = grid_argmax(
        np.linspace(float(s.tau_hat_min[0]), float(s.tau_hat_max[0]), 2001),
        np.linspace(float(s.beta_hat[0, 0]), float(s.gamma_hat_max[0, 0]), 2001))
    t1, g1, _, _ = grid_argmax(np.linspace(t0 - 5 * dt, t0 + 5 * dt, 2001),
                               np.linspace(g0 - 5 * dg, g0 + 5 * dg, 2001))
    assert res.z.x.tau_hat[0] == pytest.approx(t1, rel=1e-3)
    assert res.z.x.gamma_hat[0, 0] == pytest.approx(g1, rel=1e-3)


def test_equi_sensing_spread_and_oracle():
    s = generate_scenario(1)
    assert equi_feasibility_check(s).feasible
    res = solve_equi_sensing(s, SolveOptions(variant="EquiSensing", **FAST))
    assert res.converged, res.message
    assert res.spreads[-1] <= 1e-3
    assert all(b <= a + 1e-9 for a, b in zip(res.spreads, res.spreads[1:]))
    fin = res.final.z
    tau = common_tau_oracle(s, fin.x, fin.pi)
    assert res.tau_star == pytest.approx(tau, rel=1e-3)


def test_equi_sensing_symmetric_players():
    s = generate_scenario(0, Q=2, N=2, L=1, taps=np.ones((2, 2, 1)), w=1.0)
    res = solve_equi_sensing(s, SolveOptions(variant="EquiSensing", c_max=16.0, **FAST))
    assert all(sp <= 1e-9 for sp in res.spreads)


def test_common_tau_flat_objective_takes_lower_end(sc):
    x = StrategyProfile(np.sqrt(sc.f * 5e-3), np.zeros((sc.Q, sc.N)),
                        np.repeat(sc.beta_hat[:, :1], sc.N, axis=1))
    low, _ = common_tau_interval(sc, x)
    assert common_tau_oracle(sc, x, np.zeros(sc.P)) == low


def test_common_tau_matches_dense_grid(sc, eg_priced):
    x, pi = eg_priced.z.x, eg_priced.z.pi
    low, high = common_tau_interval(sc, x)
    grid = np.linspace(low, high, 100_001)
    vals = [common_tau_objective(t, sc, x, pi) for t in grid[::50]]
    # coarse pass locates the peak, then a dense window around it
    k = int(np.argmax(vals)) * 50
    window = grid[max(0, k - 60):k + 61]
    best = window[int(np.argmax([common_tau_objective(t, sc, x, pi) for t in window]))]
    got = common_tau_oracle(sc, x, pi)
    assert abs(got - best) <= 2 * (grid[1] - grid[0])


def test_common_tau_symmetric_two_players_equal_one():
    one = generate_scenario(0, Q=1, N=3, L=1, taps=np.ones((1, 1, 1)), w=1.0, cross_gain=0.0)
    two = generate_scenario(0, Q=2, N=3, L=1, taps=np.ones((2, 2, 1)), w=1.0, cross_gain=0.0)
    g = np.full((1, 3), float(one.beta_hat[0, 0]) + 0.5)
    p = np.full((1, 3), 0.2)
    x1 = StrategyProfile(np.sqrt(one.f * 5e-3), p, g)
    x2 = StrategyProfile(np.sqrt(two.f * 5e-3), np.repeat(p, 2, 0), np.repeat(g, 2, 0))
    t1 = common_tau_oracle(one, x1, np.zeros(1))
    t2 = common_tau_oracle(two, x2, np.zeros(1))
    assert t2 == pytest.approx(t1, rel=1e-9)


def test_sensing_spread_zero_for_common_tau(sc):
    x = StrategyProfile(np.sqrt(sc.f * 4e-3), np.zeros((sc.Q, sc.N)), np.zeros((sc.Q, sc.N)))
    assert sensing_spread(x, sc) == pytest.approx(0.0, abs=1e-15)


def test_baseline_constraints_and_limits(sc):
    res = solve_baseline_deterministic(sc, SolveOptions(**FAST))
    assert res.converged
    terms = sc.w * res.p[None]
    assert np.all(terms.sum(axis=2) <= sc.I_q_max + 1e-6)
    assert np.all(terms.sum(axis=(1, 2)) <= sc.I_max + 1e-6)
    loose = sc.with_caps(I_q_max=np.full_like(sc.I_q_max, 1e6), I_max=np.full(sc.P, 1e6))
    res = solve_baseline_deterministic(loose, SolveOptions(**FAST))
    assert np.allclose(res.p.sum(axis=1), sc.P_budget, atol=1e-6)
    zero = sc.with_caps(I_q_max=np.zeros_like(sc.I_q_max))
    res = solve_baseline_deterministic(zero, SolveOptions(variant="Individual", **FAST))
    assert np.allclose(res.p, 0.0, atol=1e-6)


def test_baseline_single_user_waterfilling():
    s = generate_scenario(2, Q=1, N=6, w=1.0, I_max=1e6, I_q_max=1e6)
    res = solve_baseline_deterministic(s, SolveOptions(variant="Individual", **FAST))
    assert res.converged
    h, n = s.direct_gain[0], s.noise_var[0]
    active = res.p[0] > 1e-8
    marginal = 1.0 / (n / h + res.p[0])
    # equal marginal on the active carriers, lower marginal on inactive ones
    assert np.ptp(marginal[active]) <= 1e-6 * marginal[active].max()
    assert np.all(h[~active] / n[~active] <= marginal[active].min() + 1e-6)

    def neg(p):
        return -np.sum(np.log1p(h * p / n))

    ref = minimize(neg, np.full(6, 1 / 12), method="SLSQP", bounds=[(0, 1)] * 6,
                   constraints=[{"type": "ineq", "fun": lambda p: 1 - p.sum()}],
                   options={"ftol": 1e-15, "maxiter": 500}).x
    assert np.allclose(res.p[0], ref, atol=1e-5)


def test_throughput_positive_at_qne(eg_priced, sc):
    assert np.sum(throughputs(eg_priced.z.x, sc)) > 0
    assert eg_priced.certificate.nontrivial
