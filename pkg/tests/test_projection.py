import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import qp_project
from qne.model import generate_scenario, polyhedron_matrix
from qne.projection import (
    InfeasibleSetError,
    dykstra,
    project_capped_simplex,
    project_sensing_block,
)
from qne.vi import ViPoint, interior_point, project_S


def simplex_rows(n):
    A = np.vstack((-np.eye(n), np.eye(n), np.ones((1, n))))
    return A


@given(st.integers(0, 2**31 - 1), st.integers(1, 9))
def test_capped_simplex_matches_qp(seed, n):
    rng = np.random.default_rng(seed)
    v = rng.normal(0.2, 0.6, n)
    upper = rng.uniform(0.05, 1.0, n)
    budget = rng.uniform(0.05, 2.0)
    got = project_capped_simplex(v, upper, budget)[0]
    ref = qp_project(v, simplex_rows(n), np.concatenate((np.zeros(n), upper, [budget])))
    assert np.allclose(got, ref, atol=1e-6)


def test_capped_simplex_total_power_only():
    # only the budget is violated and no coordinate is pushed below zero:
    # the projection is a uniform shift
    v = np.array([0.3, 0.5, 0.4, 0.6])
    got = project_capped_simplex(v, 1.0, 1.0)[0]
    assert np.allclose(got, v - (v.sum() - 1.0) / 4, atol=1e-15)


def _sensing_case(rng, n):
    t_low, t_high = sorted(rng.uniform(1, 30, 2))
    g_low = rng.uniform(0.5, 2.0, n)
    slope = rng.uniform(0.01, 1.0, n)
    offset = g_low - slope * rng.uniform(0, t_low, n) + rng.uniform(-0.5, 0.0, n)
    t0 = rng.uniform(-5, 40)
    g0 = rng.uniform(-2, 8, n)
    return t0, g0, t_low, t_high, g_low, offset, slope


def _sensing_rows(t_low, t_high, g_low, offset, slope):
    n = g_low.size
    A = np.zeros((2 * n + 2, n + 1))
    b = np.zeros(2 * n + 2)
    A[:n, 1:] = -np.eye(n)
    b[:n] = -g_low
    A[n:2 * n, 0] = -slope
    A[n:2 * n, 1:] = np.eye(n)
    b[n:2 * n] = offset
    A[2 * n, 0], b[2 * n] = -1.0, -t_low
    A[2 * n + 1, 0], b[2 * n + 1] = 1.0, t_high
    return A, b


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_sensing_block_matches_qp(seed, n):
    rng = np.random.default_rng(seed)
    t0, g0, t_low, t_high, g_low, offset, slope = _sensing_case(rng, n)
    A, b = _sensing_rows(t_low, t_high, g_low, offset, slope)
    try:
        t, g = project_sensing_block(np.array([t0]), g0[None], np.array([t_low]),
                                     np.array([t_high]), g_low[None], offset[None], slope[None])
    except InfeasibleSetError:
        # empty set: there is a carrier needing t > t_high
        assert np.max((g_low - offset) / slope) > t_high
        return
    ref = qp_project(np.concatenate(([t0], g0)), A, b)
    assert np.allclose(np.concatenate((t, g[0])), ref, atol=1e-6)
    d = dykstra(np.concatenate(([t0], g0)), A, b, tol=1e-10)
    assert np.allclose(np.concatenate((t, g[0])), d, atol=1e-6)


def test_sensing_block_empty_raises():
    with pytest.raises(InfeasibleSetError):
        project_sensing_block(np.array([1.0]), np.array([[1.0]]), np.array([1.0]),
                              np.array([2.0]), np.array([[10.0]]), np.array([[0.0]]),
                              np.array([[1.0]]))


def test_dykstra_rejects_zero_normal():
    with pytest.raises(ValueError):
        dykstra(np.zeros(2), np.zeros((1, 2)), np.zeros(1))


@pytest.fixture(scope="module")
def scen():
    return generate_scenario(11, N=4)


def _random_point(sc, rng, spread=1.0):
    base = interior_point(sc).to_vector()
    return ViPoint.from_vector(base + spread * rng.normal(size=base.size) *
                               np.abs(base).clip(0.1, None), sc)


def test_project_S_examples(scen):
    z = interior_point(scen)
    back = project_S(z, scen)
    assert np.allclose(back.to_vector(), z.to_vector(), atol=1e-12)
    z2 = z.copy()
    z2.pi[:] = -3.0
    assert np.all(project_S(z2, scen).pi == 0.0)


def test_project_S_matches_dykstra(scen, rng):
    for _ in range(3):
        z = _random_point(scen, rng)
        a = project_S(z, scen).to_vector()
        b = project_S(z, scen, tol=1e-12, method="dykstra").to_vector()
        assert np.allclose(a, b, atol=1e-7)


def test_project_S_player_block_matches_qp(scen, rng):
    z = _random_point(scen, rng)
    d = 2 * scen.N + 1
    proj = project_S(z, scen).to_vector()
    for q in range(scen.Q):
        A, b = polyhedron_matrix(scen, q)
        ref = qp_project(z.to_vector()[q * d:(q + 1) * d], A, b)
        assert np.allclose(proj[q * d:(q + 1) * d], ref, atol=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_project_S_idempotent_and_nonexpansive(seed):
    sc = generate_scenario(seed % 10, N=4)
    rng = np.random.default_rng(seed)
    tol = 1e-10
    a, b = _random_point(sc, rng), _random_point(sc, rng)
    pa, pb = project_S(a, sc, tol), project_S(b, sc, tol)
    assert np.allclose(project_S(pa, sc, tol).to_vector(), pa.to_vector(), atol=tol)
    lhs = np.linalg.norm(pa.to_vector() - pb.to_vector())
    assert lhs <= np.linalg.norm(a.to_vector() - b.to_vector()) + 10 * tol


def test_project_S_rejects_bad_tol(scen):
    with pytest.raises(ValueError):
        project_S(interior_point(scen), scen, tol=0.0)
