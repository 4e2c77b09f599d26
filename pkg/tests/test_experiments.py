import math

import numpy as np
import pytest

from qne.experiments import (
    SweepResult,
    caps_for_ratio,
    compare_global_local,
    seed_average,
    slope_sign_changes,
    sweep_interference_gain,
    sweep_sensing_tradeoff,
)
from qne.model import equi_feasibility_check, generate_scenario
from qne.solvers import SolveOptions

FAST = dict(max_iters=3000)


@pytest.fixture(scope="module")
def sc():
    return generate_scenario(2, Q=2, N=4)


def _tau_grid(sc, n):
    eq = equi_feasibility_check(sc)
    return np.geomspace(eq.tau_low * (1 + 1e-6), eq.tau_high, n)


def test_sweep_result_requires_converged_and_matching_lengths():
    with pytest.raises(ValueError, match="converged"):
        SweepResult(axis=[1, 2], series={"a": [1, 2]})
    with pytest.raises(ValueError, match="rows"):
        SweepResult(axis=[1, 2], series={"a": [1], "converged": [True, True]})


def test_csv_layout():
    res = SweepResult(axis=[0.5, 1.0], series={"x": [0.5, 1.0], "y": [0.1, 2.0],
                                               "converged": [True, False]},
                      metadata={"seeds": [3], "scenario_digest": "abc"})
    lines = res.to_csv().splitlines()
    assert lines[0] == "x,y,converged"
    meta = [ln for ln in lines if ln.startswith("#")]
    assert meta[0] == "# version: qne-sweep-v1"
    assert "# scenario_digest: \"abc\"" in meta
    assert "# seeds: [3]" in meta
    body = [ln for ln in lines[1:] if not ln.startswith("#")]
    assert body == ["0.5,0.1,1", "1.0,2.0,0"]
    # Metadata precedes every data row.
    assert max(i for i, ln in enumerate(lines) if ln.startswith("#")) < lines.index(body[0])


@pytest.mark.parametrize("values, expected", [
    ([1, 2, 3, 4], 0),
    ([1, 3, 2], 1),
    ([1, 3, 3, 2], 1),
    ([1, 3, 2, 4], 2),
    ([1, None, 3, 2], 1),
    ([2.0, math.nan], 0),
])
def test_slope_sign_changes(values, expected):
    assert slope_sign_changes(values) == expected


def test_caps_for_ratio(sc):
    out = caps_for_ratio(sc, 25.0)
    assert np.allclose(np.mean(out.P_budget) / out.I_max, 25.0)
    assert np.allclose(out.I_q_max / out.I_max[:, None], sc.I_q_max / sc.I_max[:, None])


def test_tradeoff_sweep_columns_and_determinism(sc):
    grid = _tau_grid(sc, 3)
    a = sweep_sensing_tradeoff(sc, grid, SolveOptions(**FAST), mark_equi=False)
    b = sweep_sensing_tradeoff(sc, grid, SolveOptions(**FAST), mark_equi=False)
    assert a.to_csv() == b.to_csv()
    for col in ("tau", "sum_throughput", "residual", "converged", "throughput_0", "throughput_1"):
        assert col in a.series
    assert all(a.series["converged"])
    assert a.metadata["scenario_digest"] == sc.digest()
    s = np.array(a.series["sum_throughput"])
    per = np.array([a.series["throughput_0"], a.series["throughput_1"]])
    assert np.allclose(per.sum(axis=0), s)


def test_tradeoff_marks_infeasible_rows(sc):
    eq = equi_feasibility_check(sc)
    res = sweep_sensing_tradeoff(sc, [0.5 * eq.tau_low, eq.tau_high], SolveOptions(**FAST),
                                 mark_equi=False)
    assert res.series["feasible"] == [False, True]
    assert res.series["converged"][0] is False
    assert len(res.axis) == 2


def test_tradeoff_closing_frame_gives_zero_throughput():
    # tau_max just short of the frame: transmitting at tau_max leaves no time.
    base = generate_scenario(4, Q=2, N=4)
    sc = generate_scenario(4, Q=2, N=4, T=base.tau_max * (1 + 1e-9))
    res = sweep_sensing_tradeoff(sc, [float(np.min(sc.tau_max))], SolveOptions(**FAST),
                                 mark_equi=False)
    assert res.series["feasible"] == [True]
    assert res.series["sum_throughput"][0] < 1e-6


def test_gain_sweep_unconstrained_limit(sc):
    res = sweep_interference_gain(sc, [1e-6], SolveOptions(**FAST))
    row = next(res.rows())
    assert row["converged"] and row["qe_certified"] and row["baseline_certified"]
    assert row["gain_percent"] <= 1e-6
    assert row["gain_percent"] == pytest.approx(
        100 * (row["SR_QE"] - row["SR_baseline"]) / row["SR_baseline"], rel=0, abs=0)


def test_compare_single_player_variants_coincide():
    sc = generate_scenario(7, Q=1, N=4)
    opts = SolveOptions(**FAST)
    res = compare_global_local(sc, opts)
    s = res.series["sum_throughput"]
    assert all(res.series["converged"])
    assert abs(s[0] - s[1]) <= 2 * opts.tol * max(1.0, abs(s[0]))


def test_compare_profile_consistency(sc):
    opts = SolveOptions(**FAST)
    res = compare_global_local(sc, opts)
    for row in res.rows():
        profile = sum(row[f"interference_k{k}"] for k in range(sc.N))
        assert profile == pytest.approx(row["aggregate_interference"], rel=1e-12)
        assert row["aggregate_interference"] <= row["I_max"] + 1e-6


def test_seed_average_skips_nonconverged():
    a = SweepResult(axis=[1, 2], series={"v": [1.0, 5.0], "converged": [True, False]})
    b = SweepResult(axis=[1, 2], series={"v": [3.0, 7.0], "converged": [True, True]})
    means, counts = seed_average([a, b], "v")
    assert np.allclose(means, [2.0, 7.0])
    assert list(counts) == [2, 1]
