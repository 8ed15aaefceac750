import json
import math

import numpy as np
import pytest

from cnemf.chaos import (
    MN_LABEL,
    ChaosConfig,
    kernel_of_actions,
    sampling_bound_check,
    operator_gap_diagnostics,
    replicate_profile,
    run_chaos_experiment,
    weak_strong_gains,
)
from cnemf.errors import ConfigError, UnsupportedError
from cnemf.families import build_model
from cnemf.measures import LiftedMeasure
from cnemf.meanfield import MeasureGrid, ValueTable, solve_mean_field
from cnemf.model import horizon_for

FAST = ChaosConfig(q=4, mn_samples=30, lipschitz_probes=40)


@pytest.fixture(scope="module")
def sis_solution(sis):
    model, _ = sis
    return solve_mean_field(model, MeasureGrid(2, 2, 4))


def test_degenerate_model_has_no_gap():
    model, nagent = build_model("identity", 0.5, n_states=1, reward=1.0)
    report = run_chaos_experiment(model, nagent, [0], [1, 2, 3], FAST)
    assert [r.gap for r in report.rows] == [0.0, 0.0, 0.0]
    assert report.ratio_spread() == 1.0


def test_report_rows_respect_the_invariants(sis, sis_solution):
    model, nagent = sis
    report = run_chaos_experiment(model, nagent, (0, 1), [2, 4], FAST, solved=sis_solution)
    envelope = report.meta["tolerance_envelope"]
    for row in report.completed():
        assert row.gap >= -envelope
        assert min(row.M_hat, row.eps_f, row.eps_F, row.bound) >= 0
        assert row.projection_slack == 0.0 and row.note == MN_LABEL
        assert row.ratio == pytest.approx(row.gap / row.bound)
    r2, r4 = report.rows
    assert r4.eps_f <= r2.eps_f and r4.eps_F <= r2.eps_F and r4.M_hat <= r2.M_hat
    assert report.meta["mn_label"] == MN_LABEL and report.meta["search_slack"] == 0.0


def test_reports_are_reproducible(sis, sis_solution):
    model, nagent = sis
    a = run_chaos_experiment(model, nagent, (0, 1), [2], FAST, solved=sis_solution)
    b = run_chaos_experiment(model, nagent, (0, 1), [2], FAST, solved=sis_solution)
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    doc = json.loads(a.to_json())
    assert doc["rows"][0]["N"] == 2 and doc["meta"]["Ns"] == [2]


def test_budget_overrun_gives_a_skipped_row(sis, sis_solution):
    model, nagent = sis
    cfg = ChaosConfig(q=4, mn_samples=30, lipschitz_probes=40, budget=5000)
    report = run_chaos_experiment(model, nagent, (0, 1), [2, 4], cfg, solved=sis_solution)
    assert [r.status for r in report.rows] == ["ok", "skipped"]
    assert "mc_policy_gain" in report.rows[1].note and math.isnan(report.rows[1].gap)
    assert "null" in report.to_json() and len(report.completed()) == 1


def test_blocks_must_divide_every_n(sis):
    model, nagent = sis
    with pytest.raises(UnsupportedError, match="does not divide N=3"):
        run_chaos_experiment(model, nagent, (0, 1), [2, 3], FAST)
    with pytest.raises(ConfigError):
        replicate_profile((0, 1, 1), 4, 2)
    assert list(replicate_profile((0, 1), 4, 2)) == [0, 0, 1, 1]


def test_distance_to_the_atomic_empirical_stays_under_the_sampling_bound(sis):
    model, _ = sis
    check = sampling_bound_check(model, np.array([0, 1, 1, 0]), clouds=200, seed=0)
    assert check.N == 4 and check.clouds == 200
    assert check.holds and check.mean_distance <= check.M_hat + 1 / 8 + 3 * check.stderr


def test_operator_gap_vanishes_when_nothing_moves_and_rewards_are_constant():
    model, nagent = build_model("identity", 0.5, reward=0.7)
    grid = MeasureGrid(1, 2, 4)
    V = ValueTable(grid, np.random.default_rng(0).normal(size=grid.size))
    diag = operator_gap_diagnostics(model, nagent, 2, V, samples=12, clouds=20, gamma=1.0)
    assert {s.kind for s in diag.samples} == {"matched", "induced", "random"}
    assert max(s.operator_gap for s in diag.samples) == pytest.approx(0.0, abs=1e-12)
    assert diag.eps_f == diag.eps_F == 0.0


def test_matched_samples_have_the_smallest_drivers(sis, sis_solution):
    model, nagent = sis
    V, _ = sis_solution
    diag = operator_gap_diagnostics(model, nagent, 2, V, samples=30, clouds=30, gamma=1.0)
    by_kind = {k: [s.driver for s in diag.samples if s.kind == k] for k in ("matched", "induced", "random")}
    assert np.mean(by_kind["matched"]) <= np.mean(by_kind["random"])
    assert diag.to_csv().splitlines()[0] == "kind,x,actions,operator_gap,driver,driver_term"
    assert all(s.driver_term >= diag.constant_term for s in diag.samples)


def test_kernel_of_actions_counts_per_cell():
    k = kernel_of_actions(np.array([0, 0, 1, 1]), np.array([1, 0, 1, 1]), 2, 2, 2)
    np.testing.assert_allclose(k[0], [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(k[1], [[0.5, 0.5], [0.0, 1.0]])


def test_weak_and_strong_gains_agree_and_replay(sis, sis_solution):
    model, _ = sis
    _, policy = sis_solution
    mu0 = LiftedMeasure([[1.0, 0.0], [0.0, 1.0]])
    a = weak_strong_gains(model, policy, mu0, 1e-2, 2000, 4)
    assert a.agree and a.horizon == horizon_for(1e-2, model.beta, model.reward_bound)
    assert a == weak_strong_gains(model, policy, mu0, 1e-2, 2000, 4)
    with pytest.raises(ConfigError):
        weak_strong_gains(model, policy, mu0, 1e-2, 1, 4)


def test_weak_and_strong_gains_are_exact_for_constant_rewards():
    model, _ = build_model("identity", 0.5, reward=1.0, blocks=2)
    _, policy = solve_mean_field(model, MeasureGrid(2, 2, 2))
    r = weak_strong_gains(model, policy, LiftedMeasure([[0.5, 0.5], [1.0, 0.0]]), 1e-3, 50, 0)
    assert r.weak == pytest.approx(r.strong) and r.weak_stderr == 0.0 and r.agree
