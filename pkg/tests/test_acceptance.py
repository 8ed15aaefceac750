"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` to see the lines alongside
the pytest verdicts.
"""

import itertools
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from cnemf.chaos import ChaosConfig, lifted_population, replicate_profile, run_chaos_experiment, weak_strong_gains
from cnemf.cli import main
from cnemf.families import build_model
from cnemf.measures import LiftedMeasure, PolicyKernel, aggregate_blocks, compose_kernel, make_empirical
from cnemf.meanfield import LiftedMDP, MeasureGrid, ValueTable, bellman_apply, lifted_step, solve_mean_field
from cnemf.nagent import NAgentProblem, bellman_N_apply, encode, mc_policy_gain, policy_value, solve_n_agent
from cnemf.rng import inverse_cdf, stream
from cnemf.selftest import transport_selftest
from cnemf.spaces import FiniteMetricSpace
from cnemf.transfer import matching_policy, transfer_direct
from cnemf.transport import ProductMetric, as_discrete, w1_value

from conftest import SIS1_PARAMS

QUICK = Path(__file__).resolve().parent.parent / "configs" / "sis-quick.yaml"

# tolerances and sizes pinned from the acceptance criteria
CONTRACTION_PAIRS, CONTRACTION_SLACK, CONTRACTION_SECONDS = 100, 1e-9, 60
ORACLE_INSTANCES, ORACLE_MAX_N, ORACLE_TOL, ORACLE_SECONDS = 50, 7, 1e-9, 60
LIFT_TOL = 1e-9
SOLVER_TOL = 1e-6
CONSTANT_TOL = 1e-9
PARTICLES, PARTICLE_SES = 100_000, 3.0
CHAOS_RATIO_SPREAD, CHAOS_SECONDS = 10.0, 600
TRANSFER_N, TRANSFER_SECONDS = 4, 300
WEAK_STRONG_SAMPLES = 10_000
MC_TOL, MC_SAMPLES = 1e-3, 2000
PROFILE = (0, 1)


def report(capsys, number, name, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}")


@pytest.fixture(scope="module")
def sis():
    return build_model("heterogeneous-sis", 0.5)


@pytest.fixture(scope="module")
def sis_grid(sis):
    model, _ = sis
    grid = MeasureGrid(2, 2, 10)
    mdp = LiftedMDP(model, grid)
    V, policy = solve_mean_field(model, grid, tol=SOLVER_TOL, mdp=mdp)
    return mdp, V, policy


def test_criterion_01_contraction(capsys, sis, sis_grid):
    model, nagent = sis
    mdp, _, _ = sis_grid
    start = time.perf_counter()
    rng = stream(0, "acceptance/contraction")
    worst_mf = worst_n = -math.inf
    problem = NAgentProblem(model, nagent, 3)
    for _ in range(CONTRACTION_PAIRS):
        W1, W2 = rng.normal(scale=3, size=(2, mdp.grid.size))
        T1 = bellman_apply(mdp, ValueTable(mdp.grid, W1)).values
        T2 = bellman_apply(mdp, ValueTable(mdp.grid, W2)).values
        worst_mf = max(worst_mf, np.max(np.abs(T1 - T2)) - model.beta * np.max(np.abs(W1 - W2)))
        U1, U2 = rng.normal(scale=3, size=(2, problem.n_joint_states))
        S1, S2 = bellman_N_apply(problem, U1), bellman_N_apply(problem, U2)
        worst_n = max(worst_n, np.max(np.abs(S1 - S2)) - model.beta * np.max(np.abs(U1 - U2)))
    elapsed = time.perf_counter() - start
    ok = worst_mf <= CONTRACTION_SLACK and worst_n <= CONTRACTION_SLACK and elapsed < CONTRACTION_SECONDS
    report(capsys, 1, "beta-contraction of T (q=10 grid) and T_N (N=3)", ok,
           f"max excess over beta*|W1-W2| mean-field {worst_mf:.3e}, N-agent {worst_n:.3e} "
           f"(allowed {CONTRACTION_SLACK:g}); {elapsed:.1f}s")
    assert ok


def test_criterion_02_transport_oracle(capsys):
    start = time.perf_counter()
    results = transport_selftest(instances=ORACLE_INSTANCES, seed=0, max_n=ORACLE_MAX_N)
    elapsed = time.perf_counter() - start
    ok = all(r.worst <= ORACLE_TOL for r in results) and elapsed < ORACLE_SECONDS
    detail = ", ".join(f"{r.name} {r.worst:.1e}" for r in results)
    report(capsys, 2, f"transport vs permutation brute force ({ORACLE_INSTANCES} instances, N<=7)", ok,
           f"{detail} (allowed {ORACLE_TOL:g}); {elapsed:.1f}s")
    assert ok


def monotone_rearrangement(x, n_states, fine=64):
    """Per-state 1-D quantile coupling of the lifted cells against the atoms at ``i/N``."""
    N = len(x)
    total = 0.0
    for s in range(n_states):
        agents = [i for i in range(1, N + 1) if x[i - 1] == s]
        if not agents:
            continue
        # quantile points of both laws at midpoints of equal mass slices
        cells = np.concatenate([(i - 1 + (np.arange(fine) + 0.5) / fine) / N for i in agents])
        atoms = np.repeat(np.array(agents, dtype=float) / N, fine)
        total += np.abs(np.sort(cells) - np.sort(atoms)).sum() / (N * fine)
    return total


def test_criterion_03_lifting_distance(capsys):
    metric = ProductMetric(FiniteMetricSpace.line(3))
    worst_excess, worst_equality, count = -math.inf, 0.0, 0
    for N in range(1, 6):
        labels = np.arange(1, N + 1) / N
        for x in itertools.product(range(3), repeat=N):
            lifted = make_empirical(labels, x, lifted=True, n_states=3)
            w = w1_value(as_discrete(lifted, 1.0 / (64 * N)), make_empirical(labels, x), metric)
            worst_excess = max(worst_excess, w - 1.0 / (2 * N))
            if len(set(x)) == N:
                worst_equality = max(worst_equality, abs(w - monotone_rearrangement(x, 3)),
                                     abs(w - 1.0 / (2 * N)))
            count += 1
    ok = worst_excess <= LIFT_TOL and worst_equality <= LIFT_TOL
    report(capsys, 3, f"lifted vs atomic empirical <= 1/(2N) over {count} joint states, N=1..5", ok,
           f"max excess {worst_excess:.2e}, distinct-state deviation from 1/(2N) {worst_equality:.2e} "
           f"(allowed {LIFT_TOL:g})")
    assert ok


def test_criterion_04_fixed_point_residuals(capsys, sis, sis_grid):
    model, nagent = sis
    mdp, V, _ = sis_grid
    res_mf = float(np.max(np.abs(bellman_apply(mdp, V).values - V.values)))
    res_n = {}
    for N in (2, 4):
        problem = NAgentProblem(model, nagent, N)
        VN = solve_n_agent(model, nagent, N, tol=SOLVER_TOL, problem=problem)
        res_n[N] = float(np.max(np.abs(bellman_N_apply(problem, VN.values) - VN.values)))
    ref, _ = build_model("heterogeneous-sis", 0.5, **SIS1_PARAMS)
    ref_mdp = LiftedMDP(ref, MeasureGrid(1, 2, 10))
    Vref, _ = solve_mean_field(ref, ref_mdp.grid, tol=SOLVER_TOL, mdp=ref_mdp)
    res_ref = float(np.max(np.abs(bellman_apply(ref_mdp, Vref).values - Vref.values)))
    slack = Vref.meta["search_slack"]
    ok = max(res_mf, res_ref, *res_n.values()) <= SOLVER_TOL and slack == 0.0 and V.meta["search_slack"] == 0.0
    report(capsys, 4, "fixed-point residuals at tol 1e-6", ok,
           f"mean-field K=2 {res_mf:.2e}, K=1 reference {res_ref:.2e} (search slack {slack}), "
           + ", ".join(f"N={N} {r:.2e}" for N, r in res_n.items()))
    assert ok


def test_criterion_05_constant_reward(capsys):
    worst = 0.0
    for beta in (0.3, 0.9):
        model, nagent = build_model("identity", beta, reward=1.25, blocks=2)
        target = 1.25 / (1 - beta)
        V, _ = solve_mean_field(model, MeasureGrid(2, 2, 4), tol=1e-11)
        worst = max(worst, float(np.max(np.abs(V.values - target))))
        for N in (2, 4):
            VN = solve_n_agent(model, nagent, N, tol=1e-11)
            worst = max(worst, float(np.max(np.abs(VN.values - target))))
    ok = worst <= CONSTANT_TOL
    report(capsys, 5, "f = c gives c/(1-beta) for beta in {0.3, 0.9}", ok,
           f"max deviation {worst:.2e} (allowed {CONSTANT_TOL:g})")
    assert ok


def particle_step(model, mu, kernel, e0, n, seed):
    """One step of ``n`` independent agents with uniform labels; returns block-state frequencies."""
    K, nX = mu.K, mu.n_states
    u = stream(seed, "acceptance/particles/label").random(n)
    blocks = np.minimum((u * K).astype(np.int64), K - 1)
    x = inverse_cdf(mu.rows[blocks], stream(seed, "acceptance/particles/state").random(n))
    a = inverse_cdf(kernel[blocks, x], stream(seed, "acceptance/particles/action").random(n))
    e = inverse_cdf(model.noise.idio_probs, stream(seed, "acceptance/particles/idio").random(n))
    control = compose_kernel(mu, PolicyKernel(kernel))
    table = model.transition_table(control, e0)
    nxt = table[blocks, x, a, e]
    counts = np.zeros((K, nX))
    np.add.at(counts, (blocks, nxt), 1)
    return counts / n


def test_criterion_06_pushforward(capsys):
    worst_z, cells = 0.0, 0
    rng = stream(1, "acceptance/pushforward/cases")
    for family in ("threshold-graphon", "heterogeneous-sis"):
        model, _ = build_model(family, 0.5)
        for case in range(3):
            mu = LiftedMeasure(rng.dirichlet(np.ones(2), size=2))
            kernel = rng.dirichlet(np.ones(2), size=(2, 2))
            for e0 in range(model.noise.n_common):
                exact = lifted_step(model, mu, compose_kernel(mu, PolicyKernel(kernel)), e0).rows / mu.K
                freq = particle_step(model, mu, kernel, e0, PARTICLES, seed=100 * case + e0)
                se = np.sqrt(exact * (1 - exact) / PARTICLES)
                for p, f, s in zip(exact.ravel(), freq.ravel(), se.ravel()):
                    cells += 1
                    z = abs(f - p) / s if s > 0 else (0.0 if f == p else math.inf)
                    worst_z = max(worst_z, z)
    ok = worst_z <= PARTICLE_SES
    report(capsys, 6, f"lifted_step vs {PARTICLES} particles on both graphon families", ok,
           f"largest deviation {worst_z:.2f} standard errors over {cells} cells (allowed {PARTICLE_SES:g})")
    assert ok


def test_criterion_07_chaos_trend(capsys, sis, sis_grid):
    model, nagent = sis
    _, V, policy = sis_grid
    start = time.perf_counter()
    report_ = run_chaos_experiment(model, nagent, PROFILE, [2, 4], ChaosConfig(q=10, tol=SOLVER_TOL),
                                   solved=(V, policy))
    elapsed = time.perf_counter() - start
    r2, r4 = report_.rows
    spread = report_.ratio_spread()
    ok = r4.gap <= r2.gap and spread <= CHAOS_RATIO_SPREAD and elapsed < CHAOS_SECONDS
    report(capsys, 7, "gap shrinks from N=2 to N=4 with a stable gap/rate ratio", ok,
           f"gap {r2.gap:.4f} -> {r4.gap:.4f}, ratio {r2.ratio:.4f} -> {r4.ratio:.4f}, spread {spread:.2f} "
           f"(allowed {CHAOS_RATIO_SPREAD:g}); {elapsed:.1f}s")
    assert ok


def test_criterion_08_transfer(capsys, sis, sis_grid):
    model, nagent = sis
    _, V, policy = sis_grid
    start = time.perf_counter()
    N = TRANSFER_N
    problem = NAgentProblem(model, nagent, N)
    VN = solve_n_agent(model, nagent, N, tol=SOLVER_TOL, problem=problem)
    x0 = replicate_profile(PROFILE, N, model.K)
    v_n = VN.at(x0)
    idx, _ = V.grid.project(aggregate_blocks(lifted_population(x0, model.n_states), model.K))
    gap = abs(v_n - float(V.values[idx]))
    eps_solver = 2 * SOLVER_TOL
    parts, ok = [], True
    for name, pol in (("direct", transfer_direct(policy, N)), ("matching", matching_policy(policy, model, N))):
        g = mc_policy_gain(model, nagent, N, pol, x0, MC_TOL, MC_SAMPLES, 0, problem=problem)
        lower = v_n - (gap + eps_solver + g.ci_halfwidth + g.truncation_bound)
        upper = v_n + g.ci_halfwidth + MC_TOL
        exact = float(policy_value(problem, pol)[int(encode(x0, model.n_states))])
        ok &= lower <= g.estimate <= upper
        parts.append(f"{name} {g.estimate:.4f} (exact {exact:.4f}) in [{lower:.4f}, {upper:.4f}]")
    elapsed = time.perf_counter() - start
    ok &= elapsed < TRANSFER_SECONDS
    report(capsys, 8, f"transferred policies at N={N} against V_N(x0)={v_n:.4f}", ok,
           "; ".join(parts) + f"; {elapsed:.1f}s")
    assert ok


def test_criterion_09_weak_strong(capsys, sis, sis_grid):
    model, _ = sis
    _, _, policy = sis_grid
    mu0 = LiftedMeasure(np.eye(2)[list(PROFILE)])
    r = weak_strong_gains(model, policy, mu0, MC_TOL, WEAK_STRONG_SAMPLES, 0)
    report(capsys, 9, f"weak vs strong gains at {WEAK_STRONG_SAMPLES} samples", r.agree,
           f"weak {r.weak:.4f}, strong {r.strong:.4f}, difference {r.difference:.4f} "
           f"(combined 95% halfwidth {r.combined_halfwidth:.4f})")
    assert r.agree


def snapshot(folder):
    return {name: (folder / name).read_bytes() for name in sorted(os.listdir(folder))}


def test_criterion_10_determinism(capsys, tmp_path):
    differing, files = [], 0
    for command in ("solve-mf", "solve-n", "chaos", "transfer"):
        runs = []
        for rep in range(2):
            out = tmp_path / f"{command}-{rep}"
            assert main([command, "--config", str(QUICK), "--out", str(out), "--seed", "7"]) == 0
            runs.append(snapshot(out))
        files += len(runs[0])
        if runs[0] != runs[1]:
            differing.append(command)
    capsys.readouterr()
    outputs = []
    for _ in range(2):
        main(["transport-selftest", "--seed", "7"])
        outputs.append(capsys.readouterr().out)
    if outputs[0] != outputs[1]:
        differing.append("transport-selftest")
    ok = not differing
    report(capsys, 10, "reruns with the same config and seed are byte-identical", ok,
           f"{files} files over 4 commands plus selftest output; differing: {differing or 'none'}")
    assert ok
