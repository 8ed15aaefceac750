"""How close do small populations get to their mean-field limit?

Solves the two-block SIS epidemic on the measure grid, solves the 2- and
4-agent versions exactly, and sets the value gap at the same initial
profile against the rate built from sampling error and coefficient gaps.
Then looks one level down, at single Bellman steps, where the gap is
driven by how well a joint action reproduces the kernel's law.

    python demos/chaos_walkthrough.py
"""

from cnemf.chaos import ChaosConfig, operator_gap_diagnostics, run_chaos_experiment
from cnemf.families import build_model
from cnemf.meanfield import MeasureGrid, solve_mean_field

model, nagent = build_model("heterogeneous-sis", 0.5)
grid = MeasureGrid(model.K, model.n_states, 10)
V, policy = solve_mean_field(model, grid, tol=1e-6)
print(f"mean-field grid: {grid.size} measures, value iteration stopped after {V.iterations} sweeps")

report = run_chaos_experiment(model, nagent, (0, 1), [2, 4], ChaosConfig(q=10), solved=(V, policy))
print("\nblock 0 starts susceptible, block 1 infected")
print(f"{'N':>3} {'V_N(x0)':>10} {'mean-field':>11} {'gap':>8} {'rate':>8} {'gap/rate':>9}")
for row in report.completed():
    print(f"{row.N:>3} {row.value_N:>10.4f} {row.value_mf:>11.4f} {row.gap:>8.4f} {row.bound:>8.4f} {row.ratio:>9.4f}")
print(f"gap/rate varies by a factor {report.ratio_spread():.2f} across N; only its stability is meaningful,")
print(f"since the multiplicative constant is unknown. gamma = {report.meta['gamma']:.3f} "
      f"(Lipschitz source: {report.meta['lipschitz_source_F']})")

diag = operator_gap_diagnostics(model, nagent, 2, V, samples=30, clouds=100)
print("\none Bellman step at N=2: operator gap against the transport driver")
for kind in ("matched", "induced", "random"):
    rows = [s for s in diag.samples if s.kind == kind]
    gap = sum(s.operator_gap for s in rows) / len(rows)
    drv = sum(s.driver for s in rows) / len(rows)
    print(f"  {kind:<8} mean driver {drv:.4f}  mean operator gap {gap:.4f}")
print(f"least-squares slope of gap on driver^gamma: {diag.slope:.3f}")
check = diag.sampling_bound
print(f"sampled clouds vs atomic empirical: {check.mean_distance:.4f} <= {check.bound:.4f} -> {check.holds}")
