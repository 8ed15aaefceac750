"""Command-line entry point: ``cnemf <command> --config FILE [--out DIR] [--seed N]``.

Commands: ``solve-mf``, ``solve-n``, ``chaos``, ``transfer``, ``transport-selftest``.
Outputs are named ``<stem>-<config hash>.<ext>``, carry the config hash and
seed, and are written atomically. Exit status: 0 success, 1 failed check,
2 bad configuration, 3 refused (budget or unsupported setting).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from .chaos import ChaosConfig, lifted_population, replicate_profile, run_chaos_experiment
from .config import ExperimentConfig, parse_config
from .errors import BudgetError, ConfigError, UnsupportedError
from .families import build_model
from .measures import aggregate_blocks
from .meanfield import MeasureGrid, SearchConfig, policy_csv, solve_mean_field
from .meanfield import value_table_csv as mf_values_csv
from .model import horizon_for, model_gaps
from .nagent import NAgentProblem, encode, mc_policy_gain, policy_value, solve_n_agent
from .nagent import value_table_csv as n_values_csv
from .selftest import transport_selftest
from .transfer import action_table_csv, estimate_regularity_K, matching_policy, transfer_direct

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_REFUSED = 0, 1, 2, 3


def write_atomic(path: str, text: str):
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Outputs:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.hash = cfg.config_hash()
        self.written: list[str] = []

    def path(self, stem: str, ext: str) -> str:
        return os.path.join(self.cfg.output, f"{stem}-{self.hash}.{ext}")

    def csv(self, stem: str, body: str):
        header = f"# config_hash={self.hash} seed={self.cfg.seed}\n"
        self._write(self.path(stem, "csv"), header + body)

    def json(self, stem: str, payload: dict):
        doc = {"config_hash": self.hash, "seed": self.cfg.seed, "config": self.cfg.as_dict(), **payload}
        text = json.dumps(_clean(doc), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        self._write(self.path(stem, "json"), text)

    def _write(self, path: str, text: str):
        write_atomic(path, text)
        self.written.append(path)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _model(cfg: ExperimentConfig):
    m = cfg.model
    return build_model(m.family, m.beta, **m.params, L_F=m.L_F, L_f=m.L_f)


def _search(cfg: ExperimentConfig) -> SearchConfig:
    s = cfg.solver
    return SearchConfig(budget=s.search_budget, restarts=s.restarts, kernel_mesh=s.kernel_mesh, seed=cfg.seed)


def _profile(cfg: ExperimentConfig, model) -> tuple:
    if cfg.nagent.profile is not None:
        if len(cfg.nagent.profile) != model.K or max(cfg.nagent.profile) >= model.n_states:
            raise ConfigError(f"nagent.profile needs {model.K} state indices below {model.n_states}")
        return cfg.nagent.profile
    return tuple(k % model.n_states for k in range(model.K))


def _solve_mf(cfg: ExperimentConfig, model):
    grid = MeasureGrid(model.K, model.n_states, cfg.solver.q, model.states.diameter)
    return solve_mean_field(model, grid, tol=cfg.solver.tol, search=_search(cfg))


def cmd_solve_mf(cfg: ExperimentConfig, out: Outputs) -> int:
    model, _ = _model(cfg)
    V, policy = _solve_mf(cfg, model)
    out.csv("mf-values", mf_values_csv(V))
    out.csv("mf-policy", policy_csv(policy))
    out.json("solve-mf", dict(iterations=V.iterations, residual=V.residual, tol=V.tol, meta=V.meta,
                              grid_points=V.grid.size))
    return EXIT_OK


def cmd_solve_n(cfg: ExperimentConfig, out: Outputs) -> int:
    model, nagent = _model(cfg)
    summary = []
    for N in cfg.nagent.Ns:
        VN = solve_n_agent(model, nagent, N, tol=cfg.solver.tol, budget=cfg.nagent.budget)
        out.csv(f"nagent-values-N{N}", n_values_csv(VN))
        summary.append(dict(N=N, iterations=VN.iterations, residual=VN.residual, tol=VN.tol))
    out.json("solve-n", dict(runs=summary))
    return EXIT_OK


def _chaos_config(cfg: ExperimentConfig) -> ChaosConfig:
    return ChaosConfig(
        q=cfg.solver.q, tol=cfg.solver.tol, search=_search(cfg), mn_samples=cfg.chaos.mn_samples, seed=cfg.seed,
        gap_cap=cfg.nagent.gap_cap, gap_samples=cfg.nagent.gap_samples,
        lipschitz_probes=cfg.chaos.lipschitz_probes, budget=cfg.nagent.budget, gamma_uses=cfg.chaos.gamma_uses,
    )


def cmd_chaos(cfg: ExperimentConfig, out: Outputs) -> int:
    model, nagent = _model(cfg)
    for N in cfg.nagent.Ns:
        if N % model.K:
            raise UnsupportedError(f"block count K={model.K} does not divide N={N}")
    report = run_chaos_experiment(model, nagent, _profile(cfg, model), cfg.nagent.Ns, _chaos_config(cfg))
    out.csv("chaos", report.to_csv())
    out.json("chaos", json.loads(report.to_json()))
    return EXIT_OK


TRANSFER_COLUMNS = ["N", "policy", "mc_estimate", "ci_halfwidth", "truncation_bound", "horizon", "exact_value",
                    "value_N", "chaos_gap", "lower_envelope", "upper_envelope"]


def cmd_transfer(cfg: ExperimentConfig, out: Outputs) -> int:
    model, nagent = _model(cfg)
    for N in cfg.nagent.Ns:
        if N % model.K:
            raise UnsupportedError(f"block count K={model.K} does not divide N={N}")
    V, policy = _solve_mf(cfg, model)
    profile = _profile(cfg, model)
    regularity = estimate_regularity_K(policy, model)
    lines = [",".join(TRANSFER_COLUMNS)]
    rows = []
    for N in cfg.nagent.Ns:
        problem = NAgentProblem(model, nagent, N, cfg.nagent.budget)
        VN = solve_n_agent(model, nagent, N, tol=cfg.solver.tol, problem=problem)
        x0 = replicate_profile(profile, N, model.K)
        vN = VN.at(x0)
        idx, _ = V.grid.project(aggregate_blocks(lifted_population(x0, model.n_states), model.K))
        gap = abs(vN - float(V.values[idx]))
        policies = {"direct": transfer_direct(policy, N),
                    "matching": matching_policy(policy, model, N, cfg.nagent.match_budget)}
        for name, pol in policies.items():
            out.csv(f"transfer-{name}-N{N}", action_table_csv(pol, model.n_states))
            g = mc_policy_gain(model, nagent, N, pol, x0, cfg.nagent.mc_tol, cfg.nagent.mc_samples, cfg.seed,
                               problem=problem)
            exact = float(policy_value(problem, pol)[int(encode(x0, model.n_states))])
            solver_eps = 2 * cfg.solver.tol
            row = dict(N=N, policy=name, mc_estimate=g.estimate, ci_halfwidth=g.ci_halfwidth,
                       truncation_bound=g.truncation_bound, horizon=g.horizon, exact_value=exact, value_N=vN,
                       chaos_gap=gap, lower_envelope=vN - (gap + solver_eps + g.ci_halfwidth + g.truncation_bound),
                       upper_envelope=vN + g.ci_halfwidth + cfg.nagent.mc_tol)
            rows.append(row)
            lines.append(",".join(repr(float(row[c])) if isinstance(row[c], float) else str(row[c])
                                  for c in TRANSFER_COLUMNS))
    out.csv("transfer", "\n".join(lines) + "\n")
    gaps = {str(N): model_gaps(model, nagent, N, cap=cfg.nagent.gap_cap, samples=cfg.nagent.gap_samples,
                               seed=cfg.seed).__dict__ for N in cfg.nagent.Ns}
    out.json("transfer", dict(rows=rows, regularity_K=regularity.value, regularity_pairs=regularity.pairs,
                              bound_factor=1 + regularity.value, coefficient_gaps=gaps,
                              horizon=horizon_for(cfg.nagent.mc_tol, model.beta, model.reward_bound)))
    return EXIT_OK


def cmd_selftest(cfg: ExperimentConfig | None, seed: int) -> int:
    results = transport_selftest(seed=seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAILED


COMMANDS = {"solve-mf": cmd_solve_mf, "solve-n": cmd_solve_n, "chaos": cmd_chaos, "transfer": cmd_transfer}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnemf", description="Mean-field and N-agent MDP solver lab.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "transport-selftest"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "transport-selftest", help="YAML experiment file")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    return parser


def run_command(command: str, cfg: ExperimentConfig | None, seed: int | None = None) -> int:
    if command == "transport-selftest":
        return cmd_selftest(cfg, seed if seed is not None else (cfg.seed if cfg else 0))
    out = Outputs(cfg)
    status = COMMANDS[command](cfg, out)
    for path in out.written:
        print(path)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an integer in [0, 2^64)")
        cfg = parse_config(args.config) if args.config else None
        if cfg is not None:
            cfg = cfg.with_overrides(seed=args.seed, output=args.out)
        return run_command(args.command, cfg, args.seed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BudgetError, UnsupportedError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED


if __name__ == "__main__":
    sys.exit(main())
