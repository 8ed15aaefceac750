"""Propagation-of-chaos experiments and operator-level diagnostics.

``run_chaos_experiment`` compares the N-agent value at ``x0`` with the
mean-field value at the lifted empirical measure of ``x0`` for several ``N``
and sets the gap against the rate ``M_N^gamma + eps_f + eps_F^gamma``. The
unknown multiplicative constant is never estimated; only the stability of
``gap / rate`` across ``N`` is meaningful.

``M_N`` is a supremum over all measures. It is replaced by a Monte-Carlo
estimate at the measure actually visited, and every report says so.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BudgetError, ConfigError, UnsupportedError
from .measures import (
    LiftedMeasure,
    PolicyKernel,
    aggregate_blocks,
    compose_kernel,
    make_empirical,
)
from .meanfield import (
    MeasureGrid,
    RandomizedFeedbackPolicy,
    SearchConfig,
    ValueTable,
    holder_data,
    lifted_reward,
    lifted_step,
    solve_mean_field,
)
from .model import ModelSpec, NAgentSpec, horizon_for, lipschitz_constants, model_gaps
from .nagent import NAgentProblem, bellman_N_apply, decode, encode, solve_n_agent
from .rng import inverse_cdf, stream
from .spaces import agent_block
from .transfer import empirical_law, kernel_action_laws, law_from_action_laws, transfer_matching
from .transport import DiscreteMeasure, ProductMetric, estimate_MN, sample_cloud, w1_value

MN_LABEL = "M̂_N (visited-measure proxy)"
Z95 = 1.959963984540054


@dataclass(frozen=True)
class ChaosConfig:
    q: int = 10
    tol: float = 1e-6
    search: SearchConfig = SearchConfig()
    mn_samples: int = 200
    seed: int = 0
    gap_cap: int = 100_000
    gap_samples: int = 0
    lipschitz_probes: int = 200
    budget: int = 10_000_000
    gamma_uses: str = "L_F"


@dataclass(frozen=True)
class ChaosRow:
    N: int
    status: str
    x0: tuple = ()
    value_N: float = math.nan
    value_mf: float = math.nan
    gap: float = math.nan
    M_hat: float = math.nan
    M_hat_stderr: float = math.nan
    eps_f: float = math.nan
    eps_F: float = math.nan
    gamma: float = math.nan
    bound: float = math.nan
    ratio: float = math.nan
    projection_slack: float = math.nan
    note: str = ""


CSV_COLUMNS = [
    "N", "status", "x0", "value_N", "value_mf", "gap", "M_hat", "M_hat_stderr", "eps_f", "eps_F",
    "gamma", "bound", "ratio", "projection_slack", "note",
]


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(str(int(s)) for s in v)
    return str(v)


@dataclass(frozen=True)
class ChaosReport:
    rows: list
    meta: dict = field(default_factory=dict)

    def completed(self) -> list:
        return [r for r in self.rows if r.status == "ok"]

    def ratio_spread(self) -> float:
        """``max ratio / min ratio`` over completed rows (``inf`` if a ratio is zero)."""
        ratios = [r.ratio for r in self.completed()]
        if not ratios:
            return math.nan
        lo, hi = min(ratios), max(ratios)
        return hi / lo if lo > 0 else (1.0 if hi == 0 else math.inf)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.rows:
            d = asdict(r)
            buf.write(",".join(_cell(d[c]).replace(",", ";") for c in CSV_COLUMNS) + "\n")
        return buf.getvalue()

    def to_json(self) -> str:
        rows = []
        for r in self.rows:
            d = asdict(r)
            d["x0"] = [int(s) for s in r.x0]
            rows.append({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()})
        return json.dumps({"meta": self.meta, "rows": rows}, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def replicate_profile(profile, N: int, K: int) -> np.ndarray:
    """Joint state giving every agent of block ``k`` the state ``profile[k]``."""
    profile = np.asarray(profile, dtype=np.int64)
    if profile.shape != (K,):
        raise ConfigError(f"initial profile needs one state per block ({K})")
    if N % K:
        raise UnsupportedError(f"block count K={K} does not divide N={N}")
    return np.repeat(profile, N // K)


def lifted_population(x: np.ndarray, n_states: int) -> LiftedMeasure:
    """``N``-block lifted empirical measure of a joint state."""
    N = len(x)
    return make_empirical(np.arange(1, N + 1) / N, x, lifted=True, n_states=n_states)


def run_chaos_experiment(
    model: ModelSpec,
    nagent: NAgentSpec,
    profile,
    Ns,
    config: ChaosConfig = ChaosConfig(),
    solved: tuple[ValueTable, RandomizedFeedbackPolicy] | None = None,
) -> ChaosReport:
    """Gap between ``V_N(x0)`` and the mean-field value at the lifted empirical of ``x0``, per ``N``.

    ``x0`` replicates the block profile, so its aggregated lifted empirical
    is the same measure for every ``N``. ``N`` beyond the exact-DP budget
    yields a skipped row; ``N`` not divisible by the block count is refused.
    """
    K = model.K
    for N in Ns:
        if N < 1 or N % K:
            raise UnsupportedError(f"block count K={K} does not divide N={N}")
    if solved is None:
        grid = MeasureGrid(K, model.n_states, config.q, model.states.diameter)
        solved = solve_mean_field(model, grid, tol=config.tol, search=config.search)
    V, _ = solved
    constants = lipschitz_constants(model, probes=config.lipschitz_probes, seed=config.seed)
    hd = holder_data(model, constants, uses=config.gamma_uses)
    gamma = hd.gamma
    metric = ProductMetric(model.states)
    rows, gap_sources = [], {}
    for N in Ns:
        x0 = replicate_profile(profile, N, K)
        problem = NAgentProblem(model, nagent, N, config.budget)
        try:
            problem.check_budget()
        except BudgetError as exc:
            rows.append(ChaosRow(N, "skipped", tuple(x0), note=str(exc)))
            continue
        VN = solve_n_agent(model, nagent, N, tol=config.tol, problem=problem)
        mu = aggregate_blocks(lifted_population(x0, model.n_states), K)
        idx, slack = V.grid.project(mu)
        v_mf = float(V.values[idx])
        v_n = VN.at(x0)
        mn = estimate_MN(mu, N, config.mn_samples, config.seed, metric, purpose=f"chaos/M_N/{N}")
        gaps = model_gaps(model, nagent, N, cap=config.gap_cap, samples=config.gap_samples, seed=config.seed)
        gap_sources[str(N)] = "exhaustive" if gaps.exhaustive else f"sampled ({gaps.configurations})"
        bound = mn.mean**gamma + gaps.eps_f + gaps.eps_F**gamma
        gap = abs(v_n - v_mf)
        rows.append(
            ChaosRow(
                N, "ok", tuple(int(s) for s in x0), float(v_n), v_mf, float(gap), mn.mean, mn.stderr,
                float(gaps.eps_f), float(gaps.eps_F), gamma, float(bound),
                float(gap / bound) if bound > 0 else (0.0 if gap == 0 else math.inf), slack, MN_LABEL,
            )
        )
    meta = dict(
        model=model.name,
        params={k: v for k, v in model.params.items()},
        beta=model.beta,
        profile=[int(s) for s in np.asarray(profile)],
        Ns=[int(n) for n in Ns],
        q=V.grid.q,
        tol=config.tol,
        tolerance_envelope=2 * (config.tol + float(V.meta.get("projection_slack", 0.0) or 0.0)),
        search=V.meta.get("search"),
        search_slack=V.meta.get("search_slack"),
        seed=config.seed,
        mn_samples=config.mn_samples,
        mn_label=MN_LABEL,
        gamma=gamma,
        gamma_from_L_F=hd.gamma_from_L_F,
        gamma_from_L_f=hd.gamma_from_L_f,
        gamma_uses=hd.uses,
        L_F=hd.L_F,
        L_f=hd.L_f,
        lipschitz_source_F=hd.source_F,
        lipschitz_source_f=hd.source_f,
        gap_sources=gap_sources,
    )
    return ChaosReport(rows, _plain(meta))


def _plain(obj):
    """Convert numpy scalars and containers to JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def unlifted_values(V: ValueTable, N: int, n_states: int) -> np.ndarray:
    """``V`` at the lifted empirical of every joint state, indexed like the N-agent tables."""
    out = np.empty(n_states**N)
    for s in range(len(out)):
        out[s] = V(lifted_population(decode(s, n_states, N), n_states))
    return out


def mean_field_operator(model: ModelSpec, V: ValueTable, mu: LiftedMeasure, kernel: np.ndarray) -> float:
    """``f(mu, a) + beta * E[V(next)]`` for the control built from ``kernel`` at ``mu``."""
    a = compose_kernel(mu, PolicyKernel(kernel))
    value = lifted_reward(model, mu, a)
    for e0, p0 in enumerate(model.noise.common_probs):
        value += model.beta * p0 * V(lifted_step(model, mu, a, e0))
    return value


def kernel_of_actions(x: np.ndarray, actions: np.ndarray, K: int, n_states: int, n_actions: int) -> np.ndarray:
    """Block kernel of empirical action frequencies; cells nobody occupies get the uniform law."""
    N = len(x)
    counts = np.zeros((K, n_states, n_actions))
    for i in range(1, N + 1):
        counts[agent_block(i, N, K), x[i - 1], actions[i - 1]] += 1
    mass = counts.sum(axis=2, keepdims=True)
    return np.where(mass > 0, counts / np.where(mass > 0, mass, 1), 1.0 / n_actions)


@dataclass(frozen=True)
class OperatorSample:
    kind: str
    x: tuple
    actions: tuple
    operator_gap: float
    driver: float
    driver_term: float


@dataclass(frozen=True)
class SamplingBoundCheck:
    N: int
    clouds: int
    mean_distance: float
    stderr: float
    M_hat: float
    M_hat_stderr: float
    bound: float
    holds: bool


@dataclass(frozen=True)
class OperatorDiagnostics:
    N: int
    gamma: float
    samples: list
    slope: float
    intercept: float
    constant_term: float
    M_hat: float
    eps_f: float
    eps_F: float
    sampling_bound: SamplingBoundCheck

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("kind,x,actions,operator_gap,driver,driver_term\n")
        for s in self.samples:
            buf.write(
                f"{s.kind},{_cell(s.x)},{_cell(s.actions)},{s.operator_gap!r},{s.driver!r},{s.driver_term!r}\n"
            )
        return buf.getvalue()


def sampling_bound_check(
    model: ModelSpec, x: np.ndarray, clouds: int, seed: int, purpose: str = "sampling_bound"
) -> SamplingBoundCheck:
    """Mean W1 between an N-sample cloud of the lifted empirical and the atomic empirical of ``x``.

    The clouds are the ones ``estimate_MN`` draws under the same seed and
    purpose, so both averages see identical samples.
    """
    x = np.asarray(x, dtype=np.int64)
    N = len(x)
    metric = ProductMetric(model.states)
    lifted = lifted_population(x, model.n_states)
    mn = estimate_MN(lifted, N, clouds, seed, metric, purpose=purpose)
    atoms = DiscreteMeasure(np.column_stack([np.arange(1, N + 1) / N, x]), np.full(N, 1.0 / N))
    vals = np.empty(clouds)
    for s in range(clouds):
        cloud = sample_cloud(lifted, N, stream(seed, purpose, s))
        vals[s] = w1_value(DiscreteMeasure(cloud, np.full(N, 1.0 / N)), atoms, metric)
    se = float(vals.std(ddof=1) / math.sqrt(clouds))
    mean = float(vals.mean())
    bound = mn.mean + 1.0 / (2 * N) + 3 * se
    return SamplingBoundCheck(N, clouds, mean, se, mn.mean, mn.stderr, bound, mean <= bound)


def operator_gap_diagnostics(
    model: ModelSpec,
    nagent: NAgentSpec,
    N: int,
    V: ValueTable,
    samples: int = 30,
    seed: int = 0,
    gamma: float | None = None,
    clouds: int = 200,
    budget: int = 10_000_000,
    match_budget: int = 100_000,
) -> OperatorDiagnostics:
    """Compare the mean-field operator at the lifted empirical with the N-agent operator on the unlifted ``V``.

    Samples come in three kinds: ``matched`` (random block map, joint action
    from ``transfer_matching``), ``induced`` (random joint action, block
    kernel of its action frequencies) and ``random`` (both independent). The
    driver is the W1 distance between the law the kernel induces and the
    empirical label-state-action measure.
    """
    K, nX, nA = model.K, model.n_states, model.n_actions
    if N % K:
        raise UnsupportedError(f"block count K={K} does not divide N={N}")
    problem = NAgentProblem(model, nagent, N, budget)
    problem.check_budget()
    if gamma is None:
        gamma = holder_data(model, lipschitz_constants(model, seed=seed)).gamma
    metric = ProductMetric(model.states, model.actions)
    unlifted = unlifted_values(V, N, nX)
    rng = stream(seed, f"operator_gap/{N}")
    kinds = ("matched", "induced", "random")
    pending = []
    for k in range(samples):
        kind = kinds[k % 3]
        x = rng.integers(nX, size=N)
        if kind == "induced":
            acts = rng.integers(nA, size=N)
            kernel = kernel_of_actions(x, acts, K, nX, nA)
        else:
            kernel = np.eye(nA)[rng.integers(nA, size=(K, nX))]
            if kind == "matched":
                policy = RandomizedFeedbackPolicy(V.grid, np.broadcast_to(kernel, (V.grid.size, K, nX, nA)))
                acts = transfer_matching(policy, model, x, match_budget).actions
            else:
                acts = rng.integers(nA, size=N)
        pending.append((kind, x, np.asarray(acts), kernel))
    probe_x = rng.integers(nX, size=N)
    bound_check = sampling_bound_check(model, probe_x, clouds, seed, purpose=f"operator_gap/sampling_bound/{N}")
    gaps = model_gaps(model, nagent, N)
    constant = bound_check.M_hat**gamma + gaps.eps_f + gaps.eps_F**gamma
    out = []
    for kind, x, acts, kernel in pending:
        mu = aggregate_blocks(lifted_population(x, nX), K)
        mf = mean_field_operator(model, V, mu, kernel)
        nv = bellman_N_apply(problem, unlifted, "fixed-action", acts)[int(encode(x, nX))]
        law = law_from_action_laws(x, kernel_action_laws(kernel, x))
        drv = w1_value(law, empirical_law(x, acts), metric)
        out.append(OperatorSample(kind, tuple(int(v) for v in x), tuple(int(v) for v in acts),
                                  float(abs(mf - nv)), float(drv), float(drv**gamma + constant)))
    drivers = np.array([s.driver**gamma for s in out])
    opgaps = np.array([s.operator_gap for s in out])
    if len(out) >= 2 and np.ptp(drivers) > 0:
        slope, intercept = np.polyfit(drivers, opgaps, 1)
    else:
        slope, intercept = 0.0, float(opgaps.mean()) if len(out) else 0.0
    return OperatorDiagnostics(N, gamma, out, float(slope), float(intercept), float(constant), bound_check.M_hat,
                               float(gaps.eps_f), float(gaps.eps_F), bound_check)


@dataclass(frozen=True)
class WeakStrongReport:
    weak: float
    weak_stderr: float
    strong: float
    strong_stderr: float
    horizon: int
    samples: int

    @property
    def difference(self) -> float:
        return self.weak - self.strong

    @property
    def combined_halfwidth(self) -> float:
        return Z95 * math.hypot(self.weak_stderr, self.strong_stderr)

    @property
    def agree(self) -> bool:
        return abs(self.difference) <= self.combined_halfwidth


class _MeasurePath:
    """Population measures along common-noise histories, built lazily as a tree."""

    def __init__(self, model: ModelSpec, policy: RandomizedFeedbackPolicy, mu0: LiftedMeasure):
        self.model, self.policy = model, policy
        self.measures: list[LiftedMeasure] = []
        self.kernels: list[np.ndarray] = []
        self.rewards: list[np.ndarray] = []
        self.moves: list[np.ndarray] = []
        self.children: list[dict] = []
        self._add(mu0)

    def _add(self, mu: LiftedMeasure) -> int:
        kernel = self.policy.kernel_at(mu).probs
        a = compose_kernel(mu, PolicyKernel(kernel))
        self.measures.append(mu)
        self.kernels.append(kernel)
        self.rewards.append(self.model.reward_table(a))
        self.moves.append(np.stack([self.model.transition_table(a, e0) for e0 in range(self.model.noise.n_common)]))
        self.children.append({})
        return len(self.measures) - 1

    def child(self, node: int, e0: int) -> int:
        nxt = self.children[node].get(e0)
        if nxt is None:
            mu = self.measures[node]
            a = compose_kernel(mu, PolicyKernel(self.kernels[node]))
            nxt = self._add(lifted_step(self.model, mu, a, e0))
            self.children[node][e0] = nxt
        return nxt


def weak_strong_gains(
    model: ModelSpec,
    policy: RandomizedFeedbackPolicy,
    mu0: LiftedMeasure,
    tol: float,
    samples: int,
    seed: int,
) -> WeakStrongReport:
    """Monte-Carlo gains of one randomized feedback policy in two formulations.

    Weak: one agent with a uniformly drawn label. Strong: one agent per label
    block, gains averaged over blocks. Both share the common-noise draws and
    the population path they induce; idiosyncratic noise and action
    randomization are independent.
    """
    if samples < 2:
        raise ConfigError("weak_strong_gains needs at least 2 samples")
    K = model.K
    T = horizon_for(tol, model.beta, model.reward_bound)
    lam, lam0 = model.noise.idio_probs, model.noise.common_probs
    path = _MeasurePath(model, policy, mu0)
    rows0 = mu0.rows
    u = stream(seed, "weak_strong/weak/label").random(samples)
    wb = np.clip(np.ceil(u * K).astype(np.int64) - 1, 0, K - 1)
    wx = inverse_cdf(rows0[wb], stream(seed, "weak_strong/weak/init").random(samples))
    sb = np.broadcast_to(np.arange(K), (samples, K))
    sx = inverse_cdf(np.broadcast_to(rows0, (samples, K, rows0.shape[1])),
                     stream(seed, "weak_strong/strong/init").random((samples, K)))
    node = np.zeros(samples, dtype=np.int64)
    weak = np.zeros(samples)
    strong = np.zeros(samples)
    for t in range(T):
        disc = model.beta**t
        e0 = inverse_cdf(lam0, stream(seed, "weak_strong/common", t).random(samples))
        wz = stream(seed, "weak_strong/weak/policy", t).random(samples)
        we = inverse_cdf(lam, stream(seed, "weak_strong/weak/idio", t).random(samples))
        sz = stream(seed, "weak_strong/strong/policy", t).random((samples, K))
        se = inverse_cdf(lam, stream(seed, "weak_strong/strong/idio", t).random((samples, K)))
        new_node = np.empty_like(node)
        for n in np.unique(node):
            sel = node == n
            kern, rew, mov = path.kernels[n], path.rewards[n], path.moves[n]
            wa = inverse_cdf(kern[wb[sel], wx[sel]], wz[sel])
            weak[sel] += disc * rew[wb[sel], wx[sel], wa]
            ee0 = e0[sel]
            wx[sel] = mov[ee0, wb[sel], wx[sel], wa, we[sel]]
            b, x = sb[sel], sx[sel]
            sa = inverse_cdf(kern[b, x], sz[sel])
            strong[sel] += disc * rew[b, x, sa].mean(axis=1)
            sx[sel] = mov[ee0[:, None], b, x, sa, se[sel]]
            for c in np.unique(ee0):
                new_node[np.flatnonzero(sel)[ee0 == c]] = path.child(int(n), int(c))
        node = new_node
    root = math.sqrt(samples)
    return WeakStrongReport(float(weak.mean()), float(weak.std(ddof=1) / root),
                            float(strong.mean()), float(strong.std(ddof=1) / root), T, samples)
