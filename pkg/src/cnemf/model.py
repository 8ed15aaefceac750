"""Model declarations, evaluation, Lipschitz probes and N-agent coefficient gaps.

Conventions used across the package:

* states, actions and noise outcomes are integer indices;
* ``dynamics(block, x, a, m, e, e0)`` and ``reward(block, x, a, m)`` receive
  the population as a :class:`JointControlMeasure` on the model's ``K`` label
  blocks, so every measure dependence factors through block aggregates;
* N-agent coefficients receive the agent index ``i`` (1-based, label ``i/N``)
  and the atomic empirical measure of all agents.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import BudgetError, ConfigError, DomainError, PreconditionError
from .measures import AtomicMeasure, JointControlMeasure, aggregate_atoms, canonical_labels
from .rng import stream
from .spaces import FiniteMetricSpace, LabelGrid, NoiseSpec, agent_block
from .transport import ProductMetric, as_discrete, w1_value

Dynamics = Callable[[int, int, int, JointControlMeasure, int, int], int]
Reward = Callable[[int, int, int, JointControlMeasure], float]
NDynamics = Callable[[int, int, int, int, AtomicMeasure, int, int], int]
NReward = Callable[[int, int, int, int, AtomicMeasure], float]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Mean-field coefficients with their spaces, noise laws and discount."""

    name: str
    states: FiniteMetricSpace
    actions: FiniteMetricSpace
    labels: LabelGrid
    noise: NoiseSpec
    beta: float
    dynamics: Dynamics
    reward: Reward
    reward_bound: float
    L_F: float | None = None
    L_f: float | None = None
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"discount must lie in [0, 1), got {self.beta}")
        if self.reward_bound < 0:
            raise ConfigError("reward bound must be nonnegative")

    @property
    def K(self) -> int:
        return self.labels.K

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def n_actions(self) -> int:
        return self.actions.size

    @property
    def metric(self) -> ProductMetric:
        return ProductMetric(self.states, self.actions)

    def with_beta(self, beta: float) -> "ModelSpec":
        return _replace(self, beta=beta)

    def transition_table(self, m: JointControlMeasure, e0: int) -> np.ndarray:
        """Next state for every ``(block, x, a, e)`` under population ``m``."""
        K, nX, nA, nE = self.K, self.n_states, self.n_actions, self.noise.n_idio
        out = np.empty((K, nX, nA, nE), dtype=np.int64)
        for k, x, a, e in itertools.product(range(K), range(nX), range(nA), range(nE)):
            out[k, x, a, e] = self.dynamics(k, x, a, m, e, e0)
        return out

    def reward_table(self, m: JointControlMeasure) -> np.ndarray:
        K, nX, nA = self.K, self.n_states, self.n_actions
        out = np.empty((K, nX, nA))
        for k, x, a in itertools.product(range(K), range(nX), range(nA)):
            out[k, x, a] = self.reward(k, x, a, m)
        return out


def _replace(model: ModelSpec, **changes) -> ModelSpec:
    fields = {f: getattr(model, f) for f in model.__dataclass_fields__}
    fields.update(changes)
    return ModelSpec(**fields)


@dataclass(frozen=True, eq=False)
class NAgentSpec:
    """N-agent coefficients; ``None`` means "the mean-field coefficient at label i/N".

    ``gaps`` is either ``"compute"`` or a mapping ``N -> (eps_f, eps_F)`` of
    declared coefficient gaps.
    """

    dynamics: NDynamics | None = None
    reward: NReward | None = None
    gaps: str | Mapping[int, tuple[float, float]] = "compute"


def n_agent_coefficients(model: ModelSpec, nagent: NAgentSpec) -> tuple[NDynamics, NReward]:
    """Resolve the N-agent dynamics and reward, filling defaults from the mean-field model."""
    K, nX, nA = model.K, model.n_states, model.n_actions

    def default_dynamics(N, i, x, a, mu_n, e, e0):
        return model.dynamics(agent_block(i, N, K), x, a, aggregate_atoms(mu_n, K, nX, nA), e, e0)

    def default_reward(N, i, x, a, mu_n):
        return model.reward(agent_block(i, N, K), x, a, aggregate_atoms(mu_n, K, nX, nA))

    return nagent.dynamics or default_dynamics, nagent.reward or default_reward


def _check_measure(model: ModelSpec, m: JointControlMeasure):
    if not isinstance(m, JointControlMeasure) or m.weights.shape != (model.K, model.n_states, model.n_actions):
        shape = getattr(getattr(m, "weights", None), "shape", None)
        raise PreconditionError(
            f"population must be aggregated to {model.K} blocks over the model spaces; got shape {shape}"
        )


def eval_F(model: ModelSpec, block: int, x: int, a: int, m: JointControlMeasure, e: int, e0: int) -> int:
    """Next state of a block-``block`` agent in state ``x`` playing ``a``."""
    _check_measure(model, m)
    out = int(model.dynamics(block, x, a, m, e, e0))
    if not 0 <= out < model.n_states:
        raise DomainError(f"dynamics returned invalid state {out}")
    return out


def eval_f(model: ModelSpec, block: int, x: int, a: int, m: JointControlMeasure) -> float:
    _check_measure(model, m)
    return float(model.reward(block, x, a, m))


@dataclass(frozen=True)
class LipschitzEstimate:
    """Probe maxima; ``*_action`` variants also let the action move."""

    L_F: float
    L_F_action: float
    L_f: float
    L_f_action: float
    probes: int
    skipped: int
    flag: str = "lower estimate"


def _probe_pool(model: ModelSpec, n_random: int, rng: np.random.Generator) -> list[JointControlMeasure]:
    K, nX, nA = model.K, model.n_states, model.n_actions
    pool = []
    # corners: every block concentrated on a single (state, action) cell
    corners = list(itertools.product(range(nX * nA), repeat=K))
    if len(corners) > 64:
        corners = [corners[i] for i in rng.choice(len(corners), 64, replace=False)]
    for cells in corners:
        w = np.zeros((K, nX * nA))
        w[np.arange(K), list(cells)] = 1.0 / K
        pool.append(JointControlMeasure(w.reshape(K, nX, nA)))
    for _ in range(n_random):
        w = rng.dirichlet(np.ones(nX * nA), size=K) / K
        pool.append(JointControlMeasure(w.reshape(K, nX, nA)))
    return pool


def estimate_lipschitz(model: ModelSpec, probes: int = 200, seed: int = 0) -> LipschitzEstimate:
    """Largest observed difference ratios of ``F`` (in expectation over ``e``) and ``f``.

    Each probe draws two populations from a pool of block corners and random
    measures, plus two ``(label, state, action)`` triples; a third of the
    probes freeze the population and a third freeze label and state, so the
    label, state and measure directions are all exercised. The maxima bound
    the true constants from below.
    """
    rng = stream(seed, "estimate_lipschitz")
    pool = _probe_pool(model, max(8, probes // 10), rng)
    reps = model.labels.representatives
    dX, dA = model.states.dist, model.actions.dist
    lam = model.noise.idio_probs
    K, nX, nA = model.K, model.n_states, model.n_actions
    w_cache: dict[tuple[int, int], float] = {}
    best = dict(F=0.0, Fa=0.0, f=0.0, fa=0.0)
    used = skipped = 0
    for p in range(probes):
        i, j = rng.integers(len(pool), size=2)
        k1, k2 = rng.integers(K, size=2)
        x1, x2 = rng.integers(nX, size=2)
        a1, a2 = rng.integers(nA, size=2)
        if p % 3 == 1:
            j = i
        elif p % 3 == 2:
            k2, x2 = k1, x1
        key = (min(i, j), max(i, j))
        if key not in w_cache:
            w_cache[key] = 0.0 if i == j else w1_value(as_discrete(pool[i]), as_discrete(pool[j]), model.metric)
        base = abs(reps[k1] - reps[k2]) + dX[x1, x2] + w_cache[key]
        denoms = {"": base, "a": base + dA[a1, a2]}
        m1, m2 = pool[i], pool[j]
        for act_key, (b1, b2) in (("", (a1, a1)), ("a", (a1, a2))):
            den = denoms[act_key]
            if den <= 0:
                skipped += 1
                continue
            used += 1
            df = abs(model.reward(k1, x1, b1, m1) - model.reward(k2, x2, b2, m2))
            dF = 0.0
            for e0 in range(model.noise.n_common):
                exp = sum(
                    lam[e] * dX[model.dynamics(k1, x1, b1, m1, e, e0), model.dynamics(k2, x2, b2, m2, e, e0)]
                    for e in range(model.noise.n_idio)
                )
                dF = max(dF, exp)
            best["f" + act_key] = max(best["f" + act_key], df / den)
            best["F" + act_key] = max(best["F" + act_key], dF / den)
    if used == 0:
        raise DomainError("every Lipschitz probe had a zero denominator")
    return LipschitzEstimate(best["F"], best["Fa"], best["f"], best["fa"], used, skipped)


@dataclass(frozen=True)
class LipschitzChoice:
    L_F: float
    L_f: float
    source_F: str
    source_f: str


def lipschitz_constants(model: ModelSpec, estimate: LipschitzEstimate | None = None, probes: int = 200,
                        seed: int = 0) -> LipschitzChoice:
    """Supplied constants where available, probe estimates otherwise."""
    if model.L_F is not None and model.L_f is not None:
        return LipschitzChoice(model.L_F, model.L_f, "supplied", "supplied")
    est = estimate or estimate_lipschitz(model, probes=probes, seed=seed)
    return LipschitzChoice(
        model.L_F if model.L_F is not None else est.L_F,
        model.L_f if model.L_f is not None else est.L_f,
        "supplied" if model.L_F is not None else est.flag,
        "supplied" if model.L_f is not None else est.flag,
    )


@dataclass(frozen=True)
class GapEstimate:
    eps_f: float
    eps_F: float
    N: int
    configurations: int
    exhaustive: bool
    source: str = "computed"


def model_gaps(
    model: ModelSpec,
    nagent: NAgentSpec,
    N: int,
    cap: int = 100_000,
    samples: int = 0,
    seed: int = 0,
) -> GapEstimate:
    """Coefficient gaps between the mean-field and N-agent models.

    ``eps_f`` is the largest agent-averaged reward difference and ``eps_F``
    the largest agent-averaged expected state distance, both over all joint
    state-action configurations. When there are more than ``cap``
    configurations, ``samples`` random ones are scanned instead and the result
    is flagged as non-exhaustive (a lower estimate of the supremum).
    """
    if not isinstance(nagent.gaps, str):
        if N not in nagent.gaps:
            raise ConfigError(f"no declared coefficient gaps for N={N}")
        ef, eF = nagent.gaps[N]
        return GapEstimate(float(ef), float(eF), N, 0, True, source="declared")
    nX, nA, K = model.n_states, model.n_actions, model.K
    total = (nX * nA) ** N
    if total <= cap:
        configs = itertools.product(range(nX * nA), repeat=N)
        count, exhaustive = total, True
    elif samples > 0:
        rng = stream(seed, f"model_gaps/{N}")
        configs = (tuple(row) for row in rng.integers(nX * nA, size=(samples, N)))
        count, exhaustive = samples, False
    else:
        raise BudgetError(
            f"{total} configurations at N={N} exceed the enumeration cap {cap}; pass samples > 0 to sample instead"
        )
    FN, fN = n_agent_coefficients(model, nagent)
    labels = canonical_labels(N)
    blocks = [agent_block(i, N, K) for i in range(1, N + 1)]
    lam, lam0 = model.noise.idio_probs, model.noise.common_probs
    dX = model.states.dist
    eps_f = eps_F = 0.0
    for cfg in configs:
        xs = [c // nA for c in cfg]
        acts = [c % nA for c in cfg]
        mu_n = AtomicMeasure(labels, xs, acts)
        m = aggregate_atoms(mu_n, K, nX, nA)
        gf = gF = 0.0
        for i in range(1, N + 1):
            x, a, b = xs[i - 1], acts[i - 1], blocks[i - 1]
            gf += abs(model.reward(b, x, a, m) - fN(N, i, x, a, mu_n))
            for e0, p0 in enumerate(lam0):
                for e, p in enumerate(lam):
                    gF += p0 * p * dX[model.dynamics(b, x, a, m, e, e0), FN(N, i, x, a, mu_n, e, e0)]
        eps_f = max(eps_f, gf / N)
        eps_F = max(eps_F, gF / N)
    return GapEstimate(eps_f, eps_F, N, count, exhaustive)


def reward_bound_check(model: ModelSpec, measures) -> float:
    """Largest ``|f|`` over all cells and the given populations."""
    worst = 0.0
    for m in measures:
        worst = max(worst, float(np.abs(model.reward_table(m)).max()))
    return worst


def horizon_for(tol: float, beta: float, reward_bound: float) -> int:
    """Smallest ``T`` with ``beta^T * reward_bound / (1 - beta) <= tol / 2``."""
    if tol <= 0:
        raise ConfigError("tolerance must be positive")
    if beta == 0 or reward_bound == 0:
        return 1
    return max(1, math.ceil(math.log(tol * (1 - beta) / (2 * reward_bound)) / math.log(beta)))
