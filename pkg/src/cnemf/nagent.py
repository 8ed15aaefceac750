"""The finite N-agent MDP: exact Bellman operator, value iteration, simulation.

Joint states and joint actions are numbered in mixed radix with agent 1 most
significant, so increasing index is lexicographic order of the vectors.

Given the common noise, agent ``i``'s next state depends only on its own
idiosyncratic draw, so the law of the next joint state is a product of
per-agent marginals. The exact expectation ``E[W(next)]`` is therefore
computed by contracting ``W`` against one marginal per agent, which equals
the sum over all ``|E|^N |E0|`` noise combinations.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BudgetError, ConfigError
from .measures import AtomicMeasure, canonical_labels
from .meanfield import TIE_TOL, max_iterations, value_iteration
from .model import ModelSpec, NAgentSpec, horizon_for, n_agent_coefficients
from .rng import inverse_cdf, stream

DEFAULT_BUDGET = 10_000_000


def exact_cost(model: ModelSpec, N: int) -> int:
    """Elementary evaluations of one exact sweep, ``|X|^N |A|^N |E|^N |E0|``."""
    return (model.n_states * model.n_actions * model.noise.n_idio) ** N * model.noise.n_common


def encode(vectors: np.ndarray, base: int) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.int64)
    N = vectors.shape[-1]
    return vectors @ (base ** np.arange(N - 1, -1, -1, dtype=np.int64))


def decode(index, base: int, N: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    radix = base ** np.arange(N - 1, -1, -1, dtype=np.int64)
    return (index[..., None] // radix) % base


class NAgentProblem:
    """Per-configuration rewards and per-agent transition tables, filled on demand."""

    def __init__(self, model: ModelSpec, nagent: NAgentSpec, N: int, budget: int = DEFAULT_BUDGET):
        if N < 1:
            raise ConfigError("N must be at least 1")
        self.model, self.nagent, self.N, self.budget = model, nagent, N, budget
        self.nX, self.nA = model.n_states, model.n_actions
        self.n_joint_states = self.nX**N
        self.n_joint_actions = self.nA**N
        self.F_N, self.f_N = n_agent_coefficients(model, nagent)
        self.labels = canonical_labels(N)
        self._cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        self._tables = None

    @property
    def exact_cost(self) -> int:
        return exact_cost(self.model, self.N)

    def check_budget(self):
        if self.exact_cost > self.budget:
            raise BudgetError(
                f"exact N-agent sweep at N={self.N} needs {self.exact_cost} evaluations, above the budget "
                f"{self.budget}; use Monte-Carlo evaluation (mc_policy_gain) instead"
            )

    def transitions(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-agent rewards ``(N,)`` and next states ``(N, |E|, |E0|)`` for joint indices ``s, a``."""
        key = (s, a)
        hit = self._cache.get(key)
        if hit is None:
            N = self.N
            xs = decode(s, self.nX, N)
            acts = decode(a, self.nA, N)
            mu_n = AtomicMeasure(self.labels, xs, acts)
            rew = np.array([self.f_N(N, i, xs[i - 1], acts[i - 1], mu_n) for i in range(1, N + 1)])
            nE, n0 = self.model.noise.n_idio, self.model.noise.n_common
            nxt = np.empty((N, nE, n0), dtype=np.int64)
            for i in range(1, N + 1):
                for e in range(nE):
                    for e0 in range(n0):
                        nxt[i - 1, e, e0] = self.F_N(N, i, xs[i - 1], acts[i - 1], mu_n, e, e0)
            hit = (rew, nxt)
            self._cache[key] = hit
        return hit

    def tables(self):
        """Full arrays: agent rewards ``(S, A, N)``, next states ``(S, A, N, |E|, |E0|)``,
        and per-agent marginals ``(S, A, |E0|, N, |X|)``."""
        if self._tables is None:
            self.check_budget()
            S, A, N = self.n_joint_states, self.n_joint_actions, self.N
            nE, n0 = self.model.noise.n_idio, self.model.noise.n_common
            rew = np.empty((S, A, N))
            nxt = np.empty((S, A, N, nE, n0), dtype=np.int64)
            for s in range(S):
                for a in range(A):
                    rew[s, a], nxt[s, a] = self.transitions(s, a)
            lam = self.model.noise.idio_probs
            onehot = np.eye(self.nX)[nxt]  # (S, A, N, nE, n0, nX)
            marg = np.einsum("sanezy,e->sazny", onehot, lam)
            self._tables = (rew, nxt, marg)
        return self._tables

    def expected_next(self, W: np.ndarray) -> np.ndarray:
        """``E[W(next joint state)]`` for every ``(s, a)``, averaged over the common noise."""
        _, _, marg = self.tables()
        S, A, n0, N, nX = marg.shape
        P = marg.reshape(S * A * n0, N, nX)
        T = np.einsum("bj,j...->b...", P[:, 0, :], W.reshape((nX,) * N))
        for i in range(1, N):
            T = np.einsum("bj,bj...->b...", P[:, i, :], T)
        T = np.asarray(T).reshape(S, A, n0)
        return T @ self.model.noise.common_probs

    def q_values(self, W: np.ndarray) -> np.ndarray:
        rew, _, _ = self.tables()
        return rew.mean(axis=2) + self.model.beta * self.expected_next(W)


@dataclass(frozen=True, eq=False)
class NPolicy:
    """Product-form randomized feedback policy: one action law per agent and joint state.

    ``agent_probs[s, i]`` is agent ``i``'s action distribution at joint state ``s``;
    actions are drawn independently by inverse CDF from per-agent uniforms.
    """

    agent_probs: np.ndarray

    @classmethod
    def deterministic(cls, joint_actions: np.ndarray, n_actions: int, N: int) -> "NPolicy":
        acts = decode(np.asarray(joint_actions), n_actions, N)
        return cls(np.eye(n_actions)[acts])

    def joint(self) -> np.ndarray:
        """Law over joint actions ``(S, |A|^N)``."""
        S, N, nA = self.agent_probs.shape
        out = np.ones((S, 1))
        for i in range(N):
            out = (out[:, :, None] * self.agent_probs[:, i, None, :]).reshape(S, -1)
        return out

    def sample(self, s: np.ndarray, z: np.ndarray) -> np.ndarray:
        return inverse_cdf(self.agent_probs[s], z)


@dataclass(frozen=True, eq=False)
class NValueTable:
    N: int
    values: np.ndarray
    iterations: int = 0
    residual: float = math.nan
    tol: float = math.nan
    policy: NPolicy | None = None
    meta: dict = field(default_factory=dict)

    def at(self, x) -> float:
        nX = round(len(self.values) ** (1 / self.N)) if self.N else 1
        return float(self.values[int(encode(np.asarray(x), nX))])


def bellman_N_apply(problem: NAgentProblem, W: np.ndarray, mode: str = "full-sup", control=None) -> np.ndarray:
    """One application of the N-agent Bellman operator.

    ``mode``: ``"full-sup"`` (maximum over all joint actions), ``"fixed-action"``
    (``control`` is a joint action vector or index used at every state) or
    ``"fixed-policy"`` (``control`` is an :class:`NPolicy` or an array of joint
    action indices per state).
    """
    W = np.asarray(W, dtype=float)
    if W.shape != (problem.n_joint_states,):
        raise ConfigError(f"value table must have {problem.n_joint_states} entries")
    Q = problem.q_values(W)
    if mode == "full-sup":
        return Q.max(axis=1)
    if mode == "fixed-action":
        a = int(encode(np.asarray(control), problem.nA)) if np.ndim(control) else int(control)
        return Q[:, a]
    if mode == "fixed-policy":
        if isinstance(control, NPolicy):
            return (control.joint() * Q).sum(axis=1)
        idx = np.asarray(control, dtype=np.int64)
        return Q[np.arange(len(W)), idx]
    raise ConfigError(f"unknown Bellman mode {mode!r}")


def greedy_actions(Q: np.ndarray) -> np.ndarray:
    """Maximizing joint action per state, ties to the lexicographically smallest."""
    best = Q.max(axis=1, keepdims=True)
    return np.argmax(Q >= best - TIE_TOL, axis=1)


def solve_n_agent(
    model: ModelSpec,
    nagent: NAgentSpec,
    N: int,
    tol: float = 1e-6,
    budget: int = DEFAULT_BUDGET,
    problem: NAgentProblem | None = None,
) -> NValueTable:
    """Value iteration for the N-agent value function and a greedy optimal policy."""
    if tol <= 0:
        raise ConfigError("tolerance must be positive")
    problem = problem or NAgentProblem(model, nagent, N, budget)
    problem.check_budget()
    max_iter = max_iterations(tol, model.beta, model.reward_bound)
    values, iters, diff = value_iteration(
        lambda W: bellman_N_apply(problem, W), problem.n_joint_states, model.beta, tol, max_iter
    )
    acts = greedy_actions(problem.q_values(values))
    policy = NPolicy.deterministic(acts, problem.nA, N)
    return NValueTable(N, values, iters, diff, tol, policy, meta=dict(greedy_actions=acts))


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (T + 1, N)
    actions: np.ndarray  # (T, N)
    rewards: np.ndarray  # (T, N)
    e0: np.ndarray  # (T,)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,agent,state,action,reward,e0\n")
        T, N = self.actions.shape
        for t in range(T):
            for i in range(N):
                buf.write(
                    f"{t},{i + 1},{self.states[t, i]},{self.actions[t, i]},{float(self.rewards[t, i])!r},{self.e0[t]}\n"
                )
        return buf.getvalue()


Schedule = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


def _actions(policy, t: int, s: np.ndarray, states: np.ndarray, z: np.ndarray) -> np.ndarray:
    if isinstance(policy, NPolicy):
        return policy.sample(s, z)
    return np.array([policy(t, states[k], z[k]) for k in range(len(s))], dtype=np.int64)


def rollout(
    problem: NAgentProblem,
    policy,
    x0,
    horizon: int,
    seed: int,
    samples: int = 1,
    purpose: str = "rollout",
):
    """Vectorized sample paths; returns states ``(S, T+1, N)``, actions, agent rewards, common noise.

    ``policy`` is an :class:`NPolicy` or a callable ``(t, states, uniforms) -> actions``.
    Draws at step ``t`` come from counter-based streams indexed by ``t``, so
    the first ``k`` samples do not depend on the total sample count.
    """
    if horizon < 1:
        raise ConfigError("horizon must be at least 1")
    N, nX, nA = problem.N, problem.nX, problem.nA
    lam, lam0 = problem.model.noise.idio_probs, problem.model.noise.common_probs
    x0 = np.asarray(x0, dtype=np.int64)
    if x0.shape != (N,) or x0.min() < 0 or x0.max() >= nX:
        raise ConfigError(f"initial state must be {N} valid state indices")
    states = np.empty((samples, horizon + 1, N), dtype=np.int64)
    actions = np.empty((samples, horizon, N), dtype=np.int64)
    rewards = np.empty((samples, horizon, N))
    common = np.empty((samples, horizon), dtype=np.int64)
    if isinstance(policy, NPolicy) and policy.agent_probs.shape != (problem.n_joint_states, N, nA):
        raise ConfigError(f"policy table must have shape {(problem.n_joint_states, N, nA)}")
    states[:, 0] = x0
    rows = np.arange(N)
    for t in range(horizon):
        z = stream(seed, f"{purpose}/policy", t).random((samples, N))
        u_idio = stream(seed, f"{purpose}/idio", t).random((samples, N))
        u_common = stream(seed, f"{purpose}/common", t).random(samples)
        s = encode(states[:, t], nX)
        acts = _actions(policy, t, s, states[:, t], z)
        a = encode(acts, nA)
        e = inverse_cdf(lam, u_idio)
        e0 = inverse_cdf(lam0, u_common)
        for k in range(samples):
            rew, nxt = problem.transitions(int(s[k]), int(a[k]))
            rewards[k, t] = rew
            states[k, t + 1] = nxt[rows, e[k], e0[k]]
        actions[:, t] = acts
        common[:, t] = e0
    return states, actions, rewards, common


def simulate_n(
    model: ModelSpec,
    nagent: NAgentSpec,
    N: int,
    policy,
    x0,
    horizon: int,
    seed: int,
    problem: NAgentProblem | None = None,
) -> Trajectory:
    """One sampled path of the N-agent system."""
    problem = problem or NAgentProblem(model, nagent, N)
    st, ac, rw, e0 = rollout(problem, policy, x0, horizon, seed, samples=1, purpose="simulate_n")
    return Trajectory(st[0], ac[0], rw[0], e0[0])


@dataclass(frozen=True)
class MCGain:
    estimate: float
    stderr: float
    ci_halfwidth: float
    truncation_bound: float
    horizon: int
    samples: int

    @property
    def ci(self) -> tuple[float, float]:
        return self.estimate - self.ci_halfwidth, self.estimate + self.ci_halfwidth


def mc_policy_gain(
    model: ModelSpec,
    nagent: NAgentSpec,
    N: int,
    policy,
    x0,
    tol: float,
    samples: int,
    seed: int,
    problem: NAgentProblem | None = None,
    z_score: float = 1.959963984540054,
) -> MCGain:
    """Monte-Carlo estimate of a policy's discounted gain from ``x0``.

    Paths are truncated at the horizon where the discarded tail is at most
    ``tol / 2``; the returned interval is the normal-theory one at level
    ``z_score``.
    """
    if samples < 2:
        raise ConfigError("mc_policy_gain needs at least 2 samples")
    T = horizon_for(tol, model.beta, model.reward_bound)
    problem = problem or NAgentProblem(model, nagent, N)
    _, _, rewards, _ = rollout(problem, policy, x0, T, seed, samples, purpose="mc_policy_gain")
    disc = model.beta ** np.arange(T)
    totals = rewards.mean(axis=2) @ disc
    se = float(totals.std(ddof=1) / math.sqrt(samples))
    tail = model.beta**T * model.reward_bound / (1 - model.beta)
    return MCGain(float(totals.mean()), se, z_score * se, tail, T, samples)


def policy_value(problem: NAgentProblem, policy: NPolicy, tol: float = 1e-10) -> np.ndarray:
    """Exact value of a feedback policy (fixed point of the policy operator)."""
    beta = problem.model.beta
    max_iter = max_iterations(tol, beta, problem.model.reward_bound)
    values, _, _ = value_iteration(
        lambda W: bellman_N_apply(problem, W, "fixed-policy", policy), problem.n_joint_states, beta, tol, max_iter
    )
    return values


def value_table_csv(V: NValueTable) -> str:
    nX = round(len(V.values) ** (1 / V.N))
    buf = io.StringIO()
    buf.write(",".join(["index", *(f"x{i}" for i in range(1, V.N + 1)), "value"]) + "\n")
    for s, val in enumerate(V.values):
        xs = decode(s, nX, V.N)
        buf.write(",".join([str(s), *(str(int(v)) for v in xs), repr(float(val))]) + "\n")
    return buf.getvalue()
