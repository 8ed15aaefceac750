"""Built-in model families and the name registry used by configuration files.

Every family returns a ``(ModelSpec, NAgentSpec)`` pair. The graphon families
interact through a step kernel on the label blocks; their N-agent versions
compute the same interaction statistic from the other agents only
(``n_agent="leave-one-out"``, the default) or reuse the mean-field
coefficients verbatim (``n_agent="mean-field"``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError
from .measures import AtomicMeasure, JointControlMeasure
from .model import ModelSpec, NAgentSpec
from .spaces import FiniteMetricSpace, LabelGrid, NoiseSpec, agent_block


@dataclass(frozen=True, eq=False)
class GraphonModel:
    """Step-kernel interaction ``s_k(m) = sum_l W[k, l] sum_{x,a} phi(x, a) m(l, x, a)``.

    With ``normalize`` the statistic is divided by the kernel-weighted block
    mass ``sum_l W[k, l] m(l)``, turning it into a neighbour average.
    """

    kernel: np.ndarray
    feature: np.ndarray
    normalize: bool = False

    def __post_init__(self):
        W = np.array(self.kernel, dtype=float)
        phi = np.array(self.feature, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or phi.ndim != 2:
            raise ConfigError("kernel must be K x K and feature |X| x |A|")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(phi))) or np.any(W < 0):
            raise ConfigError("kernel entries must be finite and nonnegative")
        object.__setattr__(self, "kernel", W)
        object.__setattr__(self, "feature", phi)

    @property
    def K(self) -> int:
        return self.kernel.shape[0]

    def table(self) -> np.ndarray:
        """Full table over ``block x state x action x block x state x action``."""
        K = self.K
        nX, nA = self.feature.shape
        return np.broadcast_to(
            self.kernel[:, None, None, :, None, None] * self.feature[None, None, None, None, :, :],
            (K, nX, nA, K, nX, nA),
        )

    def statistic(self, m: JointControlMeasure) -> np.ndarray:
        """Interaction statistic for every block."""
        num = self.kernel @ (m.weights * self.feature).sum(axis=(1, 2))
        if not self.normalize:
            return num
        den = self.kernel @ m.block_masses()
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

    def agent_statistic(self, N: int, i: int, mu_n: AtomicMeasure, exclude_self: bool = True) -> float:
        """Statistic seen by agent ``i`` (1-based) from the atomic population."""
        K = self.K
        bi = agent_block(i, N, K)
        others = [j for j in range(1, N + 1) if not (exclude_self and j == i)]
        if not others:
            return 0.0
        w = np.array([self.kernel[bi, agent_block(j, N, K)] for j in others])
        phi = np.array([self.feature[mu_n.states[j - 1], mu_n.actions[j - 1]] for j in others])
        if self.normalize:
            den = w.sum()
            return float(w @ phi / den) if den > 0 else 0.0
        return float(w @ phi / len(others))


def _vector(value, K: int, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float).ravel()
    if arr.size == 1:
        arr = np.full(K, arr[0])
    if arr.size != K:
        raise ConfigError(f"{name} needs {K} entries, got {arr.size}")
    return arr


def _kernel(value, K: int) -> np.ndarray:
    W = np.array(value, dtype=float)
    if W.ndim == 0:
        W = np.full((K, K), float(W))
    if W.shape != (K, K):
        raise ConfigError(f"kernel must be {K} x {K}, got shape {W.shape}")
    return W


def _n_agent(graphon: GraphonModel, mode: str, dynamics_of_stat, reward_of_stat) -> NAgentSpec:
    if mode == "mean-field":
        return NAgentSpec()
    if mode != "leave-one-out":
        raise ConfigError(f"n_agent must be 'mean-field' or 'leave-one-out', got {mode!r}")
    K = graphon.K

    def dynamics(N, i, x, a, mu_n, e, e0):
        return dynamics_of_stat(agent_block(i, N, K), x, a, graphon.agent_statistic(N, i, mu_n), e, e0)

    def reward(N, i, x, a, mu_n):
        return reward_of_stat(agent_block(i, N, K), x, a, graphon.agent_statistic(N, i, mu_n))

    return NAgentSpec(dynamics=dynamics, reward=reward)


def identity(beta: float = 0.5, n_states: int = 2, n_actions: int = 2, blocks: int = 1, reward: float = 0.0,
             L_F: float | None = None, L_f: float | None = None):
    """States never move; the reward is the constant ``reward``."""
    c = float(reward)
    model = ModelSpec(
        name="identity",
        states=FiniteMetricSpace.discrete(n_states, "s"),
        actions=FiniteMetricSpace.discrete(n_actions, "a"),
        labels=LabelGrid(blocks),
        noise=NoiseSpec.trivial(),
        beta=beta,
        dynamics=lambda k, x, a, m, e, e0: x,
        reward=lambda k, x, a, m: c,
        reward_bound=abs(c),
        L_F=L_F,
        L_f=L_f,
        params=dict(n_states=n_states, n_actions=n_actions, blocks=blocks, reward=c),
    )
    return model, NAgentSpec()


def threshold_graphon(
    beta: float = 0.5,
    blocks: int = 2,
    kernel=((1.0, 0.5), (0.5, 1.0)),
    bias=(-0.2, 0.2),
    common_shift=(-0.1, 0.1),
    common_probs=(0.5, 0.5),
    flip: float = 0.1,
    value=(1.0, 0.5),
    action_cost: float = 0.2,
    n_agent: str = "leave-one-out",
    L_F: float | None = None,
    L_f: float | None = None,
):
    """Two states; an agent ends in ``s1`` iff neighbour share + bias + shift >= 1/2.

    The neighbour share is the kernel-weighted fraction of the population in
    ``s1``; action ``a`` adds ``bias[a]``; the common noise adds
    ``common_shift[e0]``; the idiosyncratic noise flips the outcome with
    probability ``flip``. Reward: ``value[block] * x - action_cost * a``.
    """
    K = int(blocks)
    W = _kernel(kernel, K)
    bias = np.array(bias, dtype=float)
    shift = np.array(common_shift, dtype=float)
    value = _vector(value, K, "value")
    if bias.shape != (2,):
        raise ConfigError("bias needs one entry per action (2)")
    if not 0.0 <= flip <= 1.0:
        raise ConfigError("flip must be a probability")
    graphon = GraphonModel(W, np.array([[0.0, 0.0], [1.0, 1.0]]), normalize=True)
    idio = ((0, 1), [1.0 - flip, flip]) if flip > 0 else ((0,), [1.0])

    def step(k, x, a, s, e, e0):
        nxt = 1 if s + bias[a] + shift[e0] >= 0.5 else 0
        return 1 - nxt if e == 1 else nxt

    def gain(k, x, a, s):
        return value[k] * x - action_cost * a

    model = ModelSpec(
        name="threshold-graphon",
        states=FiniteMetricSpace.discrete(2, "s"),
        actions=FiniteMetricSpace.discrete(2, "a"),
        labels=LabelGrid(K),
        noise=NoiseSpec(idio[0], idio[1], tuple(range(len(shift))), common_probs),
        beta=beta,
        dynamics=lambda k, x, a, m, e, e0: step(k, x, a, graphon.statistic(m)[k], e, e0),
        reward=lambda k, x, a, m: gain(k, x, a, None),
        reward_bound=float(np.abs(value).max() + abs(action_cost)),
        L_F=L_F,
        L_f=L_f,
        params=dict(blocks=K, kernel=W.tolist(), bias=bias.tolist(), common_shift=shift.tolist(),
                    common_probs=list(common_probs), flip=flip, value=value.tolist(),
                    action_cost=action_cost, n_agent=n_agent),
    )
    return model, _n_agent(graphon, n_agent, step, gain)


def heterogeneous_sis(
    beta: float = 0.5,
    blocks: int = 2,
    kernel=((0.9, 0.4), (0.4, 0.7)),
    infection=(0.9, 0.6),
    recovery=(0.3, 0.4),
    protection: float = 0.7,
    common_levels=(0.6, 1.4),
    common_probs=(0.5, 0.5),
    idio_levels: int = 4,
    infection_cost=(1.0, 0.8),
    action_cost=(0.3, 0.2),
    exposure_cost: float = 0.5,
    n_agent: str = "leave-one-out",
    L_F: float | None = None,
    L_f: float | None = None,
):
    """Susceptible (0) / infected (1) agents with block-dependent rates.

    Infection pressure on block ``k`` is ``s_k = sum_l W[k, l] m(l, infected)``.
    A susceptible agent is infected when its idiosyncratic level
    ``(e + 1/2) / idio_levels`` falls below
    ``infection[k] * common_levels[e0] * (1 - protection * a) * s_k``; an
    infected agent recovers when the level falls below ``recovery[k]``.
    Reward: ``-(infection_cost[k] x + action_cost[k] a + exposure_cost (1 - x) s_k)``.
    """
    K = int(blocks)
    W = _kernel(kernel, K)
    infection = _vector(infection, K, "infection")
    recovery = _vector(recovery, K, "recovery")
    infection_cost = _vector(infection_cost, K, "infection_cost")
    action_cost = _vector(action_cost, K, "action_cost")
    levels = np.array(common_levels, dtype=float)
    if idio_levels < 1:
        raise ConfigError("idio_levels must be at least 1")
    if not 0.0 <= protection <= 1.0:
        raise ConfigError("protection must lie in [0, 1]")
    thresholds = (np.arange(idio_levels) + 0.5) / idio_levels
    graphon = GraphonModel(W, np.array([[0.0, 0.0], [1.0, 1.0]]))

    def step(k, x, a, s, e, e0):
        if x == 0:
            p = min(1.0, infection[k] * levels[e0] * (1.0 - protection * a) * s)
            return 1 if thresholds[e] < p else 0
        return 0 if thresholds[e] < recovery[k] else 1

    def gain(k, x, a, s):
        return -(infection_cost[k] * x + action_cost[k] * a + exposure_cost * (1 - x) * s)

    s_max = float(W.max())
    model = ModelSpec(
        name="heterogeneous-sis",
        states=FiniteMetricSpace.discrete(2, "s"),
        actions=FiniteMetricSpace.discrete(2, "a"),
        labels=LabelGrid(K),
        noise=NoiseSpec(tuple(range(idio_levels)), np.full(idio_levels, 1.0 / idio_levels),
                        tuple(range(len(levels))), common_probs),
        beta=beta,
        dynamics=lambda k, x, a, m, e, e0: step(k, x, a, graphon.statistic(m)[k], e, e0),
        reward=lambda k, x, a, m: gain(k, x, a, graphon.statistic(m)[k]),
        reward_bound=float(infection_cost.max() + action_cost.max() + exposure_cost * s_max),
        L_F=L_F,
        L_f=L_f,
        params=dict(blocks=K, kernel=W.tolist(), infection=infection.tolist(), recovery=recovery.tolist(),
                    protection=protection, common_levels=levels.tolist(), common_probs=list(common_probs),
                    idio_levels=idio_levels, infection_cost=infection_cost.tolist(),
                    action_cost=action_cost.tolist(), exposure_cost=exposure_cost, n_agent=n_agent),
    )
    return model, _n_agent(graphon, n_agent, step, gain)


FAMILIES: dict[str, Callable] = {
    "identity": identity,
    "threshold-graphon": threshold_graphon,
    "heterogeneous-sis": heterogeneous_sis,
}


def build_model(family: str, beta: float, **params):
    """Look up ``family`` in the registry and build it."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}; available: {', '.join(sorted(FAMILIES))}")
    try:
        return FAMILIES[family](beta=beta, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for family {family!r}: {exc}") from None


def register_family(name: str, builder: Callable):
    """Make a user-defined family available to configuration files."""
    FAMILIES[name] = builder
