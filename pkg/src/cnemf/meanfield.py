"""The lifted MDP on label-state measures and its value iteration.

The state of the lifted MDP is a :class:`LiftedMeasure`; a control is a joint
label-state-action measure, in practice ``mu`` composed with an action kernel.
Value functions live on a :class:`MeasureGrid`: every block row is restricted
to the simplex lattice of mesh ``1/q``. Transition images that leave the grid
are sent to the nearest grid point (per-block l1 distance, ties to the
lexicographically smallest point) and the induced W1 error is tracked.
"""

from __future__ import annotations

import io
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, ConvergenceError, PreconditionError
from .measures import (
    JointControlMeasure,
    LiftedMeasure,
    PolicyKernel,
    aggregate_blocks,
    compose_kernel,
    coupling_project,
)
from .model import LipschitzChoice, ModelSpec
from .rng import inverse_cdf, stream
from .spaces import product_diameter
from .transport import ProductMetric, as_discrete, w1_value

TIE_TOL = 1e-12


def compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``, lexicographically."""
    out = [c for c in itertools.product(range(total + 1), repeat=parts) if sum(c) == total]
    return np.array(out, dtype=np.int64).reshape(-1, parts)


class MeasureGrid:
    """K-fold product of the simplex lattice ``{n / q : n in N^{|X|}, sum n = q}``.

    Grid points are numbered in mixed radix with block 0 most significant, so
    increasing index is lexicographic order of the per-block compositions.
    """

    def __init__(self, K: int, n_states: int, q: int, state_diameter: float = 1.0):
        if q < 1 or K < 1 or n_states < 1:
            raise ConfigError("grid needs K >= 1, |X| >= 1 and mesh q >= 1")
        self.K, self.n_states, self.q = K, n_states, q
        self.state_diameter = state_diameter
        self.comps = compositions(q, n_states)
        self.n_comps = len(self.comps)
        self.size = self.n_comps**K
        if self.size * K * n_states > 50_000_000:
            raise ConfigError(f"grid with {self.size} points is too large")
        self._radix = self.n_comps ** np.arange(K - 1, -1, -1)
        self._comp_index = {tuple(c): i for i, c in enumerate(self.comps)}

    @property
    def covering_radius(self) -> float:
        """Recorded W1 covering radius per block, ``(diam X / 2) * |X| / q``."""
        return self.state_diameter / 2 * self.n_states / self.q

    def comp_indices(self, idx: int) -> np.ndarray:
        return (idx // self._radix) % self.n_comps

    def rows(self, idx: int) -> np.ndarray:
        return self.comps[self.comp_indices(idx)] / self.q

    def measure(self, idx: int) -> LiftedMeasure:
        return LiftedMeasure(self.rows(idx))

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.size))

    def nearest_rows(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-block nearest composition index and its l1 distance."""
        lattice = self.comps / self.q
        dist = np.abs(rows[:, None, :] - lattice[None, :, :]).sum(axis=2)
        best = dist.min(axis=1, keepdims=True)
        choice = np.argmax(dist <= best + TIE_TOL, axis=1)  # first, i.e. lexicographically smallest
        return choice, dist[np.arange(len(rows)), choice]

    def project(self, mu: LiftedMeasure) -> tuple[int, float]:
        """Nearest grid index and the W1 bound of the move, ``(1/K) sum_k (diam/2) l1_k``."""
        if mu.K != self.K:
            if mu.K % self.K:
                raise PreconditionError(f"measure has {mu.K} blocks; grid has {self.K}")
            mu = aggregate_blocks(mu, self.K)
        if mu.n_states != self.n_states:
            raise PreconditionError("measure and grid disagree on the number of states")
        choice, l1 = self.nearest_rows(mu.rows)
        return int(choice @ self._radix), float(self.state_diameter / 2 * l1.mean())

    def index_of(self, mu: LiftedMeasure) -> int:
        """Index of a measure that lies exactly on the grid."""
        counts = np.rint(mu.rows * self.q).astype(np.int64)
        if np.max(np.abs(counts / self.q - mu.rows)) > 1e-9:
            raise PreconditionError("measure is not a grid point")
        return int(np.array([self._comp_index[tuple(c)] for c in counts]) @ self._radix)


@dataclass(frozen=True, eq=False)
class ValueTable:
    grid: MeasureGrid
    values: np.ndarray
    iterations: int = 0
    residual: float = math.nan
    tol: float = math.nan
    meta: dict = field(default_factory=dict)

    def __call__(self, mu: LiftedMeasure) -> float:
        idx, _ = self.grid.project(mu)
        return float(self.values[idx])


@dataclass(frozen=True, eq=False)
class RandomizedFeedbackPolicy:
    """An action kernel per grid point; off-grid measures use the nearest grid point."""

    grid: MeasureGrid
    kernels: np.ndarray  # (grid size, K, |X|, |A|)

    def kernel_at(self, mu: LiftedMeasure) -> PolicyKernel:
        idx, _ = self.grid.project(mu)
        return PolicyKernel(self.kernels[idx])

    def action(self, mu: LiftedMeasure, block: int, x: int, z: float) -> int:
        """Inverse-CDF draw from the kernel at ``(block, x)`` for the uniform ``z``."""
        return int(inverse_cdf(self.kernel_at(mu).probs[block, x], np.asarray(z)))


@dataclass(frozen=True)
class SearchConfig:
    """How the supremum over controls is searched.

    ``budget`` caps exhaustive enumeration of deterministic action maps;
    beyond it coordinate ascent with ``restarts`` starting points is used.
    ``kernel_mesh`` switches the candidate set to the lattice of randomized
    kernels with probabilities in multiples of ``1/kernel_mesh``.
    """

    budget: int = 1_000_000
    restarts: int = 5
    kernel_mesh: int | None = None
    seed: int = 0


def lifted_step(model: ModelSpec, mu: LiftedMeasure, a: JointControlMeasure, e0: int) -> LiftedMeasure:
    """Exact image of ``mu`` under control ``a`` and common noise ``e0``."""
    p = coupling_project(mu, a)
    table = model.transition_table(p, e0)  # (K, |X|, |A|, |E|)
    K = mu.K
    mass = K * p.weights[:, :, :, None] * model.noise.idio_probs[None, None, None, :]
    rows = np.zeros((K, model.n_states))
    blocks = np.broadcast_to(np.arange(K)[:, None, None, None], table.shape)
    np.add.at(rows, (blocks.ravel(), table.ravel()), mass.ravel())
    return LiftedMeasure(rows / rows.sum(axis=1, keepdims=True))


def lifted_reward(model: ModelSpec, mu: LiftedMeasure, a: JointControlMeasure) -> float:
    """Population reward of control ``a`` at ``mu``."""
    p = coupling_project(mu, a)
    return float((p.weights * model.reward_table(p)).sum())


def lattice_kernels(K: int, n_states: int, n_actions: int, mesh: int) -> Iterator[np.ndarray]:
    """All kernels whose cell probabilities are multiples of ``1/mesh``, lexicographically."""
    cell = compositions(mesh, n_actions) / mesh
    for choice in itertools.product(range(len(cell)), repeat=K * n_states):
        yield cell[list(choice)].reshape(K, n_states, n_actions)


def action_maps(K: int, n_states: int, n_actions: int) -> Iterator[np.ndarray]:
    for choice in itertools.product(range(n_actions), repeat=K * n_states):
        yield np.array(choice, dtype=np.int64).reshape(K, n_states)


class LiftedMDP:
    """Caches one-step rewards and projected successors on a grid."""

    def __init__(self, model: ModelSpec, grid: MeasureGrid, search: SearchConfig = SearchConfig()):
        if grid.K != model.K or grid.n_states != model.n_states:
            raise ConfigError("grid does not match the model's blocks and states")
        self.model, self.grid, self.search = model, grid, search
        K, nX, nA = model.K, model.n_states, model.n_actions
        if search.kernel_mesh is not None:
            count = math.comb(search.kernel_mesh + nA - 1, nA - 1) ** (K * nX)
            self.candidate_kind = "kernel-lattice"
        else:
            count = nA ** (K * nX)
            self.candidate_kind = "deterministic-map"
        self.n_candidates = count
        self.exhaustive = count <= search.budget
        if not self.exhaustive:
            if search.kernel_mesh is not None:
                raise ConfigError(f"kernel lattice has {count} candidates, above the budget {search.budget}")
            warnings.warn(
                f"{count} action maps exceed the search budget {search.budget}; "
                f"falling back to coordinate ascent with {search.restarts} restarts",
                RuntimeWarning,
                stacklevel=2,
            )
        self._cache: dict[tuple[int, bytes], tuple[float, np.ndarray, np.ndarray]] = {}
        self._table = None
        self.projection_slack = 0.0

    # one-step quantities -------------------------------------------------
    def step(self, g: int, kernel: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Reward, successor indices per ``e0``, and projection W1 bounds for a kernel at ``g``."""
        key = (g, kernel.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            mu = self.grid.measure(g)
            a = compose_kernel(mu, PolicyKernel(kernel))
            hit = self._one_step(mu, a)
            self._cache[key] = hit
        return hit

    def step_control(self, g: int, a: JointControlMeasure) -> tuple[float, np.ndarray, np.ndarray]:
        return self._one_step(self.grid.measure(g), a)

    def _one_step(self, mu: LiftedMeasure, a: JointControlMeasure):
        r = lifted_reward(self.model, mu, a)
        n0 = self.model.noise.n_common
        nxt = np.empty(n0, dtype=np.int64)
        slack = np.empty(n0)
        for e0 in range(n0):
            nxt[e0], slack[e0] = self.grid.project(lifted_step(self.model, mu, a, e0))
        self.projection_slack = max(self.projection_slack, float(slack.max()))
        return r, nxt, slack

    def candidates(self) -> list[np.ndarray]:
        K, nX, nA = self.model.K, self.model.n_states, self.model.n_actions
        if self.candidate_kind == "kernel-lattice":
            return list(lattice_kernels(K, nX, nA, self.search.kernel_mesh))
        eye = np.eye(nA)
        return [eye[m] for m in action_maps(K, nX, nA)]

    def table(self):
        """Rewards ``(G, C)`` and successors ``(G, C, |E0|)`` for every candidate."""
        if self._table is None:
            if not self.exhaustive:
                raise PreconditionError("candidate table only exists in exhaustive mode")
            cands = self.candidates()
            G, C, n0 = self.grid.size, len(cands), self.model.noise.n_common
            rew = np.empty((G, C))
            nxt = np.empty((G, C, n0), dtype=np.int64)
            for g in range(G):
                for c, kern in enumerate(cands):
                    rew[g, c], nxt[g, c], _ = self.step(g, kern)
            self._table = (cands, rew, nxt)
        return self._table

    # Bellman operators ---------------------------------------------------
    def q_values(self, W: np.ndarray) -> np.ndarray:
        _, rew, nxt = self.table()
        return rew + self.model.beta * (W[nxt] @ self.model.noise.common_probs)

    def _q(self, g: int, kernel: np.ndarray, W: np.ndarray) -> float:
        r, nxt, _ = self.step(g, kernel)
        return r + self.model.beta * float(W[nxt] @ self.model.noise.common_probs)

    def _ascent(self, g: int, W: np.ndarray) -> tuple[float, np.ndarray]:
        K, nX, nA = self.model.K, self.model.n_states, self.model.n_actions
        eye = np.eye(nA)
        best_val, best_map = -math.inf, None
        for r in range(self.search.restarts):
            if r == 0:
                amap = np.zeros((K, nX), dtype=np.int64)
            else:
                amap = stream(self.search.seed, "coordinate-ascent", g * self.search.restarts + r).integers(
                    nA, size=(K, nX)
                )
            val = self._q(g, eye[amap], W)
            improved = True
            while improved:
                improved = False
                for k, x in itertools.product(range(K), range(nX)):
                    for act in range(nA):
                        if act == amap[k, x]:
                            continue
                        trial = amap.copy()
                        trial[k, x] = act
                        tv = self._q(g, eye[trial], W)
                        if tv > val + TIE_TOL:
                            amap, val, improved = trial, tv, True
            if val > best_val + TIE_TOL or (
                abs(val - best_val) <= TIE_TOL and tuple(amap.ravel()) < tuple(best_map.ravel())
            ):
                best_val, best_map = val, amap
        return best_val, eye[best_map]

    def greedy(self, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Supremum values and the maximizing kernels (ties to the first candidate)."""
        if self.exhaustive:
            cands, _, _ = self.table()
            Q = self.q_values(W)
            best = Q.max(axis=1, keepdims=True)
            arg = np.argmax(Q >= best - TIE_TOL, axis=1)
            return best[:, 0], np.stack([cands[c] for c in arg])
        vals = np.empty(self.grid.size)
        kerns = []
        for g in range(self.grid.size):
            vals[g], kern = self._ascent(g, W)
            kerns.append(kern)
        return vals, np.stack(kerns)


def bellman_apply(mdp: LiftedMDP, W: ValueTable, mode: str = "full-sup", control=None) -> ValueTable:
    """Apply one Bellman operator to ``W``.

    ``mode`` selects the operator:

    * ``"full-sup"``: supremum over the candidate controls;
    * ``"fixed-kernel"``: ``control`` is a :class:`PolicyKernel` used at every grid point;
    * ``"fixed-map"``: ``control`` is a :class:`JointControlMeasure`, projected onto each grid point;
    * ``"fixed-policy"``: ``control`` is a :class:`RandomizedFeedbackPolicy`.
    """
    vals = np.asarray(W.values, dtype=float)
    beta, lam0 = mdp.model.beta, mdp.model.noise.common_probs
    if mode == "full-sup":
        out, _ = mdp.greedy(vals)
    elif mode in ("fixed-kernel", "fixed-policy", "fixed-map"):
        if control is None:
            raise ConfigError(f"mode {mode!r} needs a control")
        out = np.empty(mdp.grid.size)
        for g in range(mdp.grid.size):
            if mode == "fixed-kernel":
                r, nxt, _ = mdp.step(g, control.probs)
            elif mode == "fixed-policy":
                r, nxt, _ = mdp.step(g, control.kernels[g])
            else:
                r, nxt, _ = mdp.step_control(g, control)
            out[g] = r + beta * float(vals[nxt] @ lam0)
    else:
        raise ConfigError(f"unknown Bellman mode {mode!r}")
    meta = dict(mode=mode, projection_slack=mdp.projection_slack)
    return ValueTable(mdp.grid, out, meta=meta)


def max_iterations(tol: float, beta: float, reward_bound: float, margin: int = 10) -> int:
    if beta == 0:
        return 1 + margin
    if reward_bound == 0:
        return 2 + margin
    return max(1, math.ceil(math.log(tol * (1 - beta) / reward_bound) / math.log(beta))) + margin


def value_iteration(apply, size: int, beta: float, tol: float, max_iter: int):
    """Iterate ``apply`` from zero until successive iterates are within ``tol (1 - beta) / (2 beta)``."""
    stop = math.inf if beta == 0 else tol * (1 - beta) / (2 * beta)
    W = np.zeros(size)
    for it in range(1, max_iter + 1):
        nxt = apply(W)
        diff = float(np.max(np.abs(nxt - W))) if size else 0.0
        W = nxt
        if diff <= stop:
            return W, it, diff
    raise ConvergenceError(f"no convergence after {max_iter} iterations (last change {diff:.3e})", diff, max_iter)


def solve_mean_field(
    model: ModelSpec,
    grid: MeasureGrid,
    tol: float = 1e-6,
    search: SearchConfig = SearchConfig(),
    max_iter: int | None = None,
    mdp: LiftedMDP | None = None,
) -> tuple[ValueTable, RandomizedFeedbackPolicy]:
    """Value iteration for the grid fixed point and a greedy randomized feedback policy.

    The stopping rule guarantees the returned table is within ``tol`` of the
    grid fixed point in sup norm. The policy is the maximizing candidate per
    grid point under the returned values, ties going to the first candidate in
    lexicographic order.
    """
    if tol <= 0:
        raise ConfigError("tolerance must be positive")
    mdp = mdp or LiftedMDP(model, grid, search)
    max_iter = max_iter or max_iterations(tol, model.beta, model.reward_bound)
    values, iters, diff = value_iteration(lambda W: mdp.greedy(W)[0], grid.size, model.beta, tol, max_iter)
    _, kernels = mdp.greedy(values)
    meta = dict(
        search=mdp.candidate_kind,
        exhaustive=mdp.exhaustive,
        candidates=mdp.n_candidates,
        search_slack=0.0 if mdp.exhaustive else None,
        projection_slack=mdp.projection_slack,
        stopping_bound=tol * (1 - model.beta) / (2 * model.beta) if model.beta else math.inf,
        q=grid.q,
    )
    table = ValueTable(grid, values, iterations=iters, residual=diff, tol=tol, meta=meta)
    return table, RandomizedFeedbackPolicy(grid, kernels)


def evaluate_policy(mdp: LiftedMDP, policy: RandomizedFeedbackPolicy, tol: float = 1e-8) -> ValueTable:
    """Fixed point of the policy operator on the grid."""
    beta = mdp.model.beta
    max_iter = max_iterations(tol, beta, mdp.model.reward_bound)

    def apply(W):
        return bellman_apply(mdp, ValueTable(mdp.grid, W), "fixed-policy", policy).values

    values, iters, diff = value_iteration(apply, mdp.grid.size, beta, tol, max_iter)
    return ValueTable(mdp.grid, values, iterations=iters, residual=diff, tol=tol)


def gamma_exponent(beta: float, L: float) -> float:
    """``min(1, |ln beta| / ln(2 L))``, equal to 1 whenever ``2 L <= 1``."""
    if not 0.0 < beta < 1.0:
        raise ConfigError("gamma needs a discount in (0, 1)")
    if L <= 0 or 2 * L <= 1:
        return 1.0
    return min(1.0, abs(math.log(beta)) / math.log(2 * L))


@dataclass(frozen=True)
class HolderData:
    gamma: float
    gamma_from_L_F: float
    gamma_from_L_f: float
    uses: str
    L_F: float
    L_f: float
    beta: float
    diameter: float
    source_F: str
    source_f: str


def holder_data(model: ModelSpec, constants: LipschitzChoice, uses: str = "L_F") -> HolderData:
    """Exponent from the chosen constant; both variants are reported."""
    if uses not in ("L_F", "L_f"):
        raise ConfigError("uses must be 'L_F' or 'L_f'")
    gF = gamma_exponent(model.beta, constants.L_F)
    gf = gamma_exponent(model.beta, constants.L_f)
    return HolderData(
        gamma=gF if uses == "L_F" else gf,
        gamma_from_L_F=gF,
        gamma_from_L_f=gf,
        uses=uses,
        L_F=constants.L_F,
        L_f=constants.L_f,
        beta=model.beta,
        diameter=product_diameter(model.states),
        source_F=constants.source_F,
        source_f=constants.source_f,
    )


@dataclass(frozen=True)
class HolderReport:
    max_ratio: float
    pairs: int
    gamma: float


def lifted_distance(mu: LiftedMeasure, nu: LiftedMeasure, model: ModelSpec, label_mesh: float | None = None) -> float:
    """W1 between two lifted measures with labels discretized at ``label_mesh`` (default ``1/(4K)``)."""
    mesh = label_mesh or 1.0 / (4 * mu.K)
    metric = ProductMetric(model.states)
    return w1_value(as_discrete(mu, mesh), as_discrete(nu, mesh), metric)


def holder_diagnostic(V: ValueTable, model: ModelSpec, gamma: float, pairs: int = 200, seed: int = 0) -> HolderReport:
    """Largest ``|V(mu) - V(nu)| / W(mu, nu)^gamma`` over random grid pairs.

    The maximum is an empirical stand-in for the Hölder constant, which is
    known to exist but has no closed form.
    """
    rng = stream(seed, "holder_diagnostic")
    best, used = 0.0, 0
    G = V.grid.size
    if G < 2:
        return HolderReport(0.0, 0, gamma)
    for _ in range(pairs):
        i, j = rng.choice(G, size=2, replace=False)
        d = lifted_distance(V.grid.measure(int(i)), V.grid.measure(int(j)), model)
        if d <= 0:
            continue
        used += 1
        best = max(best, abs(V.values[i] - V.values[j]) / d**gamma)
    if not math.isfinite(best):
        raise ConfigError("Hölder ratio is not finite")
    return HolderReport(best, used, gamma)


def value_table_csv(V: ValueTable) -> str:
    buf = io.StringIO()
    cols = [f"b{k}_x{x}" for k in range(V.grid.K) for x in range(V.grid.n_states)]
    buf.write(",".join(["index", *cols, "value"]) + "\n")
    for g in range(V.grid.size):
        rows = V.grid.rows(g).ravel()
        buf.write(",".join([str(g), *(repr(float(r)) for r in rows), repr(float(V.values[g]))]) + "\n")
    return buf.getvalue()


def policy_csv(policy: RandomizedFeedbackPolicy) -> str:
    buf = io.StringIO()
    nA = policy.kernels.shape[-1]
    buf.write(",".join(["index", "block", "state", *(f"p_a{a}" for a in range(nA))]) + "\n")
    for g in range(policy.grid.size):
        for k in range(policy.grid.K):
            for x in range(policy.grid.n_states):
                probs = policy.kernels[g, k, x]
                buf.write(",".join([str(g), str(k), str(x), *(repr(float(p)) for p in probs)]) + "\n")
    return buf.getvalue()
