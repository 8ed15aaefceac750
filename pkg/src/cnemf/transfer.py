"""Turning a mean-field randomized feedback policy into N-agent policies.

Two constructions are offered:

* ``transfer_direct``: every agent draws its own action from the mean-field
  kernel evaluated at the current population (aggregated to the model's label
  blocks), at its own block and state.
* ``transfer_matching``: a deterministic joint action chosen so that the
  resulting empirical label-state-action measure is as close as possible in
  W1 to the law that the mean-field kernel would induce.

The law induced by the kernel has continuous labels. Here both it and the
empirical measure place agent ``i`` at its label ``i/N``; each side then moves
by at most ``1/(2N)`` in W1, so the reported distance is within ``1/N`` of the
continuous-label one. That slack is returned with every match.
"""

from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, DomainError, UnsupportedError
from .measures import aggregate_blocks, make_empirical
from .meanfield import RandomizedFeedbackPolicy
from .model import ModelSpec
from .nagent import NPolicy, decode
from .spaces import agent_block
from .transport import DiscreteMeasure, ProductMetric, w1_value

MATCH_TIE_TOL = 1e-9
MAX_TABLE_STATES = 1_000_000


def kernel_for_population(policy: RandomizedFeedbackPolicy, x: np.ndarray) -> np.ndarray:
    """Mean-field kernel ``(K, |X|, |A|)`` at the aggregated lifted empirical of ``x``."""
    x = np.asarray(x, dtype=np.int64)
    N, K = len(x), policy.grid.K
    if N % K:
        raise UnsupportedError(f"transfer needs the block count K={K} to divide N={N}")
    emp = make_empirical(np.arange(1, N + 1) / N, x, lifted=True, n_states=policy.grid.n_states)
    return policy.kernel_at(aggregate_blocks(emp, K)).probs


def kernel_action_laws(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-agent action laws ``(N, |A|)`` from a block kernel ``(K, |X|, |A|)``."""
    x = np.asarray(x, dtype=np.int64)
    N, K = len(x), kernel.shape[0]
    blocks = np.array([agent_block(i, N, K) for i in range(1, N + 1)])
    return kernel[blocks, x]


def direct_action_laws(policy: RandomizedFeedbackPolicy, x: np.ndarray) -> np.ndarray:
    """Per-agent action laws ``(N, |A|)`` of the direct transfer at joint state ``x``."""
    return kernel_action_laws(kernel_for_population(policy, x), x)


def _tabulate(n_states: int, N: int, rows) -> np.ndarray:
    S = n_states**N
    if S > MAX_TABLE_STATES:
        raise BudgetError(f"tabulating a policy over {S} joint states exceeds {MAX_TABLE_STATES}")
    return np.array([rows(decode(s, n_states, N)) for s in range(S)])


def transfer_direct(policy: RandomizedFeedbackPolicy, N: int) -> NPolicy:
    """Randomized N-agent feedback policy: agent ``i`` samples from the kernel at its block and state.

    Per-agent uniforms are consumed in agent order at each step, so runs replay
    exactly given the seed.
    """
    K = policy.grid.K
    if N % K:
        raise UnsupportedError(f"transfer needs the block count K={K} to divide N={N}")
    return NPolicy(_tabulate(policy.grid.n_states, N, lambda x: direct_action_laws(policy, x)))


def law_from_action_laws(x: np.ndarray, laws: np.ndarray) -> DiscreteMeasure:
    """Label-state-action law putting mass ``laws[i, a] / N`` at ``(i/N, x_i, a)``."""
    x = np.asarray(x, dtype=np.int64)
    N, nA = laws.shape
    labels = np.repeat(np.arange(1, N + 1) / N, nA)
    pts = np.column_stack([labels, np.repeat(x, nA), np.tile(np.arange(nA), N)])
    return DiscreteMeasure(pts, laws.ravel() / N).compact()


def induced_law(policy: RandomizedFeedbackPolicy, x: np.ndarray) -> DiscreteMeasure:
    """Law of (agent label, state, kernel action) at joint state ``x``, labels at ``i/N``."""
    return law_from_action_laws(x, direct_action_laws(policy, x))


def empirical_law(x: np.ndarray, actions: np.ndarray) -> DiscreteMeasure:
    x = np.asarray(x)
    N = len(x)
    pts = np.column_stack([np.arange(1, N + 1) / N, x, actions])
    return DiscreteMeasure(pts, np.full(N, 1.0 / N))


@dataclass(frozen=True)
class MatchResult:
    actions: np.ndarray
    distance: float
    start_distance: float
    exhaustive: bool
    evaluations: int
    substitution_slack: float


def _mode_actions(policy: RandomizedFeedbackPolicy, x: np.ndarray) -> np.ndarray:
    return np.argmax(direct_action_laws(policy, x), axis=1)


def coordinate_descent(objective, start: np.ndarray, n_actions: int) -> tuple[np.ndarray, float, int]:
    """Local search from ``start``: change one agent's action, or swap two agents' actions.

    Moves are tried in a fixed order and taken on strict improvement, until
    no move helps.
    """
    acts = np.array(start, dtype=np.int64)
    best = objective(acts)
    evals = 1
    N = len(acts)
    improved = True
    while improved:
        improved = False
        moves = [(i, b) for i in range(N) for b in range(n_actions)]
        moves += [(i, j, None) for i, j in itertools.combinations(range(N), 2)]
        for move in moves:
            trial = acts.copy()
            if len(move) == 2:
                i, b = move
                if b == acts[i]:
                    continue
                trial[i] = b
            else:
                i, j, _ = move
                if acts[i] == acts[j]:
                    continue
                trial[i], trial[j] = acts[j], acts[i]
            val = objective(trial)
            evals += 1
            if val < best - MATCH_TIE_TOL:
                acts, best, improved = trial, val, True
    return acts, best, evals


def transfer_matching(
    policy: RandomizedFeedbackPolicy,
    model: ModelSpec,
    x,
    budget: int = 100_000,
    start=None,
) -> MatchResult:
    """Joint action minimizing W1 between the induced law and the empirical label-state-action measure.

    Exhaustive over ``A^N`` when that fits the budget (ties go to the
    lexicographically smallest action vector); otherwise coordinate descent
    from ``start`` or, by default, each agent's most likely kernel action.
    """
    x = np.asarray(x, dtype=np.int64)
    N, nA = len(x), model.n_actions
    metric = ProductMetric(model.states, model.actions)
    target = induced_law(policy, x)

    def objective(acts):
        return w1_value(target, empirical_law(x, acts), metric)

    init = _mode_actions(policy, x) if start is None else np.asarray(start, dtype=np.int64)
    start_val = objective(init)
    if nA**N <= budget:
        best_acts, best, evals = None, math.inf, 0
        for acts in itertools.product(range(nA), repeat=N):
            val = objective(np.array(acts))
            evals += 1
            if val < best - MATCH_TIE_TOL:
                best_acts, best = np.array(acts), val
        return MatchResult(best_acts, best, start_val, True, evals, 1.0 / N)
    acts, best, evals = coordinate_descent(objective, init, nA)
    return MatchResult(acts, best, start_val, False, evals + 1, 1.0 / N)


def matching_policy(policy: RandomizedFeedbackPolicy, model: ModelSpec, N: int, budget: int = 100_000) -> NPolicy:
    """Deterministic N-agent feedback policy tabulated from ``transfer_matching`` at every joint state."""
    acts = _tabulate(model.n_states, N, lambda x: transfer_matching(policy, model, x, budget).actions)
    return NPolicy(np.eye(model.n_actions)[acts])


def coupled_action_distance(p: np.ndarray, q: np.ndarray, action_dist: np.ndarray) -> float:
    """``E[d_A(F_p^{-1}(Z), F_q^{-1}(Z))]`` for one uniform ``Z`` driving both inverse CDFs."""
    cp, cq = np.cumsum(p), np.cumsum(q)
    cuts = np.unique(np.clip(np.concatenate([[0.0], cp, cq, [1.0]]), 0.0, 1.0))
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo:
            continue
        mid = 0.5 * (lo + hi)
        i = min(int((cp <= mid).sum()), len(p) - 1)
        j = min(int((cq <= mid).sum()), len(q) - 1)
        total += (hi - lo) * action_dist[i, j]
    return total


@dataclass(frozen=True)
class RegularityEstimate:
    value: float
    pairs: int
    skipped: int
    where: tuple | None


def estimate_regularity_K(policy: RandomizedFeedbackPolicy, model: ModelSpec) -> RegularityEstimate:
    """Largest ratio ``E[d_A(...)] / (|u - u'| + d(x, x'))`` over all grid measures and pairs.

    Labels are the block representatives ``(k + 1)/K``. A policy that is
    constant on label blocks but differs between neighbouring blocks has an
    unbounded ratio for labels straddling a block boundary, so the
    representatives are the only finite choice for step policies.
    """
    K, nX = policy.grid.K, model.n_states
    reps = (np.arange(K) + 1.0) / K
    dX, dA = model.states.dist, model.actions.dist
    cells = [(k, x) for k in range(K) for x in range(nX)]
    best, where, pairs, skipped = 0.0, None, 0, 0
    for g in range(policy.grid.size):
        kern = policy.kernels[g]
        for (k1, x1), (k2, x2) in itertools.combinations(cells, 2):
            den = abs(reps[k1] - reps[k2]) + dX[x1, x2]
            if den <= 0:
                skipped += 1
                continue
            pairs += 1
            ratio = coupled_action_distance(kern[k1, x1], kern[k2, x2], dA) / den
            if ratio > best:
                best, where = ratio, (g, (k1, x1), (k2, x2))
    if pairs == 0:
        raise DomainError("every pair of (label, state) cells is at distance zero")
    return RegularityEstimate(best, pairs, skipped, where)


def action_table_csv(policy: NPolicy, n_states: int) -> str:
    """One row per joint state with each agent's action law (deterministic laws show as 0/1)."""
    S, N, nA = policy.agent_probs.shape
    buf = io.StringIO()
    head = ["index", *(f"x{i}" for i in range(1, N + 1))]
    head += [f"p{i}_a{a}" for i in range(1, N + 1) for a in range(nA)]
    buf.write(",".join(head) + "\n")
    for s in range(S):
        xs = decode(s, n_states, N)
        row = [str(s), *(str(int(v)) for v in xs)]
        row += [repr(float(v)) for v in policy.agent_probs[s].ravel()]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
