"""Label-state and label-state-action measures on the block grid.

A label block ``i`` (0-based) covers ``(i/K, (i+1)/K]`` and carries mass
``1/K``. Lifted measures store the block-conditional state law of each block;
joint control measures store absolute weights over ``(block, state, action)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, PreconditionError, UnsupportedError
from .spaces import PROB_TOL, LabelGrid

MAX_CELLS = 100_000
CANONICAL_TOL = 1e-12


def _check_cells(n: int):
    if n > MAX_CELLS:
        raise ConfigError(f"measure has {n} cells; the dense representation is capped at {MAX_CELLS}")


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class LiftedMeasure:
    """Element of the label-state space with uniform label marginal.

    ``rows[i]`` is the state law of block ``i``; the block itself weighs ``1/K``.
    """

    rows: np.ndarray

    def __post_init__(self):
        rows = _frozen(self.rows)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ConfigError(f"rows must be a (K, |X|) array, got shape {rows.shape}")
        _check_cells(rows.size)
        if np.any(rows < -PROB_TOL) or np.any(np.abs(rows.sum(axis=1) - 1.0) > PROB_TOL):
            raise DomainError("every block row must be a probability vector")
        object.__setattr__(self, "rows", rows)

    @property
    def K(self) -> int:
        return self.rows.shape[0]

    @property
    def n_states(self) -> int:
        return self.rows.shape[1]

    @property
    def grid(self) -> LabelGrid:
        return LabelGrid(self.K)

    def joint(self) -> np.ndarray:
        """Absolute weights over ``(block, state)``."""
        return self.rows / self.K

    def key(self) -> bytes:
        return self.rows.tobytes()

    def __eq__(self, other) -> bool:
        return isinstance(other, LiftedMeasure) and np.array_equal(self.rows, other.rows)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class JointControlMeasure:
    """Weights over ``(block, state, action)`` summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 3 or min(w.shape) < 1:
            raise ConfigError(f"weights must be a (K, |X|, |A|) array, got shape {w.shape}")
        _check_cells(w.size)
        if np.any(w < -PROB_TOL):
            raise DomainError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > max(PROB_TOL, w.size * 1e-15):
            raise DomainError(f"total mass must be 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def n_states(self) -> int:
        return self.weights.shape[1]

    @property
    def n_actions(self) -> int:
        return self.weights.shape[2]

    @property
    def grid(self) -> LabelGrid:
        return LabelGrid(self.K)

    def state_marginal(self) -> np.ndarray:
        """Absolute ``(block, state)`` weights, i.e. the projection on label and state."""
        return self.weights.sum(axis=2)

    def block_masses(self) -> np.ndarray:
        return self.weights.sum(axis=(1, 2))

    def has_uniform_blocks(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.block_masses() - 1.0 / self.K) <= tol))

    def key(self) -> bytes:
        return self.weights.tobytes()

    def __eq__(self, other) -> bool:
        return isinstance(other, JointControlMeasure) and np.array_equal(self.weights, other.weights)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PolicyKernel:
    """Action law for every ``(block, state)`` cell."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 3 or min(p.shape) < 1:
            raise ConfigError(f"kernel must be a (K, |X|, |A|) array, got shape {p.shape}")
        _check_cells(p.size)
        if np.any(p < -PROB_TOL) or np.any(np.abs(p.sum(axis=2) - 1.0) > PROB_TOL):
            raise DomainError("every kernel cell must be a probability vector over actions")
        object.__setattr__(self, "probs", p)

    @property
    def K(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[2]

    @classmethod
    def uniform(cls, K: int, n_states: int, n_actions: int) -> "PolicyKernel":
        return cls(np.full((K, n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def from_map(cls, action_map: np.ndarray, n_actions: int) -> "PolicyKernel":
        """Deterministic kernel playing ``action_map[block, state]``."""
        action_map = np.asarray(action_map, dtype=int)
        return cls(np.eye(n_actions)[action_map])

    def __eq__(self, other) -> bool:
        return isinstance(other, PolicyKernel) and np.array_equal(self.probs, other.probs)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Equal-weight atoms ``(label, state[, action])``."""

    labels: np.ndarray
    states: np.ndarray
    actions: np.ndarray | None = None

    def __post_init__(self):
        labels = _frozen(self.labels)
        states = np.array(self.states, dtype=int)
        if labels.ndim != 1 or labels.shape != states.shape or len(labels) == 0:
            raise ConfigError("labels and states must be non-empty vectors of equal length")
        states.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "states", states)
        if self.actions is not None:
            actions = np.array(self.actions, dtype=int)
            if actions.shape != states.shape:
                raise ConfigError("actions must have one entry per atom")
            actions.setflags(write=False)
            object.__setattr__(self, "actions", actions)

    @property
    def N(self) -> int:
        return len(self.labels)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.N, 1.0 / self.N)

    def points(self) -> np.ndarray:
        cols = [self.labels, self.states]
        if self.actions is not None:
            cols.append(self.actions)
        return np.column_stack(cols).astype(float)


def canonical_labels(N: int) -> np.ndarray:
    return np.arange(1, N + 1, dtype=float) / N


def make_empirical(
    labels: Sequence[float],
    states: Sequence[int],
    actions: Sequence[int] | None = None,
    lifted: bool = False,
    n_states: int | None = None,
    n_actions: int | None = None,
):
    """Empirical measure of agents with the given labels, states and actions.

    With ``lifted=False`` the result is the atomic measure with mass ``1/N`` at
    each ``(label, state[, action])``. With ``lifted=True`` the labels must be
    ``i/N`` and the result spreads agent ``i`` uniformly over its label block:
    a :class:`LiftedMeasure` (or a :class:`JointControlMeasure` when actions
    are given).
    """
    labels = np.asarray(labels, dtype=float)
    states = np.asarray(states, dtype=int)
    if labels.shape != states.shape or labels.ndim != 1 or len(labels) == 0:
        raise ConfigError("labels and states must be non-empty vectors of equal length")
    if np.any(labels <= 0.0) or np.any(labels > 1.0):
        raise DomainError("labels must lie in (0, 1]")
    if not lifted:
        return AtomicMeasure(labels, states, actions)
    N = len(labels)
    if np.max(np.abs(labels - canonical_labels(N))) > CANONICAL_TOL:
        raise UnsupportedError("lifted empirical measures need the canonical labels i/N")
    n_states = int(states.max()) + 1 if n_states is None else n_states
    if states.min() < 0 or states.max() >= n_states:
        raise ConfigError("state index out of range")
    rows = np.zeros((N, n_states))
    rows[np.arange(N), states] = 1.0
    if actions is None:
        return LiftedMeasure(rows)
    actions = np.asarray(actions, dtype=int)
    n_actions = int(actions.max()) + 1 if n_actions is None else n_actions
    if actions.shape != states.shape or actions.min() < 0 or actions.max() >= n_actions:
        raise ConfigError("action vector must match the states and lie in range")
    w = np.zeros((N, n_states, n_actions))
    w[np.arange(N), states, actions] = 1.0 / N
    return JointControlMeasure(w)


def _kernel_of(weights: np.ndarray) -> np.ndarray:
    mass = weights.sum(axis=2, keepdims=True)
    n_actions = weights.shape[2]
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(mass > 0, weights / np.where(mass > 0, mass, 1.0), 1.0 / n_actions)
    return k


def disintegrate(a: JointControlMeasure) -> tuple[LiftedMeasure, PolicyKernel]:
    """Split ``a`` into its label-state marginal and an action kernel.

    Cells without mass get the uniform action law.
    """
    total = a.weights.sum()
    if total <= 0:
        raise DomainError("cannot disintegrate a measure with zero mass")
    if not a.has_uniform_blocks(tol=1e-9):
        raise PreconditionError("disintegration needs block masses 1/K")
    rows = a.state_marginal() * a.K
    rows = rows / rows.sum(axis=1, keepdims=True)
    return LiftedMeasure(rows), PolicyKernel(_kernel_of(a.weights))


def compose_kernel(mu: LiftedMeasure, kernel: PolicyKernel) -> JointControlMeasure:
    """Joint measure with weights ``row_i(x) k(i, x)(a) / K``."""
    if kernel.probs.shape[:2] != mu.rows.shape:
        raise ConfigError(f"kernel shape {kernel.probs.shape} does not fit measure shape {mu.rows.shape}")
    return JointControlMeasure(mu.rows[:, :, None] * kernel.probs / mu.K)


def coupling_project(mu: LiftedMeasure, a: JointControlMeasure) -> JointControlMeasure:
    """Force the label-state marginal of ``a`` to be ``mu``, keeping its action kernel.

    Returns ``a`` itself when its marginal already equals ``mu``.
    """
    if a.weights.shape[:2] != mu.rows.shape:
        raise ConfigError(f"control shape {a.weights.shape} does not fit measure shape {mu.rows.shape}")
    if np.max(np.abs(a.state_marginal() - mu.joint())) <= PROB_TOL:
        return a
    return JointControlMeasure(mu.rows[:, :, None] * _kernel_of(a.weights) / mu.K)


def aggregate_blocks(mu, K: int):
    """Coarsen an ``N``-block measure to ``K`` blocks (``K`` must divide ``N``).

    Works for lifted measures (rows averaged) and joint control measures
    (weights summed).
    """
    N = mu.K
    if K < 1 or N % K:
        raise UnsupportedError(f"block count {K} does not divide {N}")
    if isinstance(mu, LiftedMeasure):
        return LiftedMeasure(mu.rows.reshape(K, N // K, -1).mean(axis=1))
    if isinstance(mu, JointControlMeasure):
        w = mu.weights
        return JointControlMeasure(w.reshape(K, N // K, *w.shape[1:]).sum(axis=1))
    raise ConfigError(f"cannot aggregate {type(mu).__name__}")


def aggregate_atoms(m: AtomicMeasure, K: int, n_states: int, n_actions: int) -> JointControlMeasure:
    """Bin the atoms of ``m`` into the ``K`` label blocks by label."""
    if m.actions is None:
        raise ConfigError("aggregating to a joint control measure needs actions on every atom")
    grid = LabelGrid(K)
    w = np.zeros((K, n_states, n_actions))
    blocks = [grid.block_of(u) for u in m.labels]
    np.add.at(w, (blocks, m.states, m.actions), 1.0 / m.N)
    return JointControlMeasure(w)


def to_table(m) -> str:
    """Plain-text table with columns ``block state [action] weight``.

    Weights are absolute masses; zero cells are omitted. Floats use ``repr``
    so the text round-trips exactly.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=" ", lineterminator="\n")
    if isinstance(m, LiftedMeasure):
        writer.writerow(["block", "state", "weight"])
        shape = m.rows.shape
        weights = m.joint()
    elif isinstance(m, JointControlMeasure):
        writer.writerow(["block", "state", "action", "weight"])
        shape = m.weights.shape
        weights = m.weights
    else:
        raise ConfigError(f"cannot tabulate {type(m).__name__}")
    writer.writerow(["#shape", *shape])
    for idx in np.ndindex(*shape):
        if weights[idx] != 0.0:
            writer.writerow([*idx, repr(float(weights[idx]))])
    return buf.getvalue()


def from_table(text: str):
    """Inverse of :func:`to_table`."""
    lines = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) < 2 or lines[1][0] != "#shape":
        raise ConfigError("table must start with a header line and a '#shape' line")
    header = lines[0]
    shape = tuple(int(v) for v in lines[1][1:])
    weights = np.zeros(shape)
    width = len(shape)
    for row in lines[2:]:
        if len(row) != width + 1:
            raise ConfigError(f"malformed table row {row}")
        weights[tuple(int(v) for v in row[:width])] = float(row[width])
    if header == ["block", "state", "weight"]:
        return LiftedMeasure(weights * shape[0])
    if header == ["block", "state", "action", "weight"]:
        return JointControlMeasure(weights)
    raise ConfigError(f"unknown table header {header}")
