"""Finite metric spaces, the label grid, and product distances."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError

PROB_TOL = 1e-12


@dataclass(frozen=True)
class FiniteMetricSpace:
    """Points identified by ``labels`` with pairwise distances ``dist``.

    Construction does not check the metric axioms; use
    :func:`validate_metric_space` for that.
    """

    labels: tuple
    dist: np.ndarray

    def __post_init__(self):
        dist = np.array(self.dist, dtype=np.float64)
        dist.setflags(write=False)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "dist", dist)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise ConfigError(f"distance matrix must be square, got shape {dist.shape}")
        if dist.shape[0] != len(self.labels):
            raise ConfigError(
                f"distance matrix has {dist.shape[0]} rows but {len(self.labels)} labels were given"
            )

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.size else 0.0

    def index(self, point) -> int:
        """Index of ``point``; integers are accepted as indices directly."""
        if isinstance(point, (int, np.integer)) and not isinstance(point, bool):
            if 0 <= point < self.size:
                return int(point)
            raise ConfigError(f"point index {point} outside 0..{self.size - 1}")
        try:
            return self.labels.index(point)
        except ValueError:
            raise ConfigError(f"unknown point identifier {point!r}") from None

    @classmethod
    def discrete(cls, n: int, prefix: str = "s") -> "FiniteMetricSpace":
        """``n`` points at mutual distance 1."""
        return cls(tuple(f"{prefix}{i}" for i in range(n)), 1.0 - np.eye(n))

    @classmethod
    def line(cls, n: int, prefix: str = "s") -> "FiniteMetricSpace":
        """``n`` points on the integers with ``d(i, j) = |i - j|``."""
        pos = np.arange(n, dtype=float)
        return cls(tuple(f"{prefix}{i}" for i in range(n)), np.abs(pos[:, None] - pos[None, :]))


@dataclass(frozen=True)
class MetricCheck:
    ok: bool
    axiom: str | None = None
    where: tuple[int, ...] | None = None

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return f"{self.axiom} violation at {self.where}"


def validate_metric_space(space: FiniteMetricSpace, atol: float = 1e-12) -> MetricCheck:
    """Return the first violated axiom (finiteness, diagonal, symmetry, triangle) or ok."""
    d = space.dist
    n = d.shape[0]
    if not np.all(np.isfinite(d)):
        i, j = map(int, np.argwhere(~np.isfinite(d))[0])
        return MetricCheck(False, "finiteness", (i, j))
    if np.any(d < 0):
        i, j = map(int, np.argwhere(d < 0)[0])
        return MetricCheck(False, "nonnegativity", (i, j))
    for i in range(n):
        if abs(d[i, i]) > atol:
            return MetricCheck(False, "diagonal", (i, i))
    for i in range(n):
        for j in range(i + 1, n):
            if abs(d[i, j] - d[j, i]) > atol:
                return MetricCheck(False, "symmetry", (i, j))
    # d[i,k] <= d[i,j] + d[j,k] for all triples, scanned in lexicographic order
    slack = d[:, None, :] - d[:, :, None] - d[None, :, :]  # [i, j, k] = d(i,k) - d(i,j) - d(j,k)
    bad = np.argwhere(slack > atol)
    if len(bad):
        i, j, k = map(int, bad[0])
        return MetricCheck(False, "triangle", (i, j, k))
    return MetricCheck(True)


@dataclass(frozen=True)
class LabelGrid:
    """``K`` equal-mass label blocks ``((i-1)/K, i/K]`` with representatives ``i/K``."""

    K: int

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"block count must be a positive integer, got {self.K}")

    @property
    def representatives(self) -> np.ndarray:
        return np.arange(1, self.K + 1, dtype=float) / self.K

    @property
    def masses(self) -> np.ndarray:
        return np.full(self.K, 1.0 / self.K)

    def block_of(self, label: float) -> int:
        """0-based block whose representative is the right end of the interval holding ``label``."""
        if not 0.0 < label <= 1.0:
            raise ConfigError(f"label {label} outside (0, 1]")
        return min(self.K - 1, max(0, int(np.ceil(label * self.K - 1e-12)) - 1))


def agent_block(i: int, N: int, K: int) -> int:
    """0-based block of agent ``i`` (1-based) whose label is ``i/N``."""
    return (i * K - 1) // N


@dataclass(frozen=True)
class NoiseSpec:
    """Idiosyncratic and common noise outcome sets with their laws."""

    idio_values: tuple
    idio_probs: np.ndarray
    common_values: tuple
    common_probs: np.ndarray

    def __post_init__(self):
        for name, values, probs in (
            ("idio", self.idio_values, self.idio_probs),
            ("common", self.common_values, self.common_probs),
        ):
            p = np.array(probs, dtype=np.float64)
            if p.ndim != 1 or len(p) != len(values) or len(p) == 0:
                raise ConfigError(f"{name} noise: {len(values)} outcomes but probability shape {p.shape}")
            if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
                raise ConfigError(f"{name} noise probabilities must be nonnegative and sum to 1")
            p.setflags(write=False)
            object.__setattr__(self, f"{name}_values", tuple(values))
            object.__setattr__(self, f"{name}_probs", p)

    @property
    def n_idio(self) -> int:
        return len(self.idio_values)

    @property
    def n_common(self) -> int:
        return len(self.common_values)

    @classmethod
    def trivial(cls) -> "NoiseSpec":
        return cls((0,), [1.0], (0,), [1.0])


def _coords(point) -> tuple:
    if len(point) not in (2, 3):
        raise ConfigError(f"product points are (label, state[, action]); got {point!r}")
    return tuple(point)


def product_distance(p, q, states: FiniteMetricSpace, actions: FiniteMetricSpace | None = None) -> float:
    """``|u - u'| + d(x, x') [+ d_A(a, a')]`` for points ``(u, x[, a])``."""
    p, q = _coords(p), _coords(q)
    if len(p) != len(q):
        raise ConfigError("points must both carry an action or both omit it")
    out = abs(float(p[0]) - float(q[0])) + states.dist[states.index(p[1]), states.index(q[1])]
    if len(p) == 3:
        if actions is None:
            raise ConfigError("action coordinates given but no action space")
        out += actions.dist[actions.index(p[2]), actions.index(q[2])]
    return float(out)


def product_cost_matrix(
    src: np.ndarray,
    dst: np.ndarray,
    states: FiniteMetricSpace,
    actions: FiniteMetricSpace | None = None,
) -> np.ndarray:
    """Vectorized product distances between rows ``(u, x[, a])`` of two point arrays."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.ndim != 2 or dst.ndim != 2 or src.shape[1] != dst.shape[1] or src.shape[1] not in (2, 3):
        raise ConfigError("point arrays must be (n, 2) or (n, 3) with matching widths")
    cost = np.abs(src[:, None, 0] - dst[None, :, 0])
    cost = cost + states.dist[np.ix_(src[:, 1].astype(int), dst[:, 1].astype(int))]
    if src.shape[1] == 3:
        if actions is None:
            raise ConfigError("action coordinates given but no action space")
        cost = cost + actions.dist[np.ix_(src[:, 2].astype(int), dst[:, 2].astype(int))]
    return cost


def product_diameter(states: FiniteMetricSpace, actions: FiniteMetricSpace | None = None) -> float:
    """Diameter of ``I x X`` (or ``I x X x A``) found by enumerating extreme points.

    The label term is maximized at the endpoints of ``[0, 1]``, so enumerating
    labels in ``{0, 1}`` together with every state (and action) is exhaustive.
    """
    factors: list[Sequence] = [(0.0, 1.0), range(states.size)]
    if actions is not None:
        factors.append(range(actions.size))
    pts = list(itertools.product(*factors))
    return max(product_distance(p, q, states, actions) for p in pts for q in pts)
