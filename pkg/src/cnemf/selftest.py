"""Oracle-equivalence suite for the transport solvers.

Random uniform empirical clouds are matched by brute force over every
permutation; the LP solvers, the line-graph flow and the assignment-based
permutation must reproduce that minimum, and the dual potential must close
the duality gap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .rng import stream
from .spaces import FiniteMetricSpace
from .transport import (
    DiscreteMeasure,
    ProductMetric,
    duality_certificate,
    kantorovich_potential,
    optimal_permutation,
    w1_discrete,
    w1_value,
)

TOLERANCE = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    worst: float
    instances: int

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: worst error {self.worst:.3e} over {self.instances} instances"


def brute_force_matching(cost: np.ndarray) -> float:
    """Minimum mean cost over all permutations."""
    N = cost.shape[0]
    perms = np.array(list(itertools.permutations(range(N))))
    return float(cost[np.arange(N), perms].sum(axis=1).min() / N)


def random_instance(rng: np.random.Generator, max_n: int = 7):
    """Two uniform empirical clouds of ``(label, state, action)`` rows and their metric."""
    N = int(rng.integers(1, max_n + 1))
    states = FiniteMetricSpace.line(3) if rng.random() < 0.5 else FiniteMetricSpace.discrete(3)
    metric = ProductMetric(states, FiniteMetricSpace.discrete(2, "a"))

    def cloud():
        return np.column_stack([rng.integers(1, N + 1, size=N) / N, rng.integers(3, size=N), rng.integers(2, size=N)])

    return cloud(), cloud(), metric


def transport_selftest(instances: int = 50, seed: int = 0, max_n: int = 7) -> list[CheckResult]:
    rng = stream(seed, "transport_selftest")
    worst = {"w1_discrete": 0.0, "w1_value": 0.0, "optimal_permutation": 0.0, "duality_gap": 0.0}
    for _ in range(instances):
        xs, ys, metric = random_instance(rng, max_n)
        N = len(xs)
        oracle = brute_force_matching(metric.cost(xs, ys))
        mu = DiscreteMeasure(xs, np.full(N, 1.0 / N))
        nu = DiscreteMeasure(ys, np.full(N, 1.0 / N))
        lp, _ = w1_discrete(mu, nu, metric)
        flow = w1_value(mu, nu, metric)
        sigma, perm_cost = optimal_permutation(xs, ys, metric)
        if sorted(sigma.tolist()) != list(range(N)):
            perm_cost = np.inf
        cert = duality_certificate(mu, nu, kantorovich_potential(mu, nu, metric), metric)
        worst["w1_discrete"] = max(worst["w1_discrete"], abs(lp - oracle))
        worst["w1_value"] = max(worst["w1_value"], abs(flow - oracle))
        worst["optimal_permutation"] = max(worst["optimal_permutation"], abs(perm_cost - oracle))
        worst["duality_gap"] = max(worst["duality_gap"], abs(cert.bound - oracle))
    return [CheckResult(name, w <= TOLERANCE, w, instances) for name, w in worst.items()]
