import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cnemf.errors import ConfigError
from cnemf.spaces import (
    FiniteMetricSpace,
    LabelGrid,
    NoiseSpec,
    agent_block,
    product_cost_matrix,
    product_diameter,
    product_distance,
    validate_metric_space,
)


def space(d):
    return FiniteMetricSpace(tuple(range(len(d))), np.array(d, dtype=float))


def test_discrete_and_line_spaces_are_metrics():
    assert validate_metric_space(FiniteMetricSpace.discrete(4))
    assert validate_metric_space(FiniteMetricSpace.line(5))
    assert FiniteMetricSpace.line(5).diameter == 4.0


@pytest.mark.parametrize(
    "d, axiom, where",
    [
        ([[0, 1], [2, 0]], "symmetry", (0, 1)),
        ([[0, -1], [-1, 0]], "nonnegativity", (0, 1)),
        ([[1, 1], [1, 0]], "diagonal", (0, 0)),
        ([[0, np.inf], [np.inf, 0]], "finiteness", (0, 1)),
        ([[0, 1, 5], [1, 0, 1], [5, 1, 0]], "triangle", (0, 1, 2)),
    ],
)
def test_each_axiom_violation_is_named_with_its_location(d, axiom, where):
    check = validate_metric_space(space(d))
    assert not check
    assert check.axiom == axiom and check.where == where
    assert str(check) == f"{axiom} violation at {where}"


def test_shape_errors_and_unknown_points():
    with pytest.raises(ConfigError):
        FiniteMetricSpace(("a", "b"), np.zeros((3, 3)))
    s = FiniteMetricSpace.discrete(2)
    assert s.index("s1") == 1 and s.index(0) == 0
    with pytest.raises(ConfigError, match="unknown point"):
        s.index("zz")
    with pytest.raises(ConfigError):
        s.index(5)


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=7))
def test_points_on_a_line_always_form_a_metric(xs):
    x = np.array(xs)
    assert validate_metric_space(space(np.abs(x[:, None] - x[None, :])))


def test_label_grid_blocks_and_agent_blocks_agree():
    grid = LabelGrid(3)
    np.testing.assert_allclose(grid.representatives, [1 / 3, 2 / 3, 1.0])
    for N in (3, 6, 9):
        for i in range(1, N + 1):
            assert agent_block(i, N, 3) == grid.block_of(i / N)
    with pytest.raises(ConfigError):
        grid.block_of(0.0)
    with pytest.raises(ConfigError):
        LabelGrid(0)


def test_noise_spec_validates_laws():
    with pytest.raises(ConfigError):
        NoiseSpec((0, 1), [0.5, 0.6], (0,), [1.0])
    with pytest.raises(ConfigError):
        NoiseSpec((0, 1), [1.0], (0,), [1.0])
    n = NoiseSpec.trivial()
    assert n.n_idio == n.n_common == 1


def test_product_distance_matches_hand_values():
    X, A = FiniteMetricSpace.line(3), FiniteMetricSpace.discrete(2, "a")
    assert product_distance((0.25, 0, 1), (0.75, 2, 0), X, A) == pytest.approx(0.5 + 2 + 1)
    assert product_distance((1.0, "s1"), (0.0, "s1"), X) == 1.0
    with pytest.raises(ConfigError):
        product_distance((0.1, 0, 1), (0.2, 0), X, A)
    pts = np.array([[0.1, 0, 1], [0.9, 2, 0]])
    assert product_cost_matrix(pts, pts, X, A)[0, 1] == pytest.approx(0.8 + 2 + 1)


def test_product_diameter_adds_the_label_unit():
    X, A = FiniteMetricSpace.line(3), FiniteMetricSpace.discrete(2, "a")
    assert product_diameter(X) == 3.0
    assert product_diameter(X, A) == 4.0
