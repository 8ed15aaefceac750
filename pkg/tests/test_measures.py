import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cnemf.errors import ConfigError, DomainError, PreconditionError, UnsupportedError
from cnemf.measures import (
    AtomicMeasure,
    JointControlMeasure,
    LiftedMeasure,
    PolicyKernel,
    aggregate_atoms,
    aggregate_blocks,
    compose_kernel,
    coupling_project,
    disintegrate,
    from_table,
    make_empirical,
    to_table,
)


def simplex_rows(K, n):
    return arrays(float, (K, n), elements=st.floats(0.01, 1.0)).map(lambda a: a / a.sum(axis=1, keepdims=True))


@st.composite
def lifted_and_kernel(draw):
    K = draw(st.integers(1, 3))
    nX = draw(st.integers(1, 3))
    nA = draw(st.integers(1, 3))
    rows = draw(simplex_rows(K, nX))
    kern = draw(simplex_rows(K * nX, nA)).reshape(K, nX, nA)
    return LiftedMeasure(rows), PolicyKernel(kern)


def test_measure_validation():
    with pytest.raises(DomainError):
        LiftedMeasure([[0.5, 0.6]])
    with pytest.raises(ConfigError):
        LiftedMeasure([0.5, 0.5])
    with pytest.raises(DomainError):
        JointControlMeasure(np.full((1, 2, 2), 0.3))
    with pytest.raises(DomainError):
        PolicyKernel([[[0.2, 0.2]]])


def test_lifted_empirical_spreads_each_agent_over_its_block():
    mu = make_empirical([1 / 3, 2 / 3, 1.0], [0, 1, 1], lifted=True, n_states=2)
    np.testing.assert_array_equal(mu.rows, [[1, 0], [0, 1], [0, 1]])
    a = make_empirical([0.5, 1.0], [0, 1], actions=[1, 0], lifted=True, n_states=2, n_actions=2)
    assert isinstance(a, JointControlMeasure)
    assert a.weights[0, 0, 1] == 0.5 and a.weights[1, 1, 0] == 0.5


def test_empirical_rejects_bad_labels():
    with pytest.raises(DomainError):
        make_empirical([0.0, 1.0], [0, 1])
    with pytest.raises(UnsupportedError):
        make_empirical([0.3, 1.0], [0, 1], lifted=True)
    atoms = make_empirical([0.3, 1.0], [0, 1])
    assert isinstance(atoms, AtomicMeasure) and atoms.N == 2


@given(lifted_and_kernel())
def test_disintegration_inverts_composition(pair):
    mu, kernel = pair
    back_mu, back_k = disintegrate(compose_kernel(mu, kernel))
    np.testing.assert_allclose(back_mu.rows, mu.rows, atol=1e-12)
    np.testing.assert_allclose(back_k.probs, kernel.probs, atol=1e-12)


@given(lifted_and_kernel(), st.integers(0, 10_000))
def test_coupling_projection_fixes_the_marginal_and_is_idempotent(pair, seed):
    mu, kernel = pair
    rng = np.random.default_rng(seed)
    other = LiftedMeasure(rng.dirichlet(np.ones(mu.n_states), size=mu.K))
    a = compose_kernel(other, kernel)
    p = coupling_project(mu, a)
    np.testing.assert_allclose(p.state_marginal(), mu.joint(), atol=1e-12)
    assert coupling_project(mu, p) is p


def test_disintegration_uses_uniform_law_on_empty_cells():
    w = np.zeros((1, 2, 2))
    w[0, 0, 1] = 1.0
    mu, k = disintegrate(JointControlMeasure(w))
    np.testing.assert_array_equal(mu.rows, [[1.0, 0.0]])
    np.testing.assert_array_equal(k.probs[0, 1], [0.5, 0.5])
    skewed = np.zeros((2, 1, 1))
    skewed[0, 0, 0] = 1.0
    with pytest.raises(PreconditionError):
        disintegrate(JointControlMeasure(skewed))


def test_block_aggregation():
    mu = LiftedMeasure([[1, 0], [0, 1], [1, 0], [1, 0]])
    np.testing.assert_allclose(aggregate_blocks(mu, 2).rows, [[0.5, 0.5], [1.0, 0.0]])
    with pytest.raises(UnsupportedError):
        aggregate_blocks(mu, 3)
    atoms = AtomicMeasure([0.25, 0.5, 0.75, 1.0], [0, 1, 0, 0], [1, 1, 0, 0])
    agg = aggregate_atoms(atoms, 2, 2, 2)
    assert agg.weights[0, 0, 1] == 0.25 and agg.weights[0, 1, 1] == 0.25 and agg.weights[1, 0, 0] == 0.5


@given(lifted_and_kernel())
def test_table_round_trip(pair):
    mu, kernel = pair
    back = from_table(to_table(mu))
    np.testing.assert_allclose(back.rows, mu.rows, atol=1e-15)
    a = compose_kernel(mu, kernel)
    assert from_table(to_table(a)) == a


def test_table_rejects_garbage():
    with pytest.raises(ConfigError):
        from_table("block state weight\n0 0 1.0\n")
