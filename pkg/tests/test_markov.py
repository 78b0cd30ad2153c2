import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from conftest import GENERAL_RATES, MODEL1_RATES, MODEL4_RATES, random_rates
from qdpolyspec.errors import (
    DegenerateSteadyState,
    DimensionMismatch,
    ModelError,
    NegativeRate,
    NotTwoLevel,
)
from qdpolyspec.markov import (
    FULL,
    MARKOV,
    Liouvillian,
    MarkovModel,
    MeasurementOperator,
    as_full,
    build_liouvillian,
    jump_partition,
    measured_liouvillian,
    steady_state,
)


def test_symmetric_two_state_generator():
    m = MarkovModel(2, {(0, 1): 1.0, (1, 0): 1.0}, (0, 1))
    np.testing.assert_array_equal(build_liouvillian(m).matrix, [[-1, 1], [1, -1]])


def test_general_three_state_matrix():
    g = GENERAL_RATES
    m = MarkovModel(3, g, (0, 1, 1))
    expected = np.array([
        [-(g[0, 1] + g[0, 2]), g[1, 0], g[2, 0]],
        [g[0, 1], -(g[1, 0] + g[1, 2]), g[2, 1]],
        [g[0, 2], g[1, 2], -(g[2, 0] + g[2, 1])],
    ])
    np.testing.assert_allclose(build_liouvillian(m).matrix, expected, rtol=0, atol=0)


def test_model1_column_sums(model1):
    lmat = build_liouvillian(model1).matrix
    assert np.abs(lmat.sum(axis=0)).max() <= 1e-10 * np.abs(lmat).max()


def test_model_validation():
    with pytest.raises(NegativeRate):
        MarkovModel(2, {(0, 1): -1.0, (1, 0): 1.0}, (0, 1))
    with pytest.raises(DimensionMismatch):
        MarkovModel(2, {(0, 2): 1.0, (1, 0): 1.0}, (0, 1))
    with pytest.raises(DimensionMismatch):
        MarkovModel(2, {(0, 1): 1.0}, (0, 1, 1))
    with pytest.raises(ModelError):
        MarkovModel(2, {(0, 1): 0.0}, (0, 1))
    with pytest.raises(ModelError):
        MarkovModel(2, {(0, 1): 1.0}, (0, 1), hamiltonian=np.array([[0, 1], [0, 0]]))


@pytest.mark.parametrize(
    "rates, expected",
    [(MODEL1_RATES, (0.126, 0.676, 0.197)), (MODEL4_RATES, (0.126, 0.583, 0.291))],
)
def test_table_steady_states(rates, expected):
    p = steady_state(build_liouvillian(MarkovModel(3, rates, (0, 1, 1)))).probabilities
    np.testing.assert_allclose(p, expected, atol=0.002)


def test_symmetric_steady_state():
    m = MarkovModel(2, {(0, 1): 7.0, (1, 0): 7.0}, (0, 1))
    np.testing.assert_allclose(steady_state(build_liouvillian(m)).probabilities, [0.5, 0.5])


def test_disconnected_model_is_degenerate():
    m = MarkovModel(4, {(0, 1): 1.0, (1, 0): 1.0, (2, 3): 1.0, (3, 2): 1.0}, (0, 1, 0, 1))
    with pytest.raises(DegenerateSteadyState):
        steady_state(build_liouvillian(m))


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_generator_properties(n, seed):
    rng = np.random.default_rng(seed)
    m = MarkovModel(n, random_rates(rng, n, 0.7), rng.normal(size=n))
    lmat = build_liouvillian(m).matrix
    scale = np.abs(lmat).max()
    assert np.abs(lmat.sum(axis=0)).max() <= 1e-10 * scale
    off = lmat[~np.eye(n, dtype=bool)]
    assert off.min() >= 0
    assert np.linalg.eigvals(lmat).real.max() <= 1e-9 * scale

    ss = steady_state(build_liouvillian(m))
    p = ss.probabilities
    assert abs(p.sum() - 1) <= 1e-10 and p.min() >= 0
    assert np.linalg.norm(lmat @ p) <= 1e-8 * np.linalg.norm(lmat) * np.linalg.norm(p)
    # independent oracle: null space by SVD
    null = linalg.null_space(lmat, rcond=1e-11)
    assert null.shape[1] == 1
    np.testing.assert_allclose(p, null[:, 0] / null[:, 0].sum(), rtol=1e-7, atol=1e-12)


@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_permutation_covariance(n, seed):
    rng = np.random.default_rng(seed)
    m = MarkovModel(n, random_rates(rng, n, 0.8), rng.normal(size=n))
    perm = rng.permutation(n)
    pm = m.permuted(perm)
    p = steady_state(build_liouvillian(m)).probabilities
    pp = steady_state(build_liouvillian(pm)).probabilities
    # state k of the original is state perm[k] of the permuted model
    np.testing.assert_allclose(pp[perm], p, rtol=1e-9, atol=1e-14)


@given(st.integers(2, 5), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_jump_partition_identities(n, n_low, seed):
    n_low = min(n_low, n - 1)
    rng = np.random.default_rng(seed)
    levels = [0.0] * n_low + [1.0] * (n - n_low)
    m = MarkovModel(n, random_rates(rng, n, 0.8), levels)
    j_down, j_up, l0 = jump_partition(m)
    lmat = build_liouvillian(m).matrix
    np.testing.assert_array_equal(l0 + j_up + j_down, lmat)
    p = steady_state(build_liouvillian(m)).probabilities
    up, down = j_up.sum(axis=0) @ p, j_down.sum(axis=0) @ p
    assert abs(up - down) <= 1e-9 * max(up, down)


def test_jump_partition_examples():
    j_down, j_up, _ = jump_partition(MarkovModel(2, {(0, 1): 3.0, (1, 0): 5.0}, (0, 1)))
    np.testing.assert_array_equal(j_up, [[0, 0], [3, 0]])
    np.testing.assert_array_equal(j_down, [[0, 5], [0, 0]])

    m3 = MarkovModel(3, {(0, 1): 10.0, (0, 2): 2.0, (1, 0): 4.0, (2, 1): 1.0}, (0, 1, 1))
    j_down, j_up, _ = jump_partition(m3)
    assert np.count_nonzero(j_up) == 2 and np.count_nonzero(j_down) == 1
    assert j_up[1, 0] == 10.0 and j_up[2, 0] == 2.0 and j_down[0, 1] == 4.0

    g = GENERAL_RATES
    j_down, j_up, _ = jump_partition(MarkovModel(3, g, (0, 1, 1)))
    np.testing.assert_array_equal(j_up, [[0, 0, 0], [g[0, 1], 0, 0], [g[0, 2], 0, 0]])
    np.testing.assert_array_equal(j_down, [[0, g[1, 0], g[2, 0]], [0, 0, 0], [0, 0, 0]])

    with pytest.raises(NotTwoLevel):
        jump_partition(MarkovModel(3, MODEL1_RATES, (0, 1, 2)))


def test_measured_liouvillian_markov_unchanged(model1):
    lv = build_liouvillian(model1)
    for beta in (0.0, 0.5, 3.0):
        out = measured_liouvillian(lv, MeasurementOperator(model1.levels, beta))
        np.testing.assert_array_equal(out.matrix, lv.matrix)
    with pytest.raises(DimensionMismatch):
        measured_liouvillian(lv, MeasurementOperator(np.zeros(2)))


def test_measurement_damping_matches_symbolic_dissipator():
    # expand beta^2 D[A] rho for A = diag(0, 1) symbolically
    beta, r00, r01, r10, r11 = sp.symbols("beta r00 r01 r10 r11")
    rho = sp.Matrix([[r00, r01], [r10, r11]])
    a = sp.diag(0, 1)
    d = beta**2 * (a * rho * a.H - (a.H * a * rho + rho * a.H * a) / 2)
    assert sp.simplify(d[0, 1] + beta**2 / 2 * r01) == 0
    assert sp.simplify(d[1, 0] + beta**2 / 2 * r10) == 0
    assert d[0, 0] == 0 and d[1, 1] == 0

    m = MarkovModel(2, {(0, 1): 1.0, (1, 0): 2.0}, (0, 1))
    full = as_full(build_liouvillian(m))
    out = measured_liouvillian(full, MeasurementOperator((0.0, 1.0), 1.0))
    extra = out.matrix - full.matrix
    # column-stacked vec: coherence rho_01 sits at index 2, rho_10 at index 1
    np.testing.assert_allclose(np.diag(extra), [0, -0.5, -0.5, 0], atol=1e-15)
    assert np.count_nonzero(extra - np.diag(np.diag(extra))) == 0
    zero = measured_liouvillian(full, MeasurementOperator((0.0, 1.0), 0.0))
    np.testing.assert_array_equal(zero.matrix, full.matrix)


def test_full_representation_steady_state(model1):
    full = as_full(build_liouvillian(model1))
    assert full.representation == FULL and full.dim == 9
    p_full = steady_state(full).probabilities
    p = steady_state(build_liouvillian(model1)).probabilities
    np.testing.assert_allclose(p_full, p, rtol=1e-10)


def test_hamiltonian_model_builds_full_generator():
    h = np.array([[0.0, 50.0], [50.0, 10.0]])
    m = MarkovModel(2, {(0, 1): 100.0, (1, 0): 200.0}, (0, 1), hamiltonian=h)
    lv = build_liouvillian(m)
    assert lv.representation == FULL
    ss = steady_state(lv)
    rho = ss.vector.reshape(2, 2, order="F")
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-12)
    assert abs(np.trace(rho) - 1) < 1e-12
    assert ss.residual < 1e-10
    assert np.all(np.linalg.eigvals(lv.matrix).real <= 1e-9 * np.abs(lv.matrix).max())


def test_liouvillian_repr_tags(model1):
    lv = build_liouvillian(model1)
    assert isinstance(lv, Liouvillian) and lv.representation == MARKOV and lv.dim == 3
    np.testing.assert_array_equal(lv.trace_row(), np.ones(3))


def test_fingerprint_and_serialization(model1):
    same = MarkovModel(3, dict(MODEL1_RATES), (0.0, 1.0, 1.0))
    assert model1.fingerprint() == same.fingerprint()
    other = model1.replace(output_level=(0.0, 1.0, 2.0))
    assert other.fingerprint() != model1.fingerprint()
    d = model1.to_dict()
    assert d["n_states"] == 3 and len(d["rates"]) == 4
