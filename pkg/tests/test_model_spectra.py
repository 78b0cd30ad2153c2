import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from conftest import MODEL1_RATES, random_rates
from qdpolyspec.markov import (
    MarkovModel,
    MeasurementOperator,
    build_liouvillian,
    measured_liouvillian,
    steady_state,
)
from qdpolyspec.model_spectra import (
    analytic_s1,
    analytic_s2,
    analytic_s3,
    analytic_s4,
    g_prime,
    model_cache,
    model_spectrum,
)
from qdpolyspec.wtd import EquivParams, equiv_model

# random chains without detailed balance have complex bispectra; real parts are compared
pytestmark = pytest.mark.filterwarnings("ignore:S3 has an imaginary part:RuntimeWarning")

F64 = np.linspace(0.0, 5000.0, 64)


def rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


# -- second order ------------------------------------------------------------

@given(st.floats(1.0, 1e4), st.floats(1.0, 1e4), st.floats(-3, 3), st.floats(0.1, 3))
def test_two_state_s2_closed_form(g01, g10, low, gap):
    m = MarkovModel(2, {(0, 1): g01, (1, 0): g10}, (low, low + gap))
    f = np.linspace(0, 3 * (g01 + g10), 50)
    w = 2 * np.pi * f
    g = g01 + g10
    p0, p1 = g10 / g, g01 / g
    expected = 2 * p0 * p1 * gap**2 * g / (g**2 + w**2)
    assert rel(analytic_s2(m, None, f), expected) < 1e-10


def test_two_state_lorentzian_width_is_rate_sum(two_state):
    g = sum(two_state.rates.values())
    s0 = analytic_s2(two_state, None, 0.0)
    # half maximum at angular frequency g01 + g10
    assert analytic_s2(two_state, None, g / (2 * np.pi)) == pytest.approx(s0 / 2, rel=1e-12)


@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_s2_routes_agree(n, seed):
    rng = np.random.default_rng(seed)
    m = MarkovModel(n, random_rates(rng, n, 0.8, 10, 5000), rng.normal(size=n))
    f = np.linspace(0, 3000, 17)
    a = analytic_s2(m, None, f)
    b = analytic_s2(m, None, f, method="solve")
    assert rel(a, b) < 1e-9
    assert np.all(a >= -1e-12 * np.abs(a).max())


def test_g_prime_properties(model1):
    cache = model_cache(model1, MeasurementOperator.from_model(model1))
    lmat = build_liouvillian(model1).matrix
    p = steady_state(build_liouvillian(model1)).probabilities
    g0 = g_prime(cache, 0.0)
    # G'(0) annihilates the steady state and is orthogonal to the trace
    np.testing.assert_allclose(g0 @ p, 0, atol=1e-14)
    np.testing.assert_allclose(np.ones(3) @ g0, 0, atol=1e-14)
    # L G'(0) = -(1 - P0)
    proj = np.outer(p, np.ones(3))
    np.testing.assert_allclose(lmat @ g0, -(np.eye(3) - proj), atol=1e-12)
    for w in (10.0, 3e3):
        np.testing.assert_allclose(g_prime(cache, -w), np.conj(g_prime(cache, w)), atol=1e-15)
    big = g_prime(cache, 1e9)
    assert np.abs(big).max() < 1e-8


def test_g_prime_two_state_value(two_state):
    cache = model_cache(two_state, MeasurementOperator.from_model(two_state))
    g = sum(two_state.rates.values())
    p = steady_state(build_liouvillian(two_state)).probabilities
    g0 = g_prime(cache, 0.0)
    # (1 - P0) / gamma on the two-state chain
    np.testing.assert_allclose(g0, (np.eye(2) - np.outer(p, np.ones(2))) / g, rtol=1e-12)


def test_s1_examples(model1, two_state):
    assert analytic_s1(two_state) == pytest.approx(0.3)
    p = steady_state(build_liouvillian(model1)).probabilities
    assert analytic_s1(model1) == pytest.approx(1 - p[0], rel=1e-12)
    assert analytic_s1(model1, MeasurementOperator(model1.levels, 2.0)) == pytest.approx(4 * (1 - p[0]))


def test_beta_scaling(model1):
    f = np.linspace(0, 2000, 9)
    for beta in (0.5, 2.0):
        meas = MeasurementOperator(model1.levels, beta)
        base = MeasurementOperator(model1.levels, 1.0)
        assert rel(analytic_s2(model1, meas, f), beta**4 * analytic_s2(model1, base, f)) < 1e-12
        assert rel(analytic_s3(model1, meas, f), beta**6 * analytic_s3(model1, base, f)) < 1e-12
        assert rel(analytic_s4(model1, meas, f), beta**8 * analytic_s4(model1, base, f)) < 1e-12
    assert rel(analytic_s2(model1, MeasurementOperator(model1.levels, 2.0), f),
               16 * analytic_s2(model1, None, f)) < 1e-12


def test_noise_floor():
    m = MarkovModel(2, {(0, 1): 10.0, (1, 0): 20.0}, (0, 1))
    f = np.array([0.0, 100.0])
    assert rel(analytic_s2(m, None, f, include_noise=True, noise_level=3.0) - analytic_s2(m, None, f), np.full(2, 3.0)) < 1e-14
    assert rel(analytic_s2(m, None, f, include_noise=True) - analytic_s2(m, None, f), np.full(2, 0.25)) < 1e-14


# -- third order ---------------------------------------------------------------

def test_symmetric_two_state_s3_vanishes():
    m = MarkovModel(2, {(0, 1): 500.0, (1, 0): 500.0}, (-1.0, 1.0))
    s3 = analytic_s3(m, None, F64)
    assert np.abs(s3).max() <= 1e-12 * analytic_s2(m, None, 0.0) ** 1.5


def test_s3_sign_flips_with_levels(two_state):
    flipped = two_state.replace(output_level=(1.0, 0.0))
    a = analytic_s3(two_state, None, F64)
    b = analytic_s3(flipped, None, F64)
    assert rel(a, -b) < 1e-10
    assert np.abs(a).max() > 0


def test_two_state_s3_closed_form():
    m = MarkovModel(2, {(0, 1): 300.0, (1, 0): 700.0}, (0, 1))
    f = np.linspace(0, 400, 7)
    assert rel(analytic_s3(m, None, f), analytic_s3(m, None, f, method="solve")) < 1e-10
    g = 1000.0
    p0, p1 = 0.7, 0.3
    # S3(w1, w2) for the two-state chain: sum over 6 orderings of p0 p1 (p1 - p0) * G(a) G(b)
    w1, w2 = np.meshgrid(2 * np.pi * f, 2 * np.pi * f, indexing="ij")
    ws = (w1, w2, -w1 - w2)
    acc = 0
    for k, _, mm in itertools.permutations(range(3)):
        acc = acc + 1 / (g - 1j * ws[mm]) / (g + 1j * ws[k])
    expected = (p0 * p1 * (p0 - p1) * acc).real
    assert rel(analytic_s3(m, None, f), expected) < 1e-10


@given(st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_s3_routes_and_symmetry(n, seed):
    rng = np.random.default_rng(seed)
    m = MarkovModel(n, random_rates(rng, n, 0.8, 10, 5000), rng.normal(size=n))
    f = np.linspace(0, 2000, 6)
    a = analytic_s3(m, None, f)
    assert rel(a, analytic_s3(m, None, f, method="solve")) < 1e-8
    assert rel(a, a.T) < 1e-10


# -- fourth order -------------------------------------------------------------

def dense_g(lmat, p0, w):
    eye = np.eye(len(lmat))
    return -np.linalg.solve(lmat - p0 + 1j * w * eye, eye - p0)


def s4_quadrature(model, w1, w2):
    """Reduced S4 with the two convolution integrals done by adaptive quadrature."""
    lmat = build_liouvillian(model).matrix.astype(complex)
    p = steady_state(build_liouvillian(model)).probabilities
    p0 = np.outer(p, np.ones(len(p)))
    a = np.diag(model.levels).astype(complex)
    ap = a - (np.ones(len(p)) @ a @ p) * np.eye(len(p))
    left, right = np.ones(len(p)) @ ap, ap @ p
    g = lambda w: dense_g(lmat, p0, w)  # noqa: E731
    ws = (w1, w2, -w1, -w2)

    def integral(fn):
        re = integrate.quad(lambda x: fn(x).real, -np.inf, np.inf, epsabs=0, epsrel=1e-11, limit=400)[0]
        im = integrate.quad(lambda x: fn(x).imag, -np.inf, np.inf, epsabs=0, epsrel=1e-11, limit=400)[0]
        return (re + 1j * im) / (2 * np.pi)

    acc = 0j
    for k, l_, m, n in itertools.permutations(range(4)):
        gn, gk = g(ws[n]), g(-ws[k])
        y = ws[m] + ws[n]
        acc += left @ gn @ ap @ g(y) @ ap @ gk @ right
        acc -= integral(lambda x: (left @ gn @ g(y - x) @ right) * (left @ g(x) @ gk @ right))
        acc -= integral(lambda x: (left @ gn @ gk @ g(y - x) @ right) * (left @ g(x) @ right))
    return acc.real


def test_s4_against_quadrature():
    m = MarkovModel(3, {(0, 1): 5.0, (1, 0): 2.0, (1, 2): 0.7, (2, 1): 1.5}, (0.0, 1.0, 1.0))
    pts = [(0.0, 0.0), (0.8, 2.5), (-1.3, 4.0)]
    f1 = np.array([p[0] for p in pts]) / (2 * np.pi)
    f2 = np.array([p[1] for p in pts]) / (2 * np.pi)
    ana = analytic_s4(m, None, f1, f2, outer=False)
    quad = np.array([s4_quadrature(m, *p) for p in pts])
    np.testing.assert_allclose(ana, quad, rtol=1e-6, atol=1e-9 * np.abs(quad).max())


@given(st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_s4_routes_and_symmetry(n, seed):
    rng = np.random.default_rng(seed)
    m = MarkovModel(n, random_rates(rng, n, 0.8, 10, 5000), rng.normal(size=n))
    f = np.linspace(0, 2000, 4)
    a = analytic_s4(m, None, f)
    assert rel(a, analytic_s4(m, None, f, method="solve")) < 1e-8
    assert rel(a, a.T) < 1e-10


def test_s4_of_frozen_process_vanishes():
    # with a single output level there is no fluctuation at all
    m = MarkovModel(3, MODEL1_RATES, (1.0, 1.0, 1.0))
    assert np.abs(analytic_s2(m, None, F64)).max() < 1e-15
    assert np.abs(analytic_s3(m, None, F64[:8])).max() < 1e-15
    assert np.abs(analytic_s4(m, None, F64[:8])).max() < 1e-15


def test_two_state_s4_zero_frequency_value():
    # telegraph 4th cumulant integral at zero frequency, cross-checked against solve route
    m = MarkovModel(2, {(0, 1): 100.0, (1, 0): 100.0}, (0, 1))
    assert analytic_s4(m, None, [0.0]) == pytest.approx(analytic_s4(m, None, [0.0], method="solve"), rel=1e-10)


# -- invariances -------------------------------------------------------------------

@given(st.floats(-10, 10))
def test_level_shift_invariance(c):
    m = MarkovModel(3, MODEL1_RATES, (0.0, 1.0, 1.0))
    s = m.replace(output_level=(c, 1.0 + c, 1.0 + c))
    f = np.linspace(0, 3000, 8)
    assert rel(analytic_s2(s, None, f), analytic_s2(m, None, f)) < 1e-9
    assert rel(analytic_s3(s, None, f), analytic_s3(m, None, f)) < 1e-8
    assert rel(analytic_s4(s, None, f), analytic_s4(m, None, f)) < 1e-8


@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    m = MarkovModel(4, random_rates(rng, 4, 0.7, 10, 5000), rng.normal(size=4))
    pm = m.permuted(rng.permutation(4))
    f = np.linspace(0, 2000, 6)
    assert rel(analytic_s2(pm, None, f), analytic_s2(m, None, f)) < 1e-9
    assert rel(analytic_s3(pm, None, f), analytic_s3(m, None, f)) < 1e-8
    assert rel(analytic_s4(pm, None, f), analytic_s4(m, None, f)) < 1e-8


def test_equivalent_models_share_spectra():
    params = EquivParams(5115.0, 68.0, 173.0, 332.0)
    models = [equiv_model(params, k) for k in (1, 2, 3, 4)]
    ref = [analytic_s2(models[0], None, F64), analytic_s3(models[0], None, F64), analytic_s4(models[0], None, F64)]
    for m in models[1:]:
        assert rel(analytic_s2(m, None, F64), ref[0]) < 1e-9
        assert rel(analytic_s3(m, None, F64), ref[1]) < 1e-9
        assert rel(analytic_s4(m, None, F64), ref[2]) < 1e-9


def test_markov_measurement_does_not_change_generator(model1):
    lv = build_liouvillian(model1)
    assert np.array_equal(measured_liouvillian(lv, MeasurementOperator(model1.levels, 5.0)).matrix, lv.matrix)


def test_model_spectrum_packing(model1):
    s2 = model_spectrum(model1, None, 2, (F64,))
    assert s2.order == 2 and s2.values.shape == (64,) and np.all(s2.variance == 0)
    s3 = model_spectrum(model1, None, 3, (F64[:5],))
    assert s3.values.shape == (5, 5)
    s1 = model_spectrum(model1, None, 1, ())
    assert s1.values == pytest.approx(analytic_s1(model1))
    assert s2.meta["model_hash"] == model1.fingerprint()
