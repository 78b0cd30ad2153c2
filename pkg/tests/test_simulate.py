import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import MODEL1_RATES, random_rates
from qdpolyspec.errors import AbsorbingState, EmptyRecord
from qdpolyspec.markov import MarkovModel, build_liouvillian, steady_state
from qdpolyspec.simulate import (
    JumpRecord,
    iter_ensemble,
    render_trace,
    simulate_ensemble,
    simulate_jumps,
    simulate_trace,
)


def brute_render(jumps, levels, dt, n):
    """Time-average of the level path over each bin by explicit interval overlap."""
    edges = np.concatenate([[0.0], jumps.times, [jumps.t_end]])
    out = np.zeros(n)
    for k in range(n):
        a, b = k * dt, (k + 1) * dt
        acc = 0.0
        for s, lo, hi in zip(jumps.states, edges[:-1], edges[1:]):
            overlap = min(b, hi) - max(a, lo)
            if overlap > 0:
                acc += levels[s] * overlap
        out[k] = acc / dt
    return out


def test_two_state_holding_times():
    m = MarkovModel(2, {(0, 1): 100.0, (1, 0): 100.0}, (0, 1))
    rec = simulate_jumps(m, 100.0, seed=3)
    dwell = rec.dwell_times()[1:-1]
    states = rec.states[1:-1]
    for s in (0, 1):
        assert abs(dwell[states == s].mean() - 0.01) < 0.03 * 0.01


def test_model1_occupation_matches_steady_state(model1):
    rec = simulate_jumps(model1, 100.0, seed=11)
    p = steady_state(build_liouvillian(model1)).probabilities
    np.testing.assert_allclose(rec.occupation(3), p, atol=0.01)


def test_single_state_is_absorbing():
    with pytest.raises(AbsorbingState):
        simulate_jumps(MarkovModel(1, {}, (0.0,)), 1.0)


def test_path_structure(model1):
    rec = simulate_jumps(model1, 2.0, seed=1)
    assert np.all(np.diff(rec.times) > 0)
    assert rec.times[0] > 0 and rec.times[-1] < rec.t_end
    assert np.all(np.diff(rec.states) != 0)
    q = model1.rate_matrix()
    assert np.all(q[rec.states[:-1], rec.states[1:]] > 0)


def test_render_constant_path():
    m = MarkovModel(2, {(0, 1): 1.0, (1, 0): 1.0}, (0.7, 2.0))
    rec = JumpRecord(np.zeros(0), np.array([0]), 1e-3)
    tr = render_trace(rec, m, 1e-5)
    np.testing.assert_array_equal(tr.samples, 0.7)
    with pytest.raises(EmptyRecord):
        render_trace(JumpRecord(np.zeros(0), np.array([0]), 1e-6), m, 1e-5)


@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 3e-3))
def test_render_is_exact_time_average(seed, dt):
    rng = np.random.default_rng(seed)
    m = MarkovModel(3, random_rates(rng, 3, 1.0, 200, 5000), rng.normal(size=3))
    rec = simulate_jumps(m, 0.05, seed=seed)
    tr = render_trace(rec, m, dt)
    n = len(tr)
    np.testing.assert_allclose(tr.samples, brute_render(rec, m.levels, dt, n), rtol=0, atol=1e-12)


@given(st.floats(-5, 5), st.integers(0, 1000))
def test_render_level_shift_is_exact(c, seed):
    m = MarkovModel(3, MODEL1_RATES, (0.0, 1.0, 1.0))
    shifted = MarkovModel(3, MODEL1_RATES, (c, 1.0 + c, 1.0 + c))
    rec = simulate_jumps(m, 0.02, seed=seed)
    a = render_trace(rec, m, 1e-5).samples
    b = render_trace(rec, shifted, 1e-5).samples
    np.testing.assert_allclose(b - a, c, rtol=0, atol=1e-12 * max(1, abs(c)))


def test_small_dt_histogram_is_two_deltas(two_state):
    rec = simulate_jumps(two_state, 5.0, seed=2)
    tr = render_trace(rec, two_state, 1e-6)
    z = tr.samples
    at0, at1 = np.mean(z == 0.0), np.mean(z == 1.0)
    assert at0 + at1 > 0.998  # only bins holding a jump are in between
    p = steady_state(build_liouvillian(two_state)).probabilities
    occ = rec.occupation(2)
    np.testing.assert_allclose([at0, at1], occ, atol=2e-3)
    np.testing.assert_allclose(occ, p, atol=0.02)


def test_noisy_histogram_is_gaussian_mixture(model1):
    sigma = 0.3
    tr = simulate_trace(model1, 2.0, 2.5e-6, sigma, seed=4)
    rec = simulate_jumps(model1, 2.0, seed=4)
    p_low = rec.occupation(3)[0]
    x = np.sort(tr.samples)
    mix = p_low * stats.norm.cdf(x, 0, sigma) + (1 - p_low) * stats.norm.cdf(x, 1, sigma)
    emp = np.arange(1, len(x) + 1) / len(x)
    assert np.abs(emp - mix).max() < 0.01
    hist, edges = np.histogram(tr.samples, bins=41, range=(-1, 2))
    centers = 0.5 * (edges[1:] + edges[:-1])
    peaks = centers[1:-1][(hist[1:-1] > hist[:-2]) & (hist[1:-1] > hist[2:])]
    assert len(peaks) == 2
    np.testing.assert_allclose(sorted(peaks), [0, 1], atol=0.08)


def test_noise_statistics(two_state):
    rec = JumpRecord(np.zeros(0), np.array([1]), 1.0)
    tr = render_trace(rec, two_state, 1e-5, noise_sigma=0.5, seed=9)
    z = tr.samples - 1.0
    assert abs(z.std() - 0.5) < 5 * 0.5 / np.sqrt(2 * len(z))
    assert abs(z.mean()) < 5 * 0.5 / np.sqrt(len(z))


def test_transition_balance_and_mean(model1):
    rec = simulate_jumps(model1, 20.0, seed=8)
    high = model1.levels[rec.states] > 0.5
    ups = np.sum(~high[:-1] & high[1:])
    downs = np.sum(high[:-1] & ~high[1:])
    assert abs(int(ups) - int(downs)) <= 1
    tr = render_trace(rec, model1, 1e-5)
    p = steady_state(build_liouvillian(model1)).probabilities
    # slowest relaxation ~ 1/170 s; effective independent samples ~ T * 170 / 2
    eff = 20.0 * 170 / 2
    assert abs(tr.samples.mean() - (1 - p[0])) < 5 * np.sqrt(p[0] * (1 - p[0]) / eff)


def test_occupation_convergence_bound():
    m = MarkovModel(2, {(0, 1): 50.0, (1, 0): 80.0}, (0, 1))
    t_end = 400.0  # t_end * min_rate = 2e4
    p = steady_state(build_liouvillian(m)).probabilities
    occ = simulate_jumps(m, t_end, seed=21).occupation(2)
    eff = t_end * 130.0 / 2
    assert np.all(np.abs(occ - p) <= 5 * np.sqrt(p * (1 - p) / eff))


def test_ensemble_contract(model1):
    traces = simulate_ensemble(model1, 0.01, 1e-5, 0.1, 250, seed=5)
    assert len(traces) == 250
    digests = {t.samples.tobytes() for t in traces}
    assert len(digests) == 250

    single = simulate_ensemble(model1, 0.05, 1e-5, 0.1, 1, seed=6)[0]
    direct = render_trace(simulate_jumps(model1, 0.05, 6), model1, 1e-5, 0.1, 6)
    np.testing.assert_array_equal(single.samples, direct.samples)

    a = simulate_ensemble(model1, 0.05, 1e-5, 0.1, 2, seed=7)
    b = list(iter_ensemble(model1, 0.05, 1e-5, 0.1, 2, seed=7))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.samples, y.samples)
    with pytest.raises(ValueError):
        simulate_ensemble(model1, 0.05, 1e-5, 0.1, 0, seed=7)
