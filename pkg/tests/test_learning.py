import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ambistop.learning import (
    DriftPrior,
    PosteriorState,
    f_m,
    gamma_drift,
    log_f_m,
    noise_streams,
    posterior_update,
    sample_scenario,
    simulate_learning_paths,
)
from ambistop.scenario_model import DivestModel, SimplexPoint, make_simplex

from conftest import small_divest_model


def two_atoms():
    return DriftPrior((-1.0, 1.0), SimplexPoint.uniform(2), sigma=1.0, x0=0.0)


def signal_model(means, sigma_s=1.0, T=3):
    """Divestment model that only matters for its signal: constant means per scenario."""
    base = small_divest_model(noise=False)
    n = len(means)
    sig = np.tile(np.asarray(means, dtype=float)[:, None], (1, T + 1))
    return DivestModel(base.phi, base.vol, np.zeros((n, T + 1, 1)), sig, sigma_s, 0.95,
                       base.revenue, base.closure_cost, T)


def test_f_m_examples():
    prior = two_atoms()
    assert f_m(prior, 0.0, 0.0) == pytest.approx(1.0, rel=1e-15)
    single = DriftPrior((0.3,), [1.0], sigma=0.5, x0=0.1)
    t, x = 2.0, 0.7
    expo = -t * 0.09 / (2 * 0.25) + 0.3 * (x - 0.1 + 0.25 * t / 2) / 0.25
    assert f_m(single, t, x) == pytest.approx(math.exp(expo), rel=1e-13)
    assert f_m(prior, 1.0, 0.0) == pytest.approx(0.5 * (math.exp(-1.0) + 1.0), rel=1e-14)


def test_f_m_stays_finite_for_large_exponents():
    prior = DriftPrior((-1.0, 1.0), [0.5, 0.5], sigma=0.05)
    assert np.isfinite(log_f_m(prior, 1.0, 50.0))


def test_gamma_drift_examples():
    single = DriftPrior((0.3,), [1.0], sigma=0.5)
    assert gamma_drift(single, 1.7, -2.0) == pytest.approx(0.3)
    prior = DriftPrior((-0.05, 0.05, 0.15), [0.2, 0.3, 0.5], sigma=0.3)
    assert gamma_drift(prior, 0.0, 0.0) == pytest.approx(0.2 * -0.05 + 0.3 * 0.05 + 0.5 * 0.15, rel=1e-13)
    assert abs(gamma_drift(two_atoms(), 1.0, 10.0) - 1.0) < 1e-6


@given(st.floats(0.0, 10.0), st.floats(-5.0, 5.0), st.floats(0.0, 2.0))
def test_gamma_drift_bounded_and_monotone(t, x, dx):
    prior = DriftPrior((-0.05, 0.05, 0.15), [0.2, 0.3, 0.5], sigma=0.3)
    g0 = gamma_drift(prior, t, x)
    assert -0.05 - 1e-15 <= g0 <= 0.15 + 1e-15
    assert gamma_drift(prior, t, x + dx) >= g0 - 1e-15


def test_gamma_is_scaled_log_derivative_of_f_m():
    prior = DriftPrior((-0.05, 0.05, 0.15), [0.2, 0.3, 0.5], sigma=0.3)
    h = 1e-5
    for t in (0.5, 2.0, 4.0):
        for x in np.linspace(-1, 1, 9):
            slope = (log_f_m(prior, t, x + h) - log_f_m(prior, t, x - h)) / (2 * h)
            # d/dx log F = (posterior mean atom) / sigma^2
            assert prior.sigma**2 * slope == pytest.approx(gamma_drift(prior, t, x), abs=1e-4)


def test_posterior_update_examples():
    m = signal_model([0.5, 0.5])
    st0 = PosteriorState(make_simplex([0.3, 0.7]))
    out = posterior_update(st0, m, 2.0)
    np.testing.assert_allclose(out.pi.weights, [0.3, 0.7], rtol=1e-14)
    assert out.t == 1
    m2 = signal_model([0.0, 1.0])
    out = posterior_update(PosteriorState(SimplexPoint.vertex(2, 0)), m2, 5.0)
    assert out.pi.weights.tolist() == [1.0, 0.0]
    out = posterior_update(PosteriorState(SimplexPoint.uniform(2)), m2, 1.0)
    e = math.exp(0.5)
    np.testing.assert_allclose(out.pi.weights, [1 / (1 + e), e / (1 + e)], rtol=1e-14)


def test_posterior_update_survives_tiny_noise():
    m = signal_model([0.0, 1.0], sigma_s=1e-3)
    out = posterior_update(PosteriorState(SimplexPoint.uniform(2)), m, 0.4)
    assert out.pi.weights[0] == pytest.approx(1.0)


def test_posterior_update_horizon():
    m = signal_model([0.0, 1.0], T=1)
    with pytest.raises(ValueError):
        posterior_update(PosteriorState(SimplexPoint.uniform(2), t=1), m, 0.0)


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3), st.floats(-3, 3))
def test_posterior_update_stays_on_simplex(w, s):
    if sum(w) == 0:
        return
    m = signal_model([0.0, 0.5, 2.0], sigma_s=0.3)
    pi = make_simplex(w)
    out = posterior_update(PosteriorState(pi), m, s).pi.weights
    assert abs(out.sum() - 1) <= 1e-12
    assert np.all(out[pi.weights == 0] == 0)


def test_sample_scenario_examples():
    # indices are 0-based
    for u in (0.0, 0.3, 1.0):
        assert sample_scenario([1.0, 0.0, 0.0], u) == 0
    assert sample_scenario([0.5, 0.5], 0.5) == 0
    assert sample_scenario([0.2, 0.3, 0.5], 0.6) == 2


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5), st.floats(0.0, 1.0))
def test_sample_scenario_is_smallest_reaching_index(w, u):
    pi = np.asarray(w) / sum(w)
    i = sample_scenario(pi, u)
    c = np.cumsum(pi)
    assert c[i] >= u or i == len(pi) - 1
    assert i == 0 or c[i - 1] < u


def test_noise_streams_independent_and_reproducible():
    a = [g.random(4) for g in noise_streams(7)]
    b = [g.random(4) for g in noise_streams(7)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.allclose(a[0], a[1])


def test_simulation_recursion_and_determinism():
    m = signal_model([0.0, 0.4, 1.0], sigma_s=0.5)
    q = make_simplex([0.2, 0.3, 0.5])
    b1 = simulate_learning_paths(m, q, 50, seed=3)
    b2 = simulate_learning_paths(m, q, 50, seed=3)
    np.testing.assert_array_equal(b1.pi, b2.pi)
    assert np.isnan(b1.signal[:, 0]).all()
    # the stored posterior follows the recursion exactly
    for k in range(5):
        state = PosteriorState(q)
        for t in range(1, m.horizon_T + 1):
            state = posterior_update(state, m, b1.signal[k, t])
            np.testing.assert_allclose(state.pi.weights, b1.pi[k, t], rtol=1e-12, atol=1e-15)


def test_factors_do_not_depend_on_signal_model():
    m = signal_model([0.0, 1.0])
    b1 = simulate_learning_paths(m, SimplexPoint.uniform(2), 20, seed=1)
    b2 = simulate_learning_paths(m.replace(sigma_s=3.0), SimplexPoint.uniform(2), 20, seed=1)
    np.testing.assert_array_equal(b1.x_tilde, b2.x_tilde)


def test_uninformative_signal():
    m = signal_model([0.0, 1.0, 2.0], sigma_s=1e6)
    q = make_simplex([0.2, 0.3, 0.5])
    b = simulate_learning_paths(m, q, 500, seed=0)
    assert np.abs(b.pi[:, -1] - q.weights).max() < 1e-3


def test_single_scenario():
    m = signal_model([0.3])
    b = simulate_learning_paths(m, [1.0], 30, seed=0)
    assert np.all(b.pi == 1.0)
    assert np.all(b.theta == 0)


def test_strong_signal_concentrates():
    m = signal_model([0.0, 10.0, 20.0], sigma_s=1.0, T=5)
    b = simulate_learning_paths(m, SimplexPoint.uniform(3), 10_000, seed=11)
    truth = b.pi[np.arange(b.n_paths), -1, b.theta[:, 0]]
    assert np.mean(truth > 0.99) > 0.95


def test_resampled_scenarios_follow_posterior():
    m = signal_model([0.0, 0.5], sigma_s=0.5)
    b = simulate_learning_paths(m, SimplexPoint.uniform(2), 4000, seed=5, resample=True)
    # Theta_t is drawn from pi_{t-1}: the share in scenario 1 tracks the mean posterior
    share = (b.theta[:, 1:] == 1).mean(axis=0)
    expected = b.pi[:, :-1, 1].mean(axis=0)
    assert np.abs(share - expected).max() < 4 * 0.5 / math.sqrt(4000)
