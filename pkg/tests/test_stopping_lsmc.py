import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambistop.errors import RegressionSingular, StateSpaceTooLarge
from ambistop.scenario_model import ConstantCost, DiscreteNoise, DivestModel, LinearRevenue, SimplexPoint, make_simplex
from ambistop.stopping_lsmc import (
    LsmcConfig,
    LsmcInner,
    closure_histogram,
    design_matrix,
    lsmc_value,
    monomial_exponents,
    simulate_divest_paths,
    tree_oracle_divest,
)

from conftest import small_divest_model

CFG = LsmcConfig(n_paths=4000, seed=3)


def flat_model(intercept, cost, T=3, noise=None):
    base = small_divest_model(noise=False)
    return DivestModel(base.phi, base.vol, np.zeros((2, T + 1, 1)), np.zeros((2, T + 1)), 0.5, 0.9,
                       LinearRevenue(intercept, (0.0,)), ConstantCost(cost), T, noise=noise)


def test_config_validation():
    with pytest.raises(ValueError):
        LsmcConfig(n_paths=50)
    with pytest.raises(ValueError):
        LsmcConfig(basis_degree=4)


def test_monomial_counts():
    # C(n + d, d) monomials of total degree <= d
    assert len(monomial_exponents(2, 2)) == 6
    assert len(monomial_exponents(3, 3)) == 20
    X = design_matrix(np.array([[2.0, 3.0]]), 2)
    assert sorted(X[0].tolist()) == sorted([1.0, 2.0, 3.0, 4.0, 6.0, 9.0])


def test_no_revenue_with_salvage_closes_now():
    m = flat_model(0.0, -2.5)
    sol = lsmc_value(m, SimplexPoint.uniform(2), CFG)
    assert np.all(sol.stop_times == 0)
    assert sol.value == pytest.approx(2.5, rel=1e-12)
    assert tree_oracle_divest(flat_model(0.0, -2.5, noise=DiscreteNoise.three_point()), [0.5, 0.5]).value == pytest.approx(2.5)
    hist = closure_histogram(sol)
    assert hist[0].sum() == pytest.approx(1.0)
    assert hist[1:].sum() == 0.0


def test_constant_revenue_no_cost_runs_to_horizon():
    m = flat_model(1.5, 0.0)
    sol = lsmc_value(m, SimplexPoint.uniform(2), CFG)
    assert np.all(sol.stop_times == 3)
    assert sol.value == pytest.approx(1.5 * (0.9 + 0.81 + 0.729), rel=1e-12)


def test_oracle_deterministic_single_scenario():
    # zero factor noise: the best of the T+1 deterministic stopping values
    T = 3
    mu = np.array([[[0.0], [1.0], [-0.5], [-2.0]]])
    m = DivestModel([[0.0]], [[1e-12]], mu, np.zeros((1, T + 1)), 1.0, 0.9, LinearRevenue(0.0, (1.0,)),
                    ConstantCost(-0.2), T, noise=DiscreteNoise.three_point())
    g = np.array([0.0, 1.0, -0.5, -2.0])
    disc = 0.9 ** np.arange(T + 1)
    cands = [float(np.sum(disc[1:t + 1] * g[1:t + 1]) + disc[t] * 0.2) for t in range(T + 1)]
    assert tree_oracle_divest(m, [1.0]).value == pytest.approx(max(cands), abs=1e-9)


def test_oracle_rejects_large_trees(small_model):
    with pytest.raises(StateSpaceTooLarge):
        tree_oracle_divest(small_model.replace(horizon_T=5, mu_paths=np.zeros((2, 6, 1)), signal_means=np.zeros((2, 6))), [0.5, 0.5])
    with pytest.raises(ValueError):
        tree_oracle_divest(small_divest_model(noise=False), [0.5, 0.5])


def test_oracle_scenario_values_average_to_value(small_model):
    q = make_simplex([0.3, 0.7])
    res = tree_oracle_divest(small_model, q)
    assert float(q.weights @ res.scenario_values) == pytest.approx(res.value, rel=1e-12)


def test_lsmc_within_oracle_ci(small_model):
    q = SimplexPoint.uniform(2)
    sol = lsmc_value(small_model, q, LsmcConfig(n_paths=50_000, seed=5))
    oracle = tree_oracle_divest(small_model, q).value
    # the in-sample estimate can sit slightly above the truth; allow the CI plus a small bias
    assert abs(sol.value - oracle) <= sol.ci_halfwidth + 2e-3


@pytest.mark.filterwarnings("ignore::ambistop.errors.RegressionSingular")
def test_degree_two_and_three_agree(small_model):
    q = SimplexPoint.uniform(2)
    a = lsmc_value(small_model, q, LsmcConfig(n_paths=30_000, basis_degree=2, seed=1))
    b = lsmc_value(small_model, q, LsmcConfig(n_paths=30_000, basis_degree=3, seed=1))
    assert abs(a.value - b.value) < 2 * 2 * a.ci_halfwidth


def test_deterministic_given_seed(small_model):
    a = lsmc_value(small_model, [0.4, 0.6], CFG)
    b = lsmc_value(small_model, [0.4, 0.6], CFG)
    assert a.value == b.value
    np.testing.assert_array_equal(a.stop_times, b.stop_times)


def test_stop_times_in_range_and_histogram_sums_to_one(small_model):
    sol = lsmc_value(small_model, [0.4, 0.6], CFG)
    assert sol.stop_times.min() >= 0 and sol.stop_times.max() <= 3
    assert np.isfinite(sol.value)
    h = closure_histogram(sol)
    assert h.shape == (4, 2)
    assert h.sum() == pytest.approx(1.0)


@settings(max_examples=8)
@given(st.floats(0.0, 1.0))
def test_value_monotone_in_salvage(extra):
    m = small_divest_model()
    q = [0.5, 0.5]
    paths = simulate_divest_paths(m, 3000, 2)
    lo = lsmc_value(m, q, CFG, paths=paths).value
    hi = lsmc_value(m.replace(closure_cost=ConstantCost(-1.0 - extra)), q, CFG, paths=paths).value
    assert hi >= lo - 1e-12


def test_information_ordering(small_model):
    q = SimplexPoint.uniform(2)
    paths = simulate_divest_paths(small_model, 20_000, 4)
    vals = {mode: lsmc_value(small_model, q, CFG, mode, paths) for mode in ("revealed", "learning", "frozen")}
    ci = max(v.ci_halfwidth for v in vals.values())
    assert vals["revealed"].value >= vals["learning"].value - ci
    assert vals["learning"].value >= vals["frozen"].value - ci


def test_revealed_mode_with_dominant_scenario():
    # scenario 0 earns, scenario 1 loses: closures concentrate on scenario 1 at year 0
    T = 3
    mu = np.zeros((2, T + 1, 1))
    mu[0, 1:] = 2.0
    mu[1, 1:] = -2.0
    base = small_divest_model(noise=False)
    m = DivestModel(base.phi, [[0.05]], mu, np.zeros((2, T + 1)), 0.5, 0.9, LinearRevenue(0.0, (1.0,)),
                    ConstantCost(-0.5), T)
    sol = lsmc_value(m, [0.5, 0.5], CFG, information="revealed")
    h = closure_histogram(sol)
    assert h[0, 1] == pytest.approx(0.5)
    assert h[3, 0] == pytest.approx(0.5)


def test_unknown_mode_and_bad_q(small_model):
    with pytest.raises(ValueError):
        lsmc_value(small_model, [0.5, 0.5], CFG, information="oracle")
    with pytest.raises(ValueError):
        lsmc_value(small_model, [1.0], CFG)


def test_rank_deficiency_warns():
    # a degree-3 basis on a three-point factor is collinear
    m = small_divest_model()
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        sol = lsmc_value(m, [1.0, 0.0], LsmcConfig(n_paths=1000, basis_degree=3, seed=0), information="frozen")
    assert np.isfinite(sol.value)
    assert any(issubclass(w.category, RegressionSingular) for w in rec)


def test_inner_reuses_paths(small_model):
    inner = LsmcInner(small_model, CFG)
    a, b = inner([0.5, 0.5]), inner([0.5, 0.5])
    assert a.value == b.value
    assert a.expectations.shape == (2,)
