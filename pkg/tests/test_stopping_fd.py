import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambistop.scenario_model import GbmStockModel, SimplexPoint, make_simplex, example_stock_model
from ambistop.stopping_fd import (
    FdGrid,
    exercise_steps,
    extract_boundary,
    solve_vi,
    stock_inner,
    stock_value,
    tree_oracle_value,
)


def single(b, sigma=0.3):
    return GbmStockModel(s0=1.0, sigma=sigma, r=0.02, horizon_T=5.0, b=(b,))


def small_grid(model):
    return FdGrid.for_model(model, nx=201, nt=250)


def test_grid_validation():
    with pytest.raises(ValueError):
        FdGrid(1.0, 0.0, 10, 10, 1.0)
    with pytest.raises(ValueError):
        FdGrid(0.0, 1.0, 2, 10, 1.0)
    g = FdGrid(0.0, 1.0, 11, 10, 2.0)
    assert g.dx == pytest.approx(0.1)
    assert g.dt == pytest.approx(0.2)
    r = g.refined()
    assert (r.nx, r.nt) == (21, 20)


def test_grid_must_contain_start():
    m = single(0.1)
    with pytest.raises(ValueError):
        solve_vi(m, [1.0], FdGrid(0.5, 2.0, 51, 10, 5.0))


def test_all_drifts_below_rate_sell_now():
    m = GbmStockModel(1.0, 0.3, 0.05, 5.0, (-0.05, 0.0, 0.03))
    s = solve_vi(m, SimplexPoint.uniform(3), small_grid(m))
    assert np.abs(s.values).max() == 0.0
    assert not s.continuation_mask.any()
    assert stock_value(m, SimplexPoint.uniform(3), small_grid(m)) == 1.0


def test_single_scenario_above_rate_matches_closed_form():
    m = single(0.15)
    grid = small_grid(m)
    s = solve_vi(m, [1.0], grid)
    # never sell early: v(t, x) = e^x (e^{(b-r)(T-t)} - 1)
    t, x = grid.t[:, None], grid.x[None, :]
    exact = np.exp(x) * np.expm1((0.15 - 0.02) * (5.0 - t))
    inner = slice(grid.nx // 4, 3 * grid.nx // 4)
    np.testing.assert_allclose(s.values[:, inner], exact[:, inner], rtol=2e-3, atol=1e-6)
    assert stock_value(m, [1.0], grid) == pytest.approx(math.exp(0.13 * 5), rel=1e-3)


@pytest.mark.parametrize("b", [-0.05, 0.05, 0.15])
def test_single_scenario_matches_tree(b):
    m = single(b)
    fd = stock_value(m, [1.0], small_grid(m))
    tree = tree_oracle_value(m, [1.0], 1000)
    assert fd == pytest.approx(tree, rel=2e-3)


def test_three_scenarios_match_tree(stock_model):
    q = SimplexPoint.uniform(3)
    fd = stock_value(stock_model, q, FdGrid.for_model(stock_model))
    tree = tree_oracle_value(stock_model, q, 1500)
    assert fd == pytest.approx(tree, rel=2e-3)


def test_bermudan_matches_tree_and_is_below_continuous(stock_model):
    q = make_simplex([0.2, 0.3, 0.5])
    grid = small_grid(stock_model)
    berm = stock_value(stock_model, q, grid, bermudan=True)
    cont = stock_value(stock_model, q, grid)
    assert berm <= cont + 1e-9
    assert berm == pytest.approx(tree_oracle_value(stock_model, q, 1000, bermudan=True), rel=2e-3)


def test_bermudan_steps():
    m = example_stock_model()
    np.testing.assert_array_equal(exercise_steps(m, FdGrid.for_model(m, nt=10), True), [0, 2, 4, 6, 8, 10])
    with pytest.raises(ValueError):
        exercise_steps(m, FdGrid.for_model(m, nt=12), True)


def test_refinement_changes_value_little(stock_model):
    q = SimplexPoint.uniform(3)
    g = FdGrid.for_model(stock_model, nx=161, nt=200)
    coarse = stock_value(stock_model, q, g)
    fine = stock_value(stock_model, q, g.refined())
    assert abs(coarse - fine) / fine < 5e-3


@settings(max_examples=15)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
def test_premium_nonnegative_and_terminal_zero(w):
    if sum(w) == 0:
        return
    m = example_stock_model(0.2)
    s = solve_vi(m, make_simplex(w), FdGrid.for_model(m, nx=81, nt=60))
    assert s.values.min() >= 0.0
    assert np.all(s.values[-1] == 0.0)


@settings(max_examples=10)
@given(st.floats(0.0, 0.3))
def test_value_increases_with_weight_on_high_drift(shift):
    m = example_stock_model(0.3)
    grid = FdGrid.for_model(m, nx=101, nt=100)
    base = stock_value(m, [0.4, 0.3, 0.3], grid)
    moved = stock_value(m, [0.4 - shift, 0.3, 0.3 + shift], grid)
    assert moved >= base - 1e-9


def test_boundary_lies_below_start_and_premium_vanishes_below(stock_model):
    s = solve_vi(stock_model, SimplexPoint.uniform(3), small_grid(stock_model))
    bd = extract_boundary(s)
    assert np.isnan(bd[-1])
    finite = bd[np.isfinite(bd)]
    assert finite.size > 0.8 * bd.size
    assert np.all(finite < stock_model.x0)
    x = s.grid.x
    n = 10
    below = x < bd[n] - s.grid.dx
    assert np.all(s.values[n, below] == 0.0)
    assert np.all(s.values[n, x > bd[n] + s.grid.dx] > 0.0)


def test_scenario_expectations_average_to_value(stock_model):
    q = make_simplex([0.2, 0.3, 0.5])
    res = stock_inner(stock_model, q, small_grid(stock_model))
    e = res.expectations
    assert e.shape == (3,)
    # the rule is optimal for the mixture, so the q-average reproduces its value
    assert float(q.weights @ e) == pytest.approx(res.value, rel=2e-3)
    assert e[0] < e[1] < e[2]


@settings(max_examples=10)
@given(st.floats(0.0, 0.05))
def test_surface_increases_when_all_drifts_shift_up(shift):
    m = example_stock_model(0.3)
    up = m.replace(b=tuple(b + shift for b in m.b))
    grid = FdGrid.for_model(m, nx=101, nt=100)
    q = SimplexPoint.uniform(3)
    assert np.all(solve_vi(up, q, grid).values >= solve_vi(m, q, grid).values - 1e-9)
