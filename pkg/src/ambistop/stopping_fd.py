"""Finite-difference solver for selling a stock with an unobserved drift.

The state is the log price x and time t.  Under the scenario weights q the
log price has drift Gamma(t, x) = E_q[mu | t, x] in its own filtration, and
holding the stock earns e^x (E_q[b | t, x] - r) per unit time over selling.
The holding premium v(t, x) solves an obstacle problem with v >= 0 (sell
now) and v(T, .) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import solve_banded

from .errors import NoConvergence
from .learning import DriftPrior, posterior_weights
from .scenario_model import GbmStockModel, SimplexPoint, as_weights

PSOR_TOL = 1e-9
PSOR_MAX_ITER = 10_000
PSOR_OMEGA = 1.6
MASK_TOL = 1e-10
RANNACHER_STEPS = 2


@dataclass(frozen=True)
class FdGrid:
    x_min: float
    x_max: float
    nx: int
    nt: int
    horizon_T: float

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        if self.nx < 3 or self.nt < 1:
            raise ValueError("need nx >= 3 and nt >= 1")

    @classmethod
    def for_model(cls, model: GbmStockModel, nx: int = 401, nt: int = 500, width: float = 6.0) -> "FdGrid":
        half = width * model.sigma * math.sqrt(model.horizon_T)
        return cls(model.x0 - half, model.x0 + half, nx, nt, model.horizon_T)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return self.horizon_T / self.nt

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon_T, self.nt + 1)

    def refined(self) -> "FdGrid":
        return FdGrid(self.x_min, self.x_max, 2 * self.nx - 1, 2 * self.nt, self.horizon_T)


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """Holding premium v(t_n, x_j) and where continuing beats selling."""

    values: np.ndarray
    continuation_mask: np.ndarray
    grid: FdGrid
    exercise_steps: np.ndarray


def drift_prior(model: GbmStockModel, q) -> DriftPrior:
    # The filter exponent with the +sigma^2 t/2 shift is the likelihood ratio of
    # the price drifts b, so the atoms fed to it are b, not mu = b - sigma^2/2.
    return DriftPrior(model.b, as_weights(q), model.sigma, model.x0)


def exercise_steps(model: GbmStockModel, grid: FdGrid, bermudan: bool) -> np.ndarray:
    """Time indices where selling is allowed (always including t = T)."""
    if not bermudan:
        return np.arange(grid.nt + 1)
    n_years = int(round(model.horizon_T))
    if abs(n_years - model.horizon_T) > 1e-12 or grid.nt % n_years:
        raise ValueError("yearly exercise needs an integer horizon dividing nt")
    return np.arange(0, grid.nt + 1, grid.nt // n_years)


@njit(cache=True, nogil=True)
def _psor(lower, diag, upper, rhs, v, omega, tol, max_iter):
    n = v.size
    for it in range(max_iter):
        err = 0.0
        for j in range(n):
            s = rhs[j]
            if j > 0:
                s -= lower[j] * v[j - 1]
            if j < n - 1:
                s -= upper[j] * v[j + 1]
            w = omega if 0 < j < n - 1 else 1.0
            y = v[j] + w * (s / diag[j] - v[j])
            if y < 0.0:
                y = 0.0
            d = abs(y - v[j])
            if d > err:
                err = d
            v[j] = y
        if err < tol:
            return it + 1
    return -1


def _operator(sigma, r, drift, dx):
    """Tridiagonal coefficients (a, b, c) of sigma^2/2 d2 + drift d1 - r."""
    diff = 0.5 * sigma**2 / dx**2
    conv = drift / (2 * dx)
    return diff - conv, np.full_like(drift, -2 * diff - r), diff + conv


def _march(grid, sigma, r, drift, reward, edge_fn, ex_steps, lcp, stop_mask=None):
    """Backward theta-scheme; returns values (nt+1, nx) and continuation mask.

    ``drift`` and ``reward`` are (nt+1, nx) tables over the grid.

    ``lcp`` solves the obstacle problem v >= 0 at exercise steps.  With
    ``stop_mask`` given instead, the solution is zeroed where the mask says
    stop (evaluation of a fixed rule).
    """
    x, dt, dx, nx, nt = grid.x, grid.dt, grid.dx, grid.nx, grid.nt
    ex = np.zeros(nt + 1, dtype=bool)
    ex[ex_steps] = True
    every_step = ex[:-1].all()
    ex_x = np.exp(x)

    V = np.zeros((nt + 1, nx))
    cont = np.ones((nt + 1, nx), dtype=bool)
    cont[nt] = False
    v = np.zeros(nx)
    a1, b1, c1 = _operator(sigma, r, drift[nt], dx)
    f1 = reward[nt]
    since_kink = 0
    for n in range(nt - 1, -1, -1):
        t_n = grid.t[n]
        a0, b0, c0 = _operator(sigma, r, drift[n], dx)
        f0 = reward[n]
        theta = 1.0 if since_kink < RANNACHER_STEPS else 0.5

        rhs = np.empty(nx)
        lv = b1[1:-1] * v[1:-1] + a1[1:-1] * v[:-2] + c1[1:-1] * v[2:]
        rhs[1:-1] = v[1:-1] + (1 - theta) * dt * lv + dt * (theta * f0[1:-1] + (1 - theta) * f1[1:-1])
        rhs[0] = 0.0
        rhs[-1] = edge_fn(t_n) * (ex_x[-1] - ex_x[-2])

        lower = np.empty(nx)
        diag = np.empty(nx)
        upper = np.empty(nx)
        lower[1:-1] = -theta * dt * a0[1:-1]
        diag[1:-1] = 1 - theta * dt * b0[1:-1]
        upper[1:-1] = -theta * dt * c0[1:-1]
        lower[0], diag[0], upper[0] = 0.0, 1.0, 0.0
        lower[-1], diag[-1], upper[-1] = -1.0, 1.0, 0.0

        if lcp and ex[n] and every_step:
            v = np.maximum(v, 0.0)
            it = _psor(lower, diag, upper, rhs, v, PSOR_OMEGA, PSOR_TOL, PSOR_MAX_ITER)
            if it < 0:
                raise NoConvergence(f"PSOR did not converge at t={t_n:.6g}")
        else:
            ab = np.zeros((3, nx))
            ab[0, 1:] = upper[:-1]
            ab[1] = diag
            ab[2, :-1] = lower[1:]
            v = solve_banded((1, 1), ab, rhs)
            if lcp and ex[n]:
                v = np.maximum(v, 0.0)
        since_kink += 1
        if ex[n]:
            if stop_mask is None:
                cont[n] = v > MASK_TOL
            else:
                cont[n] = ~stop_mask[n]
                v = np.where(cont[n], v, 0.0)
            if not every_step:
                since_kink = 0
        V[n] = v
        a1, b1, c1, f1 = a0, b0, c0, f0
    return V, cont


def solve_vi(model: GbmStockModel, q, grid: FdGrid, bermudan: bool = False) -> ValueSurface:
    """Solve the optimal-selling obstacle problem under scenario weights ``q``.

    With ``bermudan=True`` selling is only allowed at whole years.
    """
    if not grid.x_min < model.x0 < grid.x_max:
        raise ValueError("grid must contain log(s0) strictly inside")
    prior = drift_prior(model, q)
    b = np.asarray(model.b)
    half_s2 = 0.5 * model.sigma**2

    post_b = posterior_weights(prior, grid.t[:, None], grid.x[None, :]) @ b
    drift = post_b - half_s2
    reward = np.exp(grid.x) * (post_b - model.r)

    # far above, the posterior concentrates on the largest drift carrying mass
    b_top = b[as_weights(q) > 0].max()

    def edge(t):
        return max(math.expm1((b_top - model.r) * (model.horizon_T - t)), 0.0)

    ex = exercise_steps(model, grid, bermudan)
    V, cont = _march(grid, model.sigma, model.r, drift, reward, edge, ex, lcp=True)
    return ValueSurface(V, cont, grid, ex)


def scenario_premiums(model: GbmStockModel, surface: ValueSurface) -> np.ndarray:
    """Holding premium of the surface's selling rule under each single scenario.

    Returns an (N, nt+1, nx) array; row i solves the linear problem with
    drift mu_i and running reward e^x (b_i - r), zeroed where the rule sells.
    """
    grid = surface.grid
    stop = ~surface.continuation_mask
    out = []
    shape = (grid.nt + 1, grid.nx)
    for b_i, mu_i in zip(model.b, model.mu):
        drift = np.full(shape, mu_i)
        reward = np.broadcast_to(np.exp(grid.x) * (b_i - model.r), shape)

        def edge(t, b_i=b_i):
            return math.expm1((b_i - model.r) * (model.horizon_T - t))

        U, _ = _march(grid, model.sigma, model.r, drift, reward, edge, surface.exercise_steps, lcp=False, stop_mask=stop)
        out.append(U)
    return np.stack(out)


def extract_boundary(surface: ValueSurface, grid: FdGrid | None = None) -> np.ndarray:
    """Lower edge of the continuation region in log price, one entry per time step.

    NaN where the region is empty or covers the whole grid, and at steps
    where selling is not allowed.
    """
    grid = grid or surface.grid
    x = grid.x
    out = np.full(grid.nt + 1, np.nan)
    for n in surface.exercise_steps:
        m = surface.continuation_mask[n]
        if m.all() or not m.any():
            continue
        j = int(np.argmax(m))
        if j == 0:
            continue
        out[n] = 0.5 * (x[j - 1] + x[j])
    return out


def premium_at(surface: ValueSurface, x0: float, n: int = 0) -> float:
    return float(np.interp(x0, surface.grid.x, surface.values[n]))


def stock_value(model: GbmStockModel, q, grid: FdGrid, bermudan: bool = False) -> float:
    """Value s0 + v(0, log s0) of holding the stock with optimal selling."""
    surface = solve_vi(model, q, grid, bermudan)
    return model.s0 + premium_at(surface, model.x0)


class StockInnerResult:
    """Optimal selling under q; per-scenario expectations are computed on
    first access because the outer search only needs ``value``."""

    def __init__(self, model: GbmStockModel, surface: ValueSurface):
        self.model = model
        self.surface = surface
        self.value = model.s0 + premium_at(surface, model.x0)
        self._exps = None

    @property
    def expectations(self) -> np.ndarray:
        """E^theta[e^{-r tau} S_tau] for each scenario under the selling rule."""
        if self._exps is None:
            s = self.surface
            U = scenario_premiums(self.model, s)
            self._exps = self.model.s0 + np.array(
                [premium_at(ValueSurface(u, s.continuation_mask, s.grid, s.exercise_steps), self.model.x0) for u in U]
            )
        return self._exps


def stock_inner(model: GbmStockModel, q, grid: FdGrid, bermudan: bool = False) -> StockInnerResult:
    return StockInnerResult(model, solve_vi(model, q, grid, bermudan))


class StockInner:
    """Inner solver q -> optimal selling, on a fixed grid."""

    def __init__(self, model: GbmStockModel, grid: FdGrid | None = None, bermudan: bool = False):
        self.model = model
        self.grid = grid or FdGrid.for_model(model)
        self.bermudan = bermudan

    def __call__(self, q) -> StockInnerResult:
        return stock_inner(self.model, q, self.grid, self.bermudan)


def _trinomial_probs(mu: float, b: float, dt: float, dx: float) -> np.ndarray:
    """(down, mid, up) matching E[dX] = mu dt and E[e^dX] = e^{b dt} exactly."""
    A = np.array([[1.0, 1.0, 1.0], [-dx, 0.0, dx], [math.exp(-dx), 1.0, math.exp(dx)]])
    return np.linalg.solve(A, np.array([1.0, mu * dt, math.exp(b * dt)]))


def tree_oracle_value(model: GbmStockModel, q, n_steps: int, bermudan: bool = False) -> float:
    """Stock value by backward induction on a recombining trinomial lattice.

    Each scenario moves the log price with its own branch probabilities; a
    node mixes them with the filter's posterior weights at that node.  The
    payoff is the discounted price itself, so no running-reward quadrature
    is involved.
    """
    q = as_weights(q)
    T, sigma = model.horizon_T, model.sigma
    dt = T / n_steps
    dx = sigma * math.sqrt(3 * dt)
    probs = np.array([_trinomial_probs(m, b, dt, dx) for m, b in zip(model.mu, model.b)])
    if np.any(probs < 0):
        raise ValueError("branch probabilities negative; use more steps")
    if bermudan:
        n_years = int(round(T))
        if n_steps % n_years:
            raise ValueError("yearly exercise needs n_steps divisible by T")
        ex = set(range(0, n_steps + 1, n_steps // n_years))
    else:
        ex = set(range(n_steps + 1))
    prior = drift_prior(model, q)
    disc = math.exp(-model.r * dt)

    j = np.arange(-n_steps, n_steps + 1)
    W = np.exp(model.x0 + j * dx)
    for n in range(n_steps - 1, -1, -1):
        j = np.arange(-n, n + 1)
        x = model.x0 + j * dx
        post = posterior_weights(prior, n * dt, x)
        mix = post @ probs
        cont = disc * (mix[:, 0] * W[:-2] + mix[:, 1] * W[1:-1] + mix[:, 2] * W[2:])
        W = np.maximum(cont, np.exp(x)) if n in ex else cont
    return float(W[0])
