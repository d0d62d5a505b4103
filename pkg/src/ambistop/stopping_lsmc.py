"""Least-squares Monte Carlo for the plant closure problem.

Paths are simulated once per (model, n_paths, seed) with an equal number of
paths per true scenario.  Changing the scenario weights q only reweights the
paths and recomputes the posterior from stored log-likelihoods, so every q
sees the same random numbers.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import RegressionSingular, StateSpaceTooLarge
from .learning import draw_shocks, noise_streams
from .scenario_model import DivestModel, SimplexPoint, as_weights, signal_loglik

INFORMATION_MODES = ("learning", "revealed", "frozen")


@dataclass(frozen=True)
class LsmcConfig:
    n_paths: int = 20_000
    basis_degree: int = 2
    seed: int = 0
    stop_tolerance: float = 0.0

    def __post_init__(self):
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")
        if self.basis_degree not in (1, 2, 3):
            raise ValueError("basis_degree must be 1, 2 or 3")


@dataclass(frozen=True, eq=False)
class DivestPaths:
    """Scenario-stratified simulation shared across all scenario weights.

    ``loglik[p, t, i]`` is the cumulative signal log-likelihood of scenario i
    up to step t; ``revenue[p, t]`` is g(X_t) under the path's true scenario.
    """

    theta: np.ndarray
    x_tilde: np.ndarray
    loglik: np.ndarray
    revenue: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.theta.size


def simulate_divest_paths(model: DivestModel, n_paths: int, seed: int) -> DivestPaths:
    T, N, K = model.horizon_T, model.n, model.k
    rng_eps, rng_eta, _ = noise_streams(seed)
    theta = np.repeat(np.arange(N), -(-n_paths // N))[:n_paths]
    eps = draw_shocks(rng_eps, (n_paths, T, K), model.noise)
    eta = draw_shocks(rng_eta, (n_paths, T), model.noise)
    x = np.empty((n_paths, T + 1, K))
    x[:, 0] = model.x0
    for t in range(1, T + 1):
        x[:, t] = x[:, t - 1] @ model.phi.T + eps[:, t - 1] @ model.vol.T
    ll = np.zeros((n_paths, T + 1, N))
    for t in range(1, T + 1):
        s = model.signal_means[theta, t] + model.sigma_s * eta[:, t - 1]
        ll[:, t] = ll[:, t - 1] + signal_loglik(model, t, s)
    levels = x + model.mu_paths[theta]
    revenue = model.revenue(levels)
    return DivestPaths(theta, x, ll, revenue)


@dataclass(frozen=True, eq=False)
class DivestSolution:
    """Outcome of the regression rule on the simulated paths.

    ``weights`` are the per-path probabilities under the evaluation measure
    (they sum to 1); ``scenario_values[i]`` estimates E^i of the discounted
    reward under the rule.
    """

    value: float
    stop_times: np.ndarray
    rewards: np.ndarray
    theta: np.ndarray
    weights: np.ndarray
    scenario_values: np.ndarray
    std_error: float
    horizon_T: int

    @property
    def ci_halfwidth(self) -> float:
        return 1.96 * self.std_error

    @property
    def expectations(self) -> np.ndarray:
        return self.scenario_values

    def mean_stop_time(self, weights=None) -> float:
        w = self.weights if weights is None else weights
        return float(w @ self.stop_times)


def monomial_exponents(n_vars: int, degree: int) -> list[tuple[int, ...]]:
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), d):
            e = [0] * n_vars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return out


def design_matrix(features: np.ndarray, degree: int) -> np.ndarray:
    """Intercept plus all monomials of total degree <= ``degree``."""
    n, d = features.shape
    cols = []
    for e in monomial_exponents(d, degree):
        c = np.ones(n)
        for j, k in enumerate(e):
            for _ in range(k):
                c = c * features[:, j]
        cols.append(c)
    return np.column_stack(cols)


def _fit_predict(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    keep = w > 0
    sw = np.sqrt(w[keep])
    A = X[keep] * sw[:, None]
    coef, _, rank, _ = np.linalg.lstsq(A, y[keep] * sw, rcond=None)
    if rank < X.shape[1]:
        warnings.warn(f"design matrix rank {rank} < {X.shape[1]}; using ridge 1e-8", RegressionSingular, stacklevel=3)
        G = A.T @ A + 1e-8 * np.eye(X.shape[1])
        coef = np.linalg.solve(G, A.T @ (y[keep] * sw))
    return X @ coef


def _posterior(loglik_t: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        lp = np.log(q) + loglik_t
    return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))


def _features(paths: DivestPaths, t: int, q: np.ndarray, information: str) -> np.ndarray:
    x = paths.x_tilde[:, t]
    if information != "learning" or q.size == 1:
        f = x
    else:
        f = np.column_stack([x, _posterior(paths.loglik[:, t], q)[:, :-1]])
    # standardize for conditioning; constant columns are dropped
    sd = f.std(axis=0)
    keep = sd > 1e-12
    return (f[:, keep] - f[:, keep].mean(axis=0)) / sd[keep]


def _backward(model: DivestModel, paths: DivestPaths, q: np.ndarray, w: np.ndarray, cfg: LsmcConfig, information: str, subset=None):
    T, beta = model.horizon_T, model.beta
    idx = np.arange(paths.n_paths) if subset is None else subset
    disc = beta ** np.arange(T + 1)
    stop_pay = -disc * np.array([float(model.closure_cost(t)) for t in range(T + 1)])
    sub = DivestPaths(paths.theta[idx], paths.x_tilde[idx], paths.loglik[idx], paths.revenue[idx])
    ww = w[idx]
    cf = np.full(idx.size, stop_pay[T])
    tau = np.full(idx.size, T)
    for t in range(T - 1, -1, -1):
        cont_real = disc[t + 1] * sub.revenue[:, t + 1] + cf
        feats = _features(sub, t, q, information)
        if feats.shape[1] == 0:
            cont_hat = np.full(idx.size, (ww @ cont_real) / ww.sum())
        else:
            cont_hat = _fit_predict(design_matrix(feats, cfg.basis_degree), cont_real, ww)
        stop = stop_pay[t] >= cont_hat - cfg.stop_tolerance
        cf = np.where(stop, stop_pay[t], cont_real)
        tau = np.where(stop, t, tau)
    return cf, tau


def _assemble(model, paths, q_eval, cf, tau) -> DivestSolution:
    N = model.n
    counts = np.bincount(paths.theta, minlength=N)
    w = q_eval[paths.theta] / counts[paths.theta]
    scen = np.array([cf[paths.theta == i].mean() if counts[i] else np.nan for i in range(N)])
    var = np.array([cf[paths.theta == i].var(ddof=1) if counts[i] > 1 else 0.0 for i in range(N)])
    value = float(np.nansum(q_eval * scen))
    se = float(np.sqrt(np.sum(q_eval**2 * var / np.maximum(counts, 1))))
    return DivestSolution(value, tau, cf, paths.theta, w, scen, se, model.horizon_T)


def lsmc_value(
    model: DivestModel,
    q,
    cfg: LsmcConfig,
    information: str = "learning",
    paths: DivestPaths | None = None,
    evaluate_under=None,
) -> DivestSolution:
    """Regression-based optimal closure under scenario weights ``q``.

    ``information`` selects what the rule may use besides the factors:
    ``learning`` (posterior from the signal), ``revealed`` (true scenario
    known at t=0), or ``frozen`` (posterior stuck at the prior).
    ``evaluate_under`` reweights the reported value, stop-time weights and
    CI to another scenario measure (the rule is still optimal for ``q``).
    """
    if information not in INFORMATION_MODES:
        raise ValueError(f"information must be one of {INFORMATION_MODES}")
    q = as_weights(q)
    if q.size != model.n:
        raise ValueError("q has the wrong number of scenarios")
    paths = paths or simulate_divest_paths(model, cfg.n_paths, cfg.seed)
    counts = np.bincount(paths.theta, minlength=model.n)
    w = q[paths.theta] / counts[paths.theta]
    if information == "revealed":
        cf = np.empty(paths.n_paths)
        tau = np.empty(paths.n_paths, dtype=int)
        for i in range(model.n):
            sel = np.flatnonzero(paths.theta == i)
            e = np.zeros(model.n)
            e[i] = 1.0
            cf[sel], tau[sel] = _backward(model, paths, e, w, cfg, information, sel)
    else:
        cf, tau = _backward(model, paths, q, w, cfg, information)
    q_eval = q if evaluate_under is None else as_weights(evaluate_under)
    return _assemble(model, paths, q_eval, cf, tau)


class LsmcInner:
    """Inner solver over q with common random numbers across calls."""

    def __init__(self, model: DivestModel, cfg: LsmcConfig, information: str = "learning"):
        self.model = model
        self.cfg = cfg
        self.information = information
        self.paths = simulate_divest_paths(model, cfg.n_paths, cfg.seed)

    def __call__(self, q) -> DivestSolution:
        return lsmc_value(self.model, q, self.cfg, self.information, self.paths)


def closure_histogram(solution: DivestSolution, true_scenarios=None, weights=None) -> np.ndarray:
    """Probability mass of (closure year, true scenario); rows are years 0..T."""
    theta = solution.theta if true_scenarios is None else np.asarray(true_scenarios)
    w = solution.weights if weights is None else np.asarray(weights, dtype=float)
    n_s = int(theta.max()) + 1 if theta.size else 1
    table = np.zeros((solution.horizon_T + 1, n_s))
    np.add.at(table, (solution.stop_times, theta), w)
    total = table.sum()
    return table / total if total > 0 else table


# -- exhaustive tree oracle ---------------------------------------------------


@dataclass(frozen=True)
class TreeOracleResult:
    value: float
    scenario_values: np.ndarray
    n_leaves: int


def tree_oracle_divest(model: DivestModel, q) -> TreeOracleResult:
    """Exact optimal closure value by dynamic programming over the full
    information tree (factor shocks x distinct signal values) of a model with
    discrete noise.
    """
    if model.noise is None:
        raise ValueError("the tree oracle needs a model with discrete noise")
    T, N, K = model.horizon_T, model.n, model.k
    pts = np.asarray(model.noise.points)
    wts = np.asarray(model.noise.weights)
    if T > 4 or N > 3 or pts.size > 3:
        raise StateSpaceTooLarge(f"T={T}, N={N}, {pts.size} noise points exceed T<=4, N<=3, 3 points")
    q = as_weights(q)
    beta = model.beta
    stop_pay = [-(beta**t) * float(model.closure_cost(t)) for t in range(T + 1)]

    eps_nodes = list(itertools.product(range(pts.size), repeat=K))
    eps_w = np.array([np.prod(wts[list(e)]) for e in eps_nodes])
    eps_v = np.array([pts[list(e)] for e in eps_nodes])

    def signal_branches(t):
        # distinct observable values and their likelihood under each scenario
        vals, lik = [], []
        for i in range(N):
            for z, wz in zip(pts, wts):
                s = model.signal_means[i, t] + model.sigma_s * z
                for k, v in enumerate(vals):
                    if abs(v - s) < 1e-10:
                        break
                else:
                    vals.append(s)
                    lik.append(np.zeros(N))
                    k = len(vals) - 1
                lik[k][i] += wz
        return np.array(lik)

    sig = [None] + [signal_branches(t) for t in range(1, T + 1)]
    n_leaves = 0

    def solve(t, x, like):
        """Return (value to the agent, per-scenario value) at a node, discounted to 0.

        ``like[i]`` is the probability of the node's history under scenario i.
        """
        nonlocal n_leaves
        if t == T:
            n_leaves += 1
            return stop_pay[T], np.full(N, stop_pay[T])
        post = q * like
        if post.sum() <= 0:
            # history impossible under q; any posterior gives the same q-value
            post = like
        post = post / post.sum()
        cont_mix = 0.0
        cont_scen = np.zeros(N)
        for ew, ev in zip(eps_w, eps_v):
            x1 = model.phi @ x + model.vol @ ev
            g = np.array([float(model.revenue(x1 + model.mu_paths[i, t + 1])) for i in range(N)])
            for lik in sig[t + 1]:
                p_branch = ew * lik  # per-scenario transition probability
                if not np.any(like * p_branch > 0):
                    continue
                v_child, scen_child = solve(t + 1, x1, like * lik)
                step = beta ** (t + 1) * g
                # per-scenario: expectation under scenario i
                cont_scen += p_branch * (step + scen_child)
                # the agent's continuation under the posterior mixture
                cont_mix += float(post @ (p_branch * step)) + float(post @ p_branch) * v_child
        if stop_pay[t] >= cont_mix:
            return stop_pay[t], np.full(N, stop_pay[t])
        return cont_mix, cont_scen

    value, scen = solve(0, np.asarray(model.x0, dtype=float), np.ones(N))
    return TreeOracleResult(float(value), scen, n_leaves)
