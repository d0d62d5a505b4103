"""Bayesian scenario filters.

Continuous time: a stock whose log-price drift is one of finitely many
values, observed through the price itself.  Discrete time: a noisy signal
whose mean depends on the scenario, filtered by Bayes' rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateUpdate
from .scenario_model import DivestModel, SimplexPoint, as_weights, make_simplex, signal_loglik


@dataclass(frozen=True)
class DriftPrior:
    """Finite prior on drift atoms ``mus`` with weights, noise level and start point."""

    mus: tuple[float, ...]
    weights: SimplexPoint
    sigma: float
    x0: float = 0.0

    def __post_init__(self):
        mus = tuple(float(m) for m in np.atleast_1d(self.mus))
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        w = self.weights if isinstance(self.weights, SimplexPoint) else make_simplex(self.weights)
        if w.n != len(mus):
            raise ValueError("one weight per drift atom")
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "weights", w)


def _log_terms(prior: DriftPrior, t, x) -> np.ndarray:
    """log P[theta] + exponent, shape broadcast(t, x) + (N,)."""
    z = np.asarray(prior.mus)
    t = np.asarray(t, dtype=float)[..., None]
    x = np.asarray(x, dtype=float)[..., None]
    s2 = prior.sigma**2
    w = as_weights(prior.weights)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    return logw - t * z**2 / (2 * s2) + z * (x - prior.x0 + 0.5 * s2 * t) / s2


def log_f_m(prior: DriftPrior, t, x):
    return logsumexp(_log_terms(prior, t, x), axis=-1)


def f_m(prior: DriftPrior, t, x):
    """sum_theta P[theta] exp(-t z^2/(2 s^2) + z (x - x0 + s^2 t/2)/s^2)."""
    out = np.exp(log_f_m(prior, t, x))
    return float(out) if np.ndim(out) == 0 else out


def posterior_weights(prior: DriftPrior, t, x) -> np.ndarray:
    lt = _log_terms(prior, t, x)
    return np.exp(lt - logsumexp(lt, axis=-1, keepdims=True))


def gamma_drift(prior: DriftPrior, t, x):
    """Posterior mean of the drift atom: the log-derivative of F_m times sigma^2."""
    out = posterior_weights(prior, t, x) @ np.asarray(prior.mus)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PosteriorState:
    pi: SimplexPoint
    t: int = 0


def _normalize_log(logpi: np.ndarray) -> np.ndarray:
    top = np.max(logpi, axis=-1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise DegenerateUpdate("every scenario has zero posterior weight")
    w = np.exp(logpi - top)
    return w / w.sum(axis=-1, keepdims=True)


def posterior_update(state: PosteriorState, model: DivestModel, s: float) -> PosteriorState:
    """One Bayes step with the signal observed at ``state.t + 1``."""
    t = state.t + 1
    if t > model.horizon_T:
        raise ValueError(f"already at the horizon (t={state.t})")
    pi = as_weights(state.pi)
    with np.errstate(divide="ignore"):
        logpi = np.log(pi) + signal_loglik(model, t, s)
    return PosteriorState(make_simplex(_normalize_log(logpi)), t)


def sample_scenario(pi_prev, u: float) -> int:
    """Smallest (0-based) index whose cumulative probability reaches ``u``."""
    c = np.cumsum(as_weights(pi_prev))
    c[-1] = max(c[-1], 1.0)
    return int(np.searchsorted(c, u, side="left"))


def _sample_scenarios(pi_prev: np.ndarray, u: np.ndarray) -> np.ndarray:
    c = np.cumsum(pi_prev, axis=-1)
    c[..., -1] = np.maximum(c[..., -1], 1.0)
    return np.argmax(c >= u[..., None], axis=-1)


def draw_shocks(rng: np.random.Generator, size, noise=None) -> np.ndarray:
    if noise is None:
        return rng.standard_normal(size)
    idx = rng.choice(len(noise.points), size=size, p=np.asarray(noise.weights))
    return np.asarray(noise.points)[idx]


def noise_streams(seed: int):
    """Independent generators for (eps, eta, U) derived from one master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated learning paths; arrays are indexed [path, t, ...].

    ``signal[:, 0]`` is NaN: the first observation arrives at t = 1.
    ``theta`` holds 0-based scenario indices.
    """

    x_tilde: np.ndarray
    pi: np.ndarray
    signal: np.ndarray
    theta: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.pi.shape[0]


def simulate_learning_paths(
    model: DivestModel, q, n_paths: int, seed: int, resample: bool = False
) -> PathBundle:
    """Simulate factors, signals and the posterior under the mixture measure for ``q``.

    By default the scenario is drawn once per path at t = 0 and kept.  With
    ``resample=True`` it is redrawn every step from the previous posterior,
    which generates the same law for the observable processes.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    q = as_weights(q)
    T, N, K = model.horizon_T, model.n, model.k
    rng_eps, rng_eta, rng_u = noise_streams(seed)
    eps = draw_shocks(rng_eps, (n_paths, T, K), model.noise)
    eta = draw_shocks(rng_eta, (n_paths, T), model.noise)
    u = rng_u.random((n_paths, T + 1))

    x = np.empty((n_paths, T + 1, K))
    x[:, 0] = model.x0
    for t in range(1, T + 1):
        x[:, t] = x[:, t - 1] @ model.phi.T + eps[:, t - 1] @ model.vol.T

    pi = np.empty((n_paths, T + 1, N))
    pi[:, 0] = q
    sig = np.full((n_paths, T + 1), np.nan)
    theta = np.empty((n_paths, T + 1), dtype=int)
    theta[:, 0] = _sample_scenarios(np.broadcast_to(q, (n_paths, N)), u[:, 0])
    with np.errstate(divide="ignore"):
        for t in range(1, T + 1):
            theta[:, t] = _sample_scenarios(pi[:, t - 1], u[:, t]) if resample else theta[:, 0]
            sig[:, t] = model.signal_means[theta[:, t], t] + model.sigma_s * eta[:, t - 1]
            logpi = np.log(pi[:, t - 1]) + signal_loglik(model, t, sig[:, t])
            pi[:, t] = _normalize_log(logpi)
    return PathBundle(x, pi, sig, theta)
