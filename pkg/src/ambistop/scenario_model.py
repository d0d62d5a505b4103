"""Finite scenario sets, simplex points and the two problem instances."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import LengthMismatch, SchemaError, ZeroMass

SIMPLEX_ATOL = 1e-12


@dataclass(frozen=True)
class ScenarioSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        if len(labels) < 1:
            raise ValueError("a scenario set needs at least one scenario")
        if len(set(labels)) != len(labels):
            raise ValueError(f"scenario labels must be distinct: {labels}")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    @classmethod
    def numbered(cls, n: int) -> "ScenarioSet":
        return cls(tuple(str(i + 1) for i in range(n)))


@dataclass(frozen=True, eq=False)
class SimplexPoint:
    """A probability vector on a finite scenario set.

    Construct through :func:`make_simplex` unless the weights are already
    known to be valid; the constructor only checks.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.size < 1:
            raise ValueError("empty probability vector")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError(f"weights must be finite and nonnegative: {w}")
        if abs(w.sum() - 1.0) > SIMPLEX_ATOL * max(1, w.size):
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def __len__(self):
        return self.weights.size

    def __getitem__(self, i):
        return self.weights[i]

    def __eq__(self, other):
        if not isinstance(other, SimplexPoint):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    def __repr__(self):
        return f"SimplexPoint({np.array2string(self.weights, precision=6)})"

    @classmethod
    def uniform(cls, n: int) -> "SimplexPoint":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def vertex(cls, n: int, i: int) -> "SimplexPoint":
        w = np.zeros(n)
        w[i] = 1.0
        return cls(w)


def make_simplex(weights) -> SimplexPoint:
    """Clip negative entries at zero and renormalize onto the simplex."""
    w = np.asarray(weights, dtype=float).ravel()
    if not np.all(np.isfinite(w)):
        raise ValueError(f"weights must be finite: {w}")
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 0:
        raise ZeroMass(f"no positive mass in {np.asarray(weights)}")
    w = w / total
    # push the rounding residual onto the largest entry so the sum is exact
    w[np.argmax(w)] += 1.0 - w.sum()
    return SimplexPoint(w)


@dataclass(frozen=True)
class GbmStockModel:
    """Geometric Brownian stock whose drift is one of ``len(b)`` values."""

    s0: float
    sigma: float
    r: float
    horizon_T: float
    b: tuple[float, ...]

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.horizon_T <= 0:
            raise ValueError("horizon_T must be positive")
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        object.__setattr__(self, "b", tuple(float(x) for x in np.atleast_1d(self.b)))

    @property
    def n(self) -> int:
        return len(self.b)

    @property
    def mu(self) -> np.ndarray:
        """Drifts of the log price, b - sigma^2/2."""
        return np.asarray(self.b) - 0.5 * self.sigma**2

    @property
    def x0(self) -> float:
        return float(np.log(self.s0))

    def replace(self, **changes) -> "GbmStockModel":
        kw = dict(s0=self.s0, sigma=self.sigma, r=self.r, horizon_T=self.horizon_T, b=self.b)
        kw.update(changes)
        return GbmStockModel(**kw)


def example_stock_model(sigma: float = 0.30) -> GbmStockModel:
    """Three-scenario stock: T=5, r=2%, b=(-5%, 5%, 15%), S0=1."""
    return GbmStockModel(s0=1.0, sigma=sigma, r=0.02, horizon_T=5.0, b=(-0.05, 0.05, 0.15))


@dataclass(frozen=True)
class LinearRevenue:
    """Per-step revenue ``intercept + weights . x`` of the risk-factor vector."""

    intercept: float
    weights: tuple[float, ...]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.intercept + x @ np.asarray(self.weights, dtype=float)


@dataclass(frozen=True)
class ConstantCost:
    """Closure cost K(t) = level for every t (negative means salvage)."""

    level: float

    def __call__(self, t):
        return np.full(np.shape(t), float(self.level)) if np.ndim(t) else float(self.level)


@dataclass(frozen=True)
class DiscreteNoise:
    """A finite quadrature used in place of standard normal shocks."""

    points: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.points) != len(self.weights) or not self.points:
            raise ValueError("points and weights must have the same nonzero length")
        if abs(sum(self.weights) - 1) > 1e-12 or min(self.weights) < 0:
            raise ValueError("noise weights must form a probability vector")

    @classmethod
    def three_point(cls) -> "DiscreteNoise":
        """Gauss-Hermite rule with mean 0 and variance 1."""
        s = float(np.sqrt(3.0))
        return cls((-s, 0.0, s), (1 / 6, 2 / 3, 1 / 6))


@dataclass(frozen=True, eq=False)
class DivestModel:
    """VAR(1) risk factors around scenario means plus a noisy scenario signal.

    Array shapes: ``phi`` and ``vol`` are K x K, ``mu_paths`` is N x (T+1) x K,
    ``signal_means`` is N x (T+1).  ``noise`` switches both shock sequences to
    a discrete quadrature (used by the exhaustive-tree oracle).
    """

    phi: np.ndarray
    vol: np.ndarray
    mu_paths: np.ndarray
    signal_means: np.ndarray
    sigma_s: float
    beta: float
    revenue: Callable
    closure_cost: Callable
    horizon_T: int
    scenarios: ScenarioSet | None = None
    x0: np.ndarray | None = None
    noise: DiscreteNoise | None = None

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        vol = np.atleast_2d(np.asarray(self.vol, dtype=float))
        mu = np.asarray(self.mu_paths, dtype=float)
        sig = np.asarray(self.signal_means, dtype=float)
        T = int(self.horizon_T)
        if mu.ndim == 2:
            mu = mu[:, :, None]
        n, _, k = mu.shape
        if phi.shape != (k, k) or vol.shape != (k, k):
            raise ValueError(f"phi and vol must be {k}x{k}")
        if abs(np.linalg.det(vol)) < 1e-300:
            raise ValueError("vol must be nonsingular")
        if mu.shape[1] != T + 1 or sig.shape != (n, T + 1):
            raise ValueError("mean paths must have shape N x (T+1) [x K]")
        if self.sigma_s <= 0:
            raise ValueError("sigma_s must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        scen = self.scenarios or ScenarioSet.numbered(n)
        if scen.n != n:
            raise ValueError("scenario labels do not match the mean paths")
        x0 = np.zeros(k) if self.x0 is None else np.asarray(self.x0, dtype=float).reshape(k)
        for name, arr in (("phi", phi), ("vol", vol), ("mu_paths", mu), ("signal_means", sig), ("x0", x0)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "horizon_T", T)
        object.__setattr__(self, "scenarios", scen)

    @property
    def n(self) -> int:
        return self.mu_paths.shape[0]

    @property
    def k(self) -> int:
        return self.mu_paths.shape[2]

    def replace(self, **changes) -> "DivestModel":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return DivestModel(**kw)


def signal_likelihood(model: DivestModel, t: int, s: float) -> np.ndarray:
    """Unnormalized Gaussian weights exp(-(s - mean_i)^2 / (2 sigma_s^2))."""
    if not 0 <= t <= model.horizon_T:
        raise ValueError(f"t={t} outside 0..{model.horizon_T}")
    z = (s - model.signal_means[:, t]) / model.sigma_s
    return np.exp(-0.5 * z * z)


def signal_loglik(model: DivestModel, t: int, s) -> np.ndarray:
    """Log-likelihood of observation(s) ``s`` at step ``t`` for every scenario.

    Returns shape ``s.shape + (N,)``.  Under a discrete noise rule the
    likelihood is the quadrature weight of the matching point (or zero).
    """
    s = np.asarray(s, dtype=float)
    means = model.signal_means[:, t]
    z = (s[..., None] - means) / model.sigma_s
    if model.noise is None:
        return -0.5 * z * z
    pts = np.asarray(model.noise.points)
    logw = np.log(np.asarray(model.noise.weights))
    hit = np.abs(z[..., None] - pts) < 1e-8
    with np.errstate(divide="ignore"):
        out = np.where(hit.any(-1), logw[np.argmax(hit, axis=-1)], -np.inf)
    return out


def as_weights(q: SimplexPoint | Sequence[float]) -> np.ndarray:
    return np.asarray(q.weights if isinstance(q, SimplexPoint) else q, dtype=float)


# -- scenario CSV -------------------------------------------------------------

SCENARIO_HEADER = ["scenario", "t", "factor_index", "mu", "signal_mu"]


@dataclass(frozen=True, eq=False)
class ScenarioData:
    """Scenario-dependent parts of a divestment model read from CSV."""

    scenarios: ScenarioSet
    mu_paths: np.ndarray
    signal_means: np.ndarray

    @property
    def horizon_T(self) -> int:
        return self.signal_means.shape[1] - 1


def read_scenario_csv(path) -> ScenarioData:
    """Parse the long-format scenario file, one row per (scenario, t, factor).

    Scenarios keep their order of first appearance.  Every scenario must
    cover t = 0..T and factors 0..K-1 with the same T and K, and signal_mu
    must agree across the factor rows of one (scenario, t).
    """
    cells: dict[str, dict[tuple[int, int], float]] = {}
    signal: dict[str, dict[int, float]] = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SCENARIO_HEADER:
            raise SchemaError(f"header must be {','.join(SCENARIO_HEADER)}", 1)
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(SCENARIO_HEADER):
                raise SchemaError(f"expected {len(SCENARIO_HEADER)} fields, got {len(row)}", line)
            name = row[0].strip()
            try:
                t, k = int(row[1]), int(row[2])
                mu, smu = float(row[3]), float(row[4])
            except ValueError as exc:
                raise SchemaError(str(exc), line) from None
            if not name or t < 0 or k < 0 or not (np.isfinite(mu) and np.isfinite(smu)):
                raise SchemaError("bad scenario name, index or value", line)
            by_key = cells.setdefault(name, {})
            if (t, k) in by_key:
                raise SchemaError(f"duplicate row for ({name}, t={t}, factor={k})", line)
            by_key[(t, k)] = mu
            prev = signal.setdefault(name, {}).setdefault(t, smu)
            if prev != smu:
                raise SchemaError(f"signal_mu differs across factors for ({name}, t={t})", line)
    if not cells:
        raise SchemaError("no data rows", 2)

    names = list(cells)
    shapes = {}
    for name in names:
        ts = {t for t, _ in cells[name]}
        ks = {k for _, k in cells[name]}
        T, K = max(ts), max(ks) + 1
        if ts != set(range(T + 1)) or len(cells[name]) != (T + 1) * K:
            raise LengthMismatch(f"scenario {name!r} does not cover every (t, factor) for t=0..{T}, K={K}")
        shapes[name] = (T, K)
    if len(set(shapes.values())) != 1:
        raise LengthMismatch(f"scenarios disagree on (T, K): {shapes}")
    T, K = shapes[names[0]]
    mu = np.array([[[cells[n][(t, k)] for k in range(K)] for t in range(T + 1)] for n in names])
    sig = np.array([[signal[n][t] for t in range(T + 1)] for n in names])
    return ScenarioData(ScenarioSet(tuple(names)), mu, sig)
