"""Smooth ambiguity objective and its penalized worst-case (dual) form.

Three distortion families are supported:

* ``power``: v(x) = x**lam for lam in (0, 1), v(x) = -x**lam for lam < 0,
  and -inf for negative x;
* ``log``: v(x) = log(x), -inf for x <= 0;
* ``exponential``: v(x) = -exp(-gamma x).

For each family the dual functional R(q, s) is available in closed form.
Power and log penalize multiplicatively, exponential additively through the
relative entropy of q with respect to p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import total_ordering

import numpy as np

from .errors import AbsoluteContinuityViolated, OutOfRange
from .scenario_model import SimplexPoint, as_weights

SENTINEL = 1e18


@total_ordering
@dataclass(frozen=True)
class ExtendedValue:
    """A real number or one of the markers +inf / -inf.

    ``value`` is always finite; ``inf`` is +1 or -1 for the markers.
    """

    value: float = 0.0
    inf: int = 0

    @classmethod
    def of(cls, x: float) -> "ExtendedValue":
        if math.isnan(x):
            raise ValueError("NaN is not an extended real")
        if math.isinf(x):
            return cls(0.0, 1 if x > 0 else -1)
        return cls(float(x), 0)

    @classmethod
    def pos_inf(cls) -> "ExtendedValue":
        return cls(0.0, 1)

    @classmethod
    def neg_inf(cls) -> "ExtendedValue":
        return cls(0.0, -1)

    @property
    def is_finite(self) -> bool:
        return self.inf == 0

    def __float__(self):
        return self.value if self.inf == 0 else math.copysign(math.inf, self.inf)

    def sentinel(self) -> tuple[float, bool]:
        """Finite stand-in for optimizers plus a flag telling if it is a marker."""
        if self.inf == 0:
            return self.value, False
        return math.copysign(SENTINEL, self.inf), True

    def __eq__(self, other):
        try:
            return float(self) == float(other)
        except (TypeError, ValueError):
            return NotImplemented

    def __lt__(self, other):
        return float(self) < float(other)

    def __hash__(self):
        return hash(float(self))

    def __repr__(self):
        if self.inf:
            return "+inf" if self.inf > 0 else "-inf"
        return repr(self.value)


@dataclass(frozen=True)
class AmbiguityFunction:
    kind: str
    lam: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.kind == "power":
            if self.lam is None or self.lam == 0 or self.lam >= 1:
                raise ValueError(f"power needs lam < 1, lam != 0 (got {self.lam})")
        elif self.kind == "exponential":
            if self.gamma is None or self.gamma <= 0:
                raise ValueError(f"exponential needs gamma > 0 (got {self.gamma})")
        elif self.kind != "log":
            raise ValueError(f"unknown ambiguity kind {self.kind!r}")

    @classmethod
    def power(cls, lam: float) -> "AmbiguityFunction":
        return cls("power", lam=float(lam))

    @classmethod
    def log(cls) -> "AmbiguityFunction":
        return cls("log")

    @classmethod
    def exponential(cls, gamma: float) -> "AmbiguityFunction":
        return cls("exponential", gamma=float(gamma))

    @property
    def multiplicative(self) -> bool:
        return self.kind in ("power", "log")

    def label(self) -> str:
        if self.kind == "power":
            return f"power(lam={self.lam:g})"
        if self.kind == "exponential":
            return f"exponential(gamma={self.gamma:g})"
        return "log"


def _v(f: AmbiguityFunction, x: float) -> float:
    if f.kind == "power":
        lam = f.lam
        if x < 0 or (x == 0 and lam < 0):
            return -math.inf
        return x**lam if lam > 0 else -(x**lam)
    if f.kind == "log":
        return math.log(x) if x > 0 else -math.inf
    z = -f.gamma * x
    return -math.inf if z > 709.0 else -math.exp(z)


def v_apply(f: AmbiguityFunction, x: float) -> ExtendedValue:
    return ExtendedValue.of(_v(f, float(x)))


def v_inverse(f: AmbiguityFunction, y) -> float:
    y = float(y)
    if f.kind == "power":
        lam = f.lam
        if lam > 0:
            if not 0 <= y < math.inf:
                raise OutOfRange(f"{y} is not attained by x**{lam}")
            return y ** (1.0 / lam)
        if not -math.inf < y < 0:
            raise OutOfRange(f"{y} is not attained by -x**{lam}")
        return (-y) ** (1.0 / lam)
    if f.kind == "log":
        if not math.isfinite(y):
            raise OutOfRange(f"{y} is not attained by log")
        return math.exp(y)
    if not -math.inf < y < 0:
        raise OutOfRange(f"{y} is not attained by -exp(-gamma x)")
    return -math.log(-y) / f.gamma


def smooth_objective(f: AmbiguityFunction, p, scenario_values) -> ExtendedValue:
    """Certainty equivalent v^-1(sum_i p_i v(values_i))."""
    p = as_weights(p)
    vals = np.asarray(scenario_values, dtype=float)
    if f.kind == "exponential":
        # log-sum-exp form avoids overflow for large gamma * |x|
        mask = p > 0
        z = -f.gamma * vals[mask]
        m = z.max()
        return ExtendedValue.of(-(m + math.log(np.sum(p[mask] * np.exp(z - m)))) / f.gamma)
    acc = 0.0
    for pi, x in zip(p, vals):
        if pi == 0:
            continue
        vx = _v(f, x)
        if vx == -math.inf:
            return ExtendedValue.neg_inf()
        acc += pi * vx
    return ExtendedValue.of(v_inverse(f, acc))


def _check_ac(q: np.ndarray, p: np.ndarray):
    bad = (q > 0) & (p == 0)
    if np.any(bad):
        raise AbsoluteContinuityViolated(
            f"q puts mass on scenarios {np.flatnonzero(bad).tolist()} where p has none"
        )


def penalty_factor(f: AmbiguityFunction, q, p) -> ExtendedValue:
    """Multiplicative factor (power, log) or relative entropy (exponential)."""
    q, p = as_weights(q), as_weights(p)
    _check_ac(q, p)
    return ExtendedValue.of(float(penalty_factor_grid(f, q[None, :], p)[0]))


def penalty_factor_grid(f: AmbiguityFunction, Q: np.ndarray, p) -> np.ndarray:
    """Vectorized penalty over rows of ``Q``; uses np.inf for the markers.

    Rows violating absolute continuity get +inf as well (callers that need
    the error use :func:`penalty_factor`).
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    p = as_weights(p)
    sup = p > 0
    outside = np.any(Q[:, ~sup] > 0, axis=1)
    Qs, ps = Q[:, sup], p[sup]
    ratio = Qs / ps
    with np.errstate(divide="ignore", invalid="ignore"):
        if f.kind == "power":
            lam = f.lam
            a = lam / (lam - 1.0)
            terms = np.where(ratio > 0, ratio, 0.0) ** a if a > 0 else np.where(ratio > 0, ratio**a, np.inf)
            inner = terms @ ps
            out = inner ** ((1.0 - lam) / lam)
            if a < 0:
                out = np.where(np.isinf(inner), np.inf, out)
        elif f.kind == "log":
            logs = np.where(ratio > 0, np.log(np.where(ratio > 0, ratio, 1.0)), -np.inf)
            out = np.exp(-(logs @ ps))
        else:
            # 0 log 0 = 0
            terms = np.where(Qs > 0, Qs * np.log(np.where(ratio > 0, ratio, 1.0)), 0.0)
            out = terms.sum(axis=1)
    return np.where(outside, np.inf, out)


def _r_from_factor(f: AmbiguityFunction, factor, s):
    """R(q, s) given a precomputed penalty; broadcasts, np.inf for markers."""
    factor = np.asarray(factor, dtype=float)
    s = np.asarray(s, dtype=float)
    if f.kind == "exponential":
        # entropic dual: the measure pays for moving away from p
        return s + factor / f.gamma
    with np.errstate(invalid="ignore"):
        finite = np.where(s > 0, s * factor, 0.0)
    infinite = np.where(s >= 0, np.inf, 0.0)
    return np.where(np.isinf(factor), infinite, finite)


def r_value(f: AmbiguityFunction, q, p, s: float) -> ExtendedValue:
    factor = float(penalty_factor(f, q, p))
    return ExtendedValue.of(float(_r_from_factor(f, factor, s)))


def g_value(f: AmbiguityFunction, q, p, scenario_values) -> ExtendedValue:
    """G = R(q, E^{P^q}[Y]) with the mixture expectation sum_i q_i values_i.

    For the multiplicative families R already keeps only the positive part of
    its argument, which is the (.)^+ in the power/log dual objective.
    """
    qw = as_weights(q)
    s = float(qw @ np.asarray(scenario_values, dtype=float))
    return r_value(f, q, p, s)


def g_grid(f: AmbiguityFunction, Q: np.ndarray, p, values: np.ndarray) -> np.ndarray:
    """G(q_m, rule_k) for every row of ``Q`` and row of ``values`` (rules x N)."""
    Q = np.atleast_2d(Q)
    factor = penalty_factor_grid(f, Q, p)
    s = Q @ np.atleast_2d(values).T
    return _r_from_factor(f, factor[:, None], s)


def best_response_measure(f: AmbiguityFunction, p, scenario_values) -> SimplexPoint:
    """The q minimizing R(q, q . values) in closed form.

    power: q ~ p * x**(lam - 1); log: q ~ p / x; exponential: q ~ p exp(-gamma x).
    Power and log require strictly positive values on the support of p.
    """
    p = as_weights(p)
    x = np.asarray(scenario_values, dtype=float)
    sup = p > 0
    if f.kind == "exponential":
        z = -f.gamma * x
        z = np.where(sup, z - z[sup].max(), -np.inf)
        w = np.where(sup, p * np.exp(z), 0.0)
    else:
        if np.any(x[sup] <= 0):
            raise OutOfRange("closed-form minimizer needs positive scenario values")
        e = (f.lam - 1.0) if f.kind == "power" else -1.0
        logw = np.where(sup, np.log(np.where(sup, p, 1.0)) + e * np.log(np.where(sup, x, 1.0)), -np.inf)
        w = np.exp(logw - logw[sup].max())
    return SimplexPoint(w / w.sum())
