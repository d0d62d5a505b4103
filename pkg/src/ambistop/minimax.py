"""Outer minimization over scenario weights and brute-force saddle checks.

On a small explicit tree every adapted stopping rule can be enumerated.  A
finite tree is an atomic probability space, so pure rules alone need not
close the duality gap; mixtures of pure rules (randomized stopping rules)
do, and they are what the certification maximizes over.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy.optimize import minimize, root

from .ambiguity import (
    SENTINEL,
    AmbiguityFunction,
    best_response_measure,
    g_grid,
    g_value,
    r_value,
    smooth_objective,
)
from .errors import BudgetExhausted, OutOfRange, StateSpaceTooLarge
from .scenario_model import SimplexPoint, as_weights, make_simplex

MAX_PERIODS = 3
MAX_NODES = 64
MAX_SCENARIOS = 3
MAX_RULES = 200_000
SADDLE_TOL = 1e-9


class InnerSolver(Protocol):
    def __call__(self, q: SimplexPoint):
        """Return an object with ``value`` (sup over rules of E^{P^q}[Y]) and
        ``expectations`` (per-scenario E^theta[Y] under that rule)."""


@dataclass(frozen=True, eq=False)
class InnerResult:
    expectations: np.ndarray
    value: float


# -- small explicit instances -------------------------------------------------


@dataclass(frozen=True, eq=False)
class SmallInstance:
    """An information tree shared by all scenarios.

    ``parent[j]`` is the parent of node j (-1 for the root, which must be
    node 0); ``trans[i, j]`` is the probability under scenario i of moving
    from ``parent[j]`` to j; ``payoff[j]`` is Y at node j.  All leaves sit
    on the last date.  A tree with ``n_periods`` transitions has
    ``n_periods + 1`` decision dates.
    """

    parent: np.ndarray
    trans: np.ndarray
    payoff: np.ndarray

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=int)
        trans = np.atleast_2d(np.asarray(self.trans, dtype=float))
        payoff = np.asarray(self.payoff, dtype=float)
        n = parent.size
        if parent[0] != -1 or np.any(parent[1:] < 0) or np.any(parent[1:] >= np.arange(1, n)):
            raise ValueError("nodes must be listed parents-first with the root at 0")
        if trans.shape[1] != n or payoff.size != n:
            raise ValueError("trans and payoff need one entry per node")
        level = np.zeros(n, dtype=int)
        for j in range(1, n):
            level[j] = level[parent[j]] + 1
        children = [np.flatnonzero(parent == j) for j in range(n)]
        leaves = [j for j in range(n) if children[j].size == 0]
        if len({level[j] for j in leaves}) != 1:
            raise ValueError("all leaves must be on the final date")
        for j in range(n):
            if children[j].size and not np.allclose(trans[:, children[j]].sum(axis=1), 1.0):
                raise ValueError(f"transition probabilities out of node {j} do not sum to 1")
        if trans.shape[0] > MAX_SCENARIOS or n > MAX_NODES or level.max() > MAX_PERIODS:
            raise StateSpaceTooLarge(
                f"instance has N={trans.shape[0]}, {n} nodes, {level.max()} periods"
            )
        reach = np.ones_like(trans)
        for j in range(1, n):
            reach[:, j] = reach[:, parent[j]] * trans[:, j]
        for name, val in (("parent", parent), ("trans", trans), ("payoff", payoff)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "level", level)
        object.__setattr__(self, "children", children)
        object.__setattr__(self, "reach", reach)

    @property
    def n_scenarios(self) -> int:
        return self.trans.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    @property
    def n_periods(self) -> int:
        return int(self.level.max())

    @property
    def leaves(self) -> list[int]:
        return [j for j in range(self.n_nodes) if self.children[j].size == 0]

    def paths(self) -> list[list[int]]:
        """Root-to-leaf node lists."""
        out = []
        for leaf in self.leaves:
            path = [leaf]
            while self.parent[path[-1]] >= 0:
                path.append(int(self.parent[path[-1]]))
            out.append(path[::-1])
        return out

    @classmethod
    def full_tree(cls, trans_fn: Callable, payoff_fn: Callable, n_scenarios: int, n_periods: int, branching: int):
        """Regular tree; ``trans_fn(node, n_children)`` gives an N x n_children
        array and ``payoff_fn(node, level)`` a payoff."""
        parent = [-1]
        level = [0]
        frontier = [0]
        for lv in range(1, n_periods + 1):
            nxt = []
            for node in frontier:
                for _ in range(branching):
                    parent.append(node)
                    level.append(lv)
                    nxt.append(len(parent) - 1)
            frontier = nxt
        n = len(parent)
        trans = np.zeros((n_scenarios, n))
        trans[:, 0] = 1.0
        parent_arr = np.asarray(parent)
        for j in range(n):
            kids = np.flatnonzero(parent_arr == j)
            if kids.size:
                trans[:, kids] = trans_fn(j, kids.size)
        payoff = np.array([payoff_fn(j, level[j]) for j in range(n)])
        return cls(parent_arr, trans, payoff)


def random_instance(rng: np.random.Generator, n_scenarios: int, n_periods: int, branching: int = 2,
                    payoff_range=(0.5, 2.0)) -> SmallInstance:
    return SmallInstance.full_tree(
        lambda node, k: rng.dirichlet(np.ones(k), size=n_scenarios),
        lambda node, lv: rng.uniform(*payoff_range),
        n_scenarios, n_periods, branching,
    )


def count_stopping_rules(inst: SmallInstance) -> int:
    def count(j):
        kids = inst.children[j]
        if kids.size == 0:
            return 1
        return 1 + math.prod(count(int(c)) for c in kids)

    return count(0)


def enumerate_stopping_rules(inst: SmallInstance) -> np.ndarray:
    """Every pure adapted rule as a boolean (n_rules, n_nodes) stop-node mask.

    A rule stops at a node or continues to all of its children; leaves stop.
    """
    n_rules = count_stopping_rules(inst)
    if n_rules > MAX_RULES:
        raise StateSpaceTooLarge(f"{n_rules} stopping rules exceed {MAX_RULES}")

    def rules(j) -> list[tuple[int, ...]]:
        kids = inst.children[j]
        if kids.size == 0:
            return [(j,)]
        out = [(j,)]
        for combo in itertools.product(*(rules(int(c)) for c in kids)):
            out.append(tuple(itertools.chain.from_iterable(combo)))
        return out

    masks = np.zeros((n_rules, inst.n_nodes), dtype=bool)
    for k, nodes in enumerate(rules(0)):
        masks[k, list(nodes)] = True
    return masks


def rule_values(inst: SmallInstance, rules: np.ndarray) -> np.ndarray:
    """E^theta[Y_tau] for every (pure or randomized) rule: shape (n_rules, N)."""
    rules = np.atleast_2d(np.asarray(rules, dtype=float))
    return rules @ (inst.reach * inst.payoff).T


@dataclass(frozen=True, eq=False)
class RandomizedStoppingRule:
    """Stop weights f[node] in [0, 1] summing to one along every path."""

    f: np.ndarray

    def validate(self, inst: SmallInstance, atol: float = 1e-12):
        f = np.asarray(self.f, dtype=float)
        if f.shape != (inst.n_nodes,) or np.any(f < -atol) or np.any(f > 1 + atol):
            raise ValueError("stop weights must lie in [0, 1], one per node")
        for path in inst.paths():
            if abs(f[path].sum() - 1.0) > atol:
                raise ValueError(f"stop weights along path {path} sum to {f[path].sum()}")

    @classmethod
    def from_pure(cls, mask) -> "RandomizedStoppingRule":
        return cls(np.asarray(mask, dtype=float))

    @classmethod
    def mixture(cls, rules: np.ndarray, weights) -> "RandomizedStoppingRule":
        return cls(np.asarray(weights, dtype=float) @ np.asarray(rules, dtype=float))


def randomized_g(inst: SmallInstance, rule: RandomizedStoppingRule, q, p, f: AmbiguityFunction):
    """G(rule, q) = R(q, sum_t E^{P^q}[f_t Y_t])."""
    rule.validate(inst)
    return g_value(f, q, p, rule_values(inst, rule.f)[0])


# -- primal and dual by brute force --------------------------------------------


def simplex_grid(n: int, step: float) -> np.ndarray:
    """Uniform barycentric grid with spacing ``step`` (1/step must be an integer)."""
    m = int(round(1.0 / step))
    if abs(m * step - 1.0) > 1e-9:
        raise ValueError("1/step must be an integer")
    if n == 1:
        return np.ones((1, 1))
    pts = []
    for c in itertools.combinations(range(m + n - 1), n - 1):
        bars = (-1,) + c + (m + n - 1,)
        pts.append([bars[i + 1] - bars[i] - 1 for i in range(n)])
    return np.asarray(pts, dtype=float) / m


def _pareto_unique(values: np.ndarray) -> np.ndarray:
    """Indices of distinct rows not weakly dominated by another row."""
    _, first = np.unique(np.round(values, 14), axis=0, return_index=True)
    first = np.sort(first)
    keep = []
    for k in first:
        v = values[k]
        dom = np.all(values[first] >= v, axis=1) & np.any(values[first] > v, axis=1)
        if not dom.any():
            keep.append(k)
    return np.asarray(keep, dtype=int)


def _ce_and_grad(f: AmbiguityFunction, p: np.ndarray, x: np.ndarray):
    """Certainty equivalent of x under p and its gradient in x (x > 0 for power/log)."""
    if f.kind == "exponential":
        z = -f.gamma * x
        m = z.max()
        e = p * np.exp(z - m)
        s = e.sum()
        return -(m + math.log(s)) / f.gamma, e / s
    if f.kind == "log":
        val = math.exp(p @ np.log(x))
        return val, val * p / x
    lam = f.lam
    m = p @ x**lam
    val = m ** (1.0 / lam)
    return val, val / m * p * x ** (lam - 1.0)


@dataclass(frozen=True, eq=False)
class PrimalResult:
    """Sup of the smooth objective over randomized rules (``value``) and over
    pure rules (``pure_value`` at rule index ``pure_rule``)."""

    value: float
    mixture: dict[int, float]
    pure_value: float
    pure_rule: int
    rules: np.ndarray
    values: np.ndarray


def _maximize_ce_over_hull(f: AmbiguityFunction, p: np.ndarray, V: np.ndarray, start: int) -> np.ndarray:
    K = V.shape[0]
    if K == 1:
        return np.ones(1)

    def obj(w):
        x = w @ V
        if f.kind != "exponential" and np.any(x[p > 0] <= 0):
            return 1e6, np.zeros(K)
        val, grad = _ce_and_grad(f, p, x)
        return -val, -(V @ grad)

    w0 = np.full(K, 0.1 / (K - 1))
    w0[start] = 0.9
    res = minimize(
        obj, w0, jac=True, method="SLSQP",
        bounds=[(0.0, 1.0)] * K,
        constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0, "jac": lambda w: np.ones(K)}],
        options={"ftol": 1e-15, "maxiter": 500},
    )
    w = np.clip(res.x, 0.0, None)
    return _polish(f, p, V, w / w.sum())


def _polish(f, p, V, w):
    """Refine the active mixture so the best-response measure is exactly
    indifferent between the rules in the support."""
    q = as_weights(best_response_measure(f, p, w @ V))
    gains = V @ q
    active = np.flatnonzero((w > 1e-10) | (gains >= gains.max() - 1e-7))
    if active.size < 2:
        out = np.zeros_like(w)
        out[np.argmax(gains)] = 1.0
        return out
    A = V[active]

    def eqs(u):
        ww = np.append(u, 1.0 - u.sum())
        qq = as_weights(best_response_measure(f, p, ww @ A))
        g = A @ qq
        return g[:-1] - g[-1]

    wa = w[active] / w[active].sum()
    sol = root(eqs, wa[:-1], method="hybr", options={"xtol": 1e-15})
    cand = np.append(sol.x, 1.0 - sol.x.sum())
    if sol.success and np.all(cand >= -1e-14):
        out = np.zeros_like(w)
        out[active] = np.clip(cand, 0.0, None)
        return out / out.sum()
    return w


def primal_value(inst: SmallInstance, p, f: AmbiguityFunction, rules: np.ndarray | None = None) -> PrimalResult:
    """Brute-force sup of the certainty equivalent over enumerated rules."""
    p = as_weights(p)
    rules = enumerate_stopping_rules(inst) if rules is None else rules
    V = rule_values(inst, rules)
    pure = np.array([float(smooth_objective(f, p, v)) for v in V])
    k_best = int(np.argmax(pure))
    cand = _pareto_unique(V)
    w = _maximize_ce_over_hull(f, p, V[cand], int(np.flatnonzero(cand == k_best)[0]) if k_best in cand else 0)
    mixture = {int(cand[i]): float(w[i]) for i in np.flatnonzero(w > 0)}
    x = np.sum([wk * V[k] for k, wk in mixture.items()], axis=0)
    value = max(float(smooth_objective(f, p, x)), pure[k_best])
    if value == pure[k_best] and float(smooth_objective(f, p, x)) < pure[k_best]:
        mixture = {k_best: 1.0}
    return PrimalResult(value, mixture, float(pure[k_best]), k_best, rules, V)


@dataclass(frozen=True, eq=False)
class SaddleCertificate:
    q_star: SimplexPoint
    tau_star: dict[int, float]
    gap: float
    inequalities_checked: int
    max_violation_stopper: float
    max_violation_measure: float

    @property
    def holds(self) -> bool:
        return max(self.max_violation_stopper, self.max_violation_measure) <= SADDLE_TOL


@dataclass(frozen=True, eq=False)
class DualResult:
    """``value`` is min over grid q of max over rules of G; ``max_min`` is the
    exact max over randomized rules of min over q; ``max_min_pure`` restricts
    the maximization to pure rules and the minimization to the grid."""

    value: float
    q_star: SimplexPoint
    certificate: SaddleCertificate
    max_min: float
    max_min_pure: float
    grid: np.ndarray = field(repr=False)


def dual_value(inst: SmallInstance, p, f: AmbiguityFunction, grid_step: float = 0.01,
               primal: PrimalResult | None = None) -> DualResult:
    if grid_step > 0.02:
        raise ValueError("grid_step must be at most 0.02")
    p = as_weights(p)
    primal = primal or primal_value(inst, p, f)
    V = primal.values
    Q = simplex_grid(inst.n_scenarios, grid_step)
    G = g_grid(f, Q, p, V)  # grid points x rules
    col_max = G.max(axis=1)
    m_star = int(np.argmin(col_max))
    min_max = float(col_max[m_star])
    max_min_pure = float(G.min(axis=0).max())

    # saddle pair: the randomized maximizer and its exact best-response measure
    tau = primal.mixture
    x_tau = np.sum([w * V[k] for k, w in tau.items()], axis=0)
    try:
        q_star = best_response_measure(f, p, x_tau)
    except OutOfRange:
        q_star = SimplexPoint(Q[m_star])
    g_star = float(g_value(f, q_star, p, x_tau))
    g_rules_at_q = g_grid(f, as_weights(q_star)[None, :], p, V)[0]
    g_tau_on_grid = g_grid(f, Q, p, x_tau[None, :])[:, 0]
    viol_stopper = float(max(g_rules_at_q.max() - g_star, 0.0))
    viol_measure = float(max(g_star - g_tau_on_grid.min(), 0.0))
    max_min = g_star
    cert = SaddleCertificate(
        q_star=q_star,
        tau_star=tau,
        gap=abs(min_max - max_min),
        inequalities_checked=V.shape[0] + Q.shape[0],
        max_violation_stopper=viol_stopper,
        max_violation_measure=viol_measure,
    )
    return DualResult(min_max, SimplexPoint(Q[m_star]), cert, max_min, max_min_pure, Q)


def pure_rule_inner(inst: SmallInstance, rules: np.ndarray | None = None):
    """Inner solver on a small instance: the best pure rule for q."""
    rules = enumerate_stopping_rules(inst) if rules is None else rules
    V = rule_values(inst, rules)

    def inner(q):
        k = int(np.argmax(V @ as_weights(q)))
        return InnerResult(V[k], float(V[k] @ as_weights(q)))

    return inner


# -- outer minimization over the simplex -------------------------------------


@dataclass(frozen=True, eq=False)
class OuterResult:
    q_star: SimplexPoint
    value: float
    n_evals: int
    inner: object


def _softmax_point(z: np.ndarray, n: int, floor: float) -> np.ndarray:
    full = np.append(z, 0.0)
    e = np.exp(full - full.max())
    return floor + (1.0 - n * floor) * e / e.sum()


def _softmax_coords(q: np.ndarray, floor: float) -> np.ndarray:
    n = q.size
    y = np.clip((q - floor) / (1.0 - n * floor), 1e-12, None)
    z = np.log(y)
    return z[:-1] - z[-1]


def outer_minimize(inner: InnerSolver, f: AmbiguityFunction, p, tol: float = 1e-6,
                   max_evals: int = 500, floor: float = 1e-8, step: float = 1.0,
                   xatol: float = 1e-5) -> OuterResult:
    """Minimize q -> G(tau_q, q) = R(q, sup_tau E^{P^q}[Y_tau]) over the simplex.

    Nelder-Mead on softmax coordinates, restarted from the reference prior,
    a blend towards the scenario that is worst under the prior's rule, and
    the barycenter, each with an equal share of the remaining budget.
    ``xatol`` is the simplex size (in softmax coordinates) at which a run
    may stop.  Infinite penalties are passed as a finite sentinel.
    """
    p = as_weights(p)
    n = p.size
    if n == 1:
        res = inner(SimplexPoint(np.ones(1)))
        return OuterResult(SimplexPoint(np.ones(1)), float(g_value(f, [1.0], p, res.expectations)), 1, res)

    cache: dict[bytes, float] = {}
    evals = 0

    def objective(z):
        nonlocal evals
        q = _softmax_point(np.asarray(z, dtype=float), n, floor)
        key = q.tobytes()
        if key not in cache:
            evals += 1
            res = inner(SimplexPoint(q / q.sum()))
            val, _ = r_value(f, q, p, res.value).sentinel()
            cache[key] = val
        return cache[key]

    res_p = inner(SimplexPoint(p))
    evals += 1
    worst = int(np.argmin(res_p.expectations))
    blend = 0.5 * p + 0.5 * np.eye(n)[worst]
    starts = [p, blend, np.full(n, 1.0 / n)]

    best_z, best_val, converged = None, math.inf, False
    for k, q0 in enumerate(starts):
        remaining = (max_evals - evals) // (len(starts) - k)
        if remaining <= n:
            break
        z0 = _softmax_coords(np.clip(q0, floor, None), floor)
        simplex = np.vstack([z0] + [z0 + step * e for e in np.eye(n - 1)])
        out = minimize(objective, z0, method="Nelder-Mead",
                       options={"initial_simplex": simplex, "xatol": xatol, "fatol": tol,
                                "maxfev": remaining})
        if out.success:
            converged = True
        if out.fun < best_val:
            best_z, best_val = out.x, float(out.fun)
    if not converged:
        raise BudgetExhausted(f"no restart met tol={tol} within {max_evals} inner evaluations")
    q_star = make_simplex(_softmax_point(best_z, n, floor))
    res = inner(q_star)
    value = float(g_value(f, q_star, p, res.expectations))
    return OuterResult(q_star, value, evals, res)
