"""Desk-scale reproduction pipelines for the stock and divestment examples.

Every pipeline returns one or more :class:`ResultTable` objects in long
format.  All randomness flows from ``ExperimentSpec.seed`` so reruns are
bit-identical.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .ambiguity import AmbiguityFunction
from .errors import RegressionSingular
from .learning import DriftPrior, posterior_weights, simulate_learning_paths
from .minimax import dual_value, outer_minimize, primal_value, random_instance
from .scenario_model import (
    ConstantCost,
    DivestModel,
    GbmStockModel,
    LinearRevenue,
    SimplexPoint,
    read_scenario_csv,
)
from .stopping_fd import FdGrid, StockInner, drift_prior, extract_boundary, premium_at, solve_vi
from .stopping_lsmc import LsmcConfig, LsmcInner, closure_histogram, lsmc_value

EXPERIMENTS = ("stock", "fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "minimax-check", "filter-sim")
MONOTONE_TOL = 1e-4


def synthetic_pack_path() -> Path:
    return Path(str(resources.files("ambistop") / "data" / "synthetic_scenarios.csv"))


@dataclass(frozen=True)
class ExperimentSpec:
    which: str
    # stock example
    s0: float = 1.0
    r: float = 0.02
    horizon: float = 5.0
    b: tuple[float, ...] = (-0.05, 0.05, 0.15)
    sigma: float = 0.30
    lambdas: tuple[float, ...] = (-5.0, -2.0, -1.0, -0.5, 0.5, 0.9)
    sigmas: tuple[float, ...] = (0.10, 0.15, 0.20, 0.25, 0.30)
    nx: int = 161
    nt: int = 200
    bermudan: bool = False
    tol: float = 1e-7
    max_evals: int = 500
    # divestment example
    scenarios: str | None = None
    capital_cost: float = 1000.0
    salvage_fraction: float = 0.3
    beta: float = 0.95
    sigma_s: float = 0.05
    phi: float = 0.8
    factor_vol: tuple[float, ...] = (3.0, 5.0)
    revenue_intercept: float = -30.0
    revenue_weights: tuple[float, ...] = (6.0, -5.4)
    n_paths: int = 4000
    divest_tol: float = 1e-3
    basis_degree: int = 2
    divest_lambdas: tuple[float, ...] = (-5.0, -2.0, -0.5, 0.5)
    fig6_lambda: float = -2.0
    # small-instance certification
    grid_step: float = 0.01
    n_instances: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.which not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.which!r}; choose from {EXPERIMENTS}")
        for name in ("lambdas", "sigmas", "divest_lambdas"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must not be empty")
        if any(s <= 0 for s in self.sigmas) or self.sigma <= 0:
            raise ValueError("volatilities must be positive")
        for lam in self.lambdas + self.divest_lambdas + (self.fig6_lambda,):
            AmbiguityFunction.power(lam)
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def with_overrides(self, overrides: dict[str, str]) -> "ExperimentSpec":
        """Apply ``key=value`` strings; tuples take comma-separated lists."""
        types = {f.name: f.type for f in fields(self)}
        changes = {}
        for key, raw in overrides.items():
            if key not in types or key == "which":
                raise KeyError(f"unknown setting {key!r}")
            t = str(types[key])
            if t.startswith("tuple"):
                changes[key] = tuple(float(v) for v in raw.split(",") if v.strip())
            elif t == "bool":
                if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(f"{key} expects a boolean, got {raw!r}")
                changes[key] = raw.lower() in ("1", "true", "yes")
            elif t == "int":
                changes[key] = int(raw)
            elif t == "float":
                changes[key] = float(raw)
            else:
                changes[key] = raw
        return replace(self, **changes)

    def stock_model(self, sigma: float | None = None) -> GbmStockModel:
        return GbmStockModel(self.s0, self.sigma if sigma is None else sigma, self.r, self.horizon, self.b)

    def stock_grid(self, model: GbmStockModel) -> FdGrid:
        return FdGrid.for_model(model, self.nx, self.nt)

    def divest_model(self) -> DivestModel:
        data = read_scenario_csv(self.scenarios or synthetic_pack_path())
        k = data.mu_paths.shape[2]
        vol = np.broadcast_to(np.asarray(self.factor_vol, dtype=float), (k,))
        weights = np.broadcast_to(np.asarray(self.revenue_weights, dtype=float), (k,))
        return DivestModel(
            phi=self.phi * np.eye(k),
            vol=np.diag(vol),
            mu_paths=data.mu_paths,
            signal_means=data.signal_means,
            sigma_s=self.sigma_s,
            beta=self.beta,
            revenue=LinearRevenue(self.revenue_intercept, tuple(weights)),
            closure_cost=ConstantCost(-self.salvage_fraction * self.capital_cost),
            horizon_T=data.horizon_T,
            scenarios=data.scenarios,
        )

    def lsmc_config(self) -> LsmcConfig:
        return LsmcConfig(n_paths=self.n_paths, basis_degree=self.basis_degree, seed=self.seed)


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    param_name: str
    param_value: str
    quantity: str
    value: float


@dataclass(frozen=True)
class PlotSpec:
    """Which rows to draw: ``quantity`` against the numeric param ``x``,
    one polyline per value of ``series`` (a second param) if given."""

    quantity: str
    x: str
    series: str | None = None
    title: str = ""


@dataclass
class ResultTable:
    experiment: str
    rows: list[ResultRow] = field(default_factory=list)
    plot: PlotSpec | None = None

    def add(self, params: dict[str, object], quantity: str, value: float):
        names = "|".join(params)
        values = "|".join(fmt_param(v) for v in params.values())
        self.rows.append(ResultRow(self.experiment, names, values, quantity, float(value)))

    def get(self, quantity: str, **params) -> float:
        """Value of the unique row matching ``quantity`` and exact params."""
        names = "|".join(params)
        values = "|".join(fmt_param(v) for v in params.values())
        hits = [r.value for r in self.rows if r.quantity == quantity and r.param_name == names and r.param_value == values]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {quantity} {params}")
        return hits[0]

    def select(self, quantity: str) -> list[ResultRow]:
        return [r for r in self.rows if r.quantity == quantity]


def fmt_param(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def worker_count() -> int:
    raw = os.environ.get("AMBISTOP_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def parallel_map(fn, items) -> list:
    """Ordered map over a thread pool capped by AMBISTOP_THREADS."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# -- stock example --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StockPoint:
    lam: float
    sigma: float
    value: float
    q_star: SimplexPoint
    expectations: np.ndarray
    n_evals: int


def stock_dual(spec: ExperimentSpec, lam: float, sigma: float | None = None) -> StockPoint:
    model = spec.stock_model(sigma)
    inner = StockInner(model, spec.stock_grid(model), spec.bermudan)
    p = SimplexPoint.uniform(model.n)
    out = outer_minimize(inner, AmbiguityFunction.power(lam), p, spec.tol, spec.max_evals)
    return StockPoint(lam, model.sigma, out.value, out.q_star, out.inner.expectations, out.n_evals)


def worst_case_value(spec: ExperimentSpec, sigma: float | None = None) -> float:
    """min over q of the optimal selling value under q; attained at a vertex
    because the value is convex in q (sup of linear functions)."""
    model = spec.stock_model(sigma)
    inner = StockInner(model, spec.stock_grid(model), spec.bermudan)
    return min(inner(SimplexPoint.vertex(model.n, i)).value for i in range(model.n))


def _nondecreasing(values, tol=MONOTONE_TOL) -> bool:
    return bool(np.all(np.diff(values) >= -tol))


def run_stock_single(spec: ExperimentSpec) -> ResultTable:
    table = ResultTable("stock")
    pt = stock_dual(spec, spec.lambdas[0], spec.sigma)
    params = {"lambda": pt.lam, "sigma": pt.sigma}
    table.add(params, "value", pt.value)
    for i, qi in enumerate(pt.q_star.weights):
        table.add(params, f"q_{i + 1}", qi)
    for i, e in enumerate(pt.expectations):
        table.add(params, f"scenario_value_{i + 1}", e)
    table.add(params, "inner_evaluations", pt.n_evals)
    return table


def run_fig1(spec: ExperimentSpec) -> ResultTable:
    """Boundary, value and posterior drift estimate without ambiguity."""
    model = spec.stock_model()
    grid = spec.stock_grid(model)
    q = SimplexPoint.uniform(model.n)
    surface = solve_vi(model, q, grid, spec.bermudan)
    table = ResultTable("fig1", plot=PlotSpec("boundary", "t", title="Exercise boundary (price level)"))
    bound = extract_boundary(surface)
    prior = drift_prior(model, q)
    stride = max(1, grid.nt // 50)
    for n in range(0, grid.nt, stride):
        if np.isnan(bound[n]):
            continue
        t = float(grid.t[n])
        table.add({"t": t}, "boundary", np.exp(bound[n]))
        table.add({"t": t}, "drift_estimate", float(posterior_weights(prior, t, bound[n]) @ np.asarray(model.b)))
    for s in np.linspace(0.5, 2.0, 31):
        table.add({"S": float(s)}, "value", s + premium_at(surface, float(np.log(s))))
    return table


def run_stock_ambiguity_sweep(spec: ExperimentSpec) -> ResultTable:
    """Dual value and minimizing prior per lambda at the base volatility."""
    table = ResultTable("fig2", plot=PlotSpec("value", "lambda", title="Dual value against lambda"))
    points = parallel_map(lambda lam: stock_dual(spec, lam), spec.lambdas)
    for pt in points:
        table.add({"lambda": pt.lam}, "value", pt.value)
        for i, qi in enumerate(pt.q_star.weights):
            table.add({"lambda": pt.lam}, f"q_{i + 1}", qi)
    ordered = sorted(points, key=lambda pt: pt.lam)
    table.add({"lambda": "all"}, "nondecreasing_in_lambda", float(_nondecreasing([pt.value for pt in ordered])))
    table.add({"lambda": "all"}, "worst_case_value", worst_case_value(spec))
    return table


def run_sigma_sweep(spec: ExperimentSpec) -> ResultTable:
    table = ResultTable("fig3", plot=PlotSpec("value", "sigma", series="lambda", title="Dual value against volatility"))
    jobs = [(sig, lam) for lam in spec.lambdas for sig in spec.sigmas]
    points = parallel_map(lambda job: stock_dual(spec, job[1], job[0]), jobs)
    for pt in points:
        table.add({"sigma": pt.sigma, "lambda": pt.lam}, "value", pt.value)
    for lam in spec.lambdas:
        vals = [pt.value for pt in sorted(points, key=lambda pt: pt.sigma) if pt.lam == lam]
        table.add({"lambda": lam}, "nonincreasing_in_sigma", float(_nondecreasing(-np.asarray(vals))))
        table.add({"lambda": lam}, "value_change_over_sigma_range", vals[-1] - vals[0])
    return table


def run_fig4(spec: ExperimentSpec) -> ResultTable:
    """Exercise boundaries at the minimizing prior for each lambda."""
    table = ResultTable("fig4", plot=PlotSpec("boundary", "t", series="lambda", title="Exercise boundary at q*"))
    model = spec.stock_model()
    grid = spec.stock_grid(model)
    points = parallel_map(lambda lam: stock_dual(spec, lam), spec.lambdas)
    stride = max(1, grid.nt // 50)
    for pt in points:
        bound = extract_boundary(solve_vi(model, pt.q_star, grid, spec.bermudan))
        for n in range(0, grid.nt, stride):
            if not np.isnan(bound[n]):
                table.add({"lambda": pt.lam, "t": float(grid.t[n])}, "boundary", np.exp(bound[n]))
    return table


# -- divestment example -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DivestRun:
    """Everything the two divestment figures are drawn from."""

    model: DivestModel
    modes: dict
    ambiguity: dict


def run_divest_pipeline(spec: ExperimentSpec, lambdas=None) -> tuple[ResultTable, list[ResultTable]]:
    """Project value in three information modes plus the ambiguity sweep,
    and closure-time histograms (revealed, learning, ambiguity)."""
    model = spec.divest_model()
    labels = model.scenarios.labels
    p = SimplexPoint.uniform(model.n)
    cfg = spec.lsmc_config()
    lambdas = tuple(spec.divest_lambdas if lambdas is None else lambdas)
    if spec.fig6_lambda not in lambdas:
        lambdas = lambdas + (spec.fig6_lambda,)

    with warnings.catch_warnings():
        # sparse posterior features make some late-date designs rank deficient
        warnings.simplefilter("ignore", RegressionSingular)
        inner = LsmcInner(model, cfg, "learning")
        modes = {
            mode: lsmc_value(model, p, cfg, mode, inner.paths)
            for mode in ("revealed", "learning", "frozen")
        }

        def one(lam):
            out = outer_minimize(inner, AmbiguityFunction.power(lam), p, spec.divest_tol, spec.max_evals, xatol=1e-3)
            under_p = lsmc_value(model, out.q_star, cfg, "learning", inner.paths, evaluate_under=p)
            return lam, out, under_p

        sweep = parallel_map(one, lambdas)

    fig5 = ResultTable("fig5", plot=PlotSpec("value", "lambda", title="Project value against lambda"))
    for mode, sol in modes.items():
        fig5.add({"mode": mode}, "value", sol.value)
        fig5.add({"mode": mode}, "ci_halfwidth", sol.ci_halfwidth)
        fig5.add({"mode": mode}, "mean_closure_time", sol.mean_stop_time())
    for lam, out, under_p in sweep:
        if lam not in spec.divest_lambdas and lambdas is None:
            continue
        fig5.add({"lambda": lam}, "value", out.value)
        for label, qi in zip(labels, out.q_star.weights):
            fig5.add({"lambda": lam}, f"q[{label}]", qi)
        fig5.add({"lambda": lam}, "value_under_prior", under_p.value)
        fig5.add({"lambda": lam}, "mean_closure_time", under_p.mean_stop_time())
        fig5.add({"lambda": lam}, "inner_evaluations", out.n_evals)

    hists = []
    amb = next(u for lam, _, u in sweep if lam == spec.fig6_lambda)
    for mode, sol in (("revealed", modes["revealed"]), ("learning", modes["learning"]), ("ambiguity", amb)):
        h = closure_histogram(sol)
        table = ResultTable(f"fig6_{mode}")
        for year in range(h.shape[0]):
            for j, label in enumerate(labels):
                table.add({"year": year, "scenario": label}, "closure_mass", h[year, j])
        hists.append(table)
    return fig5, hists


# -- small-instance certification -----------------------------------------------


CERT_FUNCTIONS = (
    AmbiguityFunction.power(-2.0),
    AmbiguityFunction.power(-0.5),
    AmbiguityFunction.power(0.5),
    AmbiguityFunction.exponential(1.0),
)


def certification_instances(spec: ExperimentSpec):
    """Seeded small instances cycling through N in {2, 3} and 2 or 3 periods."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for i in range(spec.n_instances):
        n_scen = 2 + i % 2
        periods = 2 + (i // 2) % 2
        out.append(random_instance(rng, n_scen, periods, 2))
    return out


def run_minimax_check(spec: ExperimentSpec) -> ResultTable:
    table = ResultTable("minimax-check")
    insts = certification_instances(spec)

    def check(job):
        i, f = job
        inst = insts[i]
        p = SimplexPoint.uniform(inst.n_scenarios)
        primal = primal_value(inst, p, f)
        dual = dual_value(inst, p, f, spec.grid_step, primal=primal)
        return i, f, primal, dual

    for i, f, primal, dual in parallel_map(check, [(i, f) for i in range(len(insts)) for f in CERT_FUNCTIONS]):
        params = {"instance": i, "f": f.label()}
        cert = dual.certificate
        table.add(params, "primal_value", primal.value)
        table.add(params, "primal_value_pure", primal.pure_value)
        table.add(params, "max_min", dual.max_min)
        table.add(params, "max_min_pure_grid", dual.max_min_pure)
        table.add(params, "min_max", dual.value)
        table.add(params, "gap", cert.gap)
        table.add(params, "violation_stopper", cert.max_violation_stopper)
        table.add(params, "violation_measure", cert.max_violation_measure)
        table.add(params, "saddle_holds", float(cert.holds))
    return table


# -- filter diagnostics -----------------------------------------------------------


def run_filter_sim(spec: ExperimentSpec) -> ResultTable:
    """Posterior paths under the prior mixture: means, martingale check and
    concentration on the true scenario at the horizon."""
    model = spec.divest_model()
    p = SimplexPoint.uniform(model.n)
    bundle = simulate_learning_paths(model, p, spec.n_paths, spec.seed)
    table = ResultTable("filter-sim", plot=PlotSpec("mean_posterior", "t", series="scenario", title="Mean posterior"))
    pi = bundle.pi
    for t in range(model.horizon_T + 1):
        for j, label in enumerate(model.scenarios.labels):
            table.add({"t": t, "scenario": label}, "mean_posterior", pi[:, t, j].mean())
    inc = np.diff(pi, axis=1)
    se = inc.std(axis=0, ddof=1) / np.sqrt(pi.shape[0])
    z = np.where(se > 0, np.abs(inc.mean(axis=0)) / np.where(se > 0, se, 1.0), 0.0)
    T = model.horizon_T
    truth = pi[np.arange(pi.shape[0]), T, bundle.theta[:, 0]]
    table.add({"t": "all"}, "max_martingale_z", z.max())
    table.add({"t": T}, "share_true_posterior_above_0.99", np.mean(truth > 0.99))
    return table


def run_experiment(spec: ExperimentSpec) -> list[ResultTable]:
    which = spec.which
    if which == "stock":
        return [run_stock_single(spec)]
    if which == "fig1":
        return [run_fig1(spec)]
    if which == "fig2":
        return [run_stock_ambiguity_sweep(spec)]
    if which == "fig3":
        return [run_sigma_sweep(spec)]
    if which == "fig4":
        return [run_fig4(spec)]
    if which in ("fig5", "fig6"):
        fig5, hists = run_divest_pipeline(spec)
        return [fig5] + hists if which == "fig5" else hists
    if which == "minimax-check":
        return [run_minimax_check(spec)]
    return [run_filter_sim(spec)]
