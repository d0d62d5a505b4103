"""Command-line front end.

    ambistop stock [--figure fig1|fig2|fig3|fig4] [--lambda L] [--sigma S]
    ambistop divest --scenarios FILE [--figure fig5|fig6]
    ambistop minimax-check [--grid-step H]
    ambistop filter-sim [--scenarios FILE]

Common flags: --out DIR, --seed N, --set key=value (repeatable).
Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, NumericalError
from .experiments import ExperimentSpec, ResultRow, ResultTable, run_experiment
from .scenario_model import ScenarioData, read_scenario_csv

RESULT_HEADER = ["experiment", "param_name", "param_value", "quantity", "value"]
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    exit_code = EXIT_USAGE


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    out_dir: Path
    seed: int = 0
    scenarios: Path | None = None
    figure: str | None = None
    overrides: dict[str, str] = field(default_factory=dict)

    def experiment_specs(self) -> list[ExperimentSpec]:
        """One spec per experiment this run performs."""
        if self.subcommand == "stock":
            if self.figure:
                names = [self.figure]
            elif "lambdas" in self.overrides and "," not in self.overrides["lambdas"]:
                names = ["stock"]
            else:
                names = ["fig1", "fig2", "fig3", "fig4"]
        elif self.subcommand == "divest":
            names = [self.figure or "fig5"]
        else:
            names = [self.subcommand]
        base = dict(self.overrides)
        if self.scenarios is not None:
            base["scenarios"] = str(self.scenarios)
        return [ExperimentSpec(n, seed=self.seed).with_overrides(base) for n in names]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _seed(raw: str) -> int:
    v = int(raw)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ambistop", description="Optimal stopping under scenario ambiguity.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--seed", type=_seed, default=0)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a setting")

    p = sub.add_parser("stock", help="stock selling example")
    common(p)
    p.add_argument("--figure", choices=["fig1", "fig2", "fig3", "fig4"])
    p.add_argument("--lambda", dest="lam", type=float, help="single ambiguity parameter")
    p.add_argument("--sigma", type=float, help="volatility")

    p = sub.add_parser("divest", help="plant closure example")
    common(p)
    p.add_argument("--scenarios", required=True, type=Path)
    p.add_argument("--figure", choices=["fig5", "fig6"])

    p = sub.add_parser("minimax-check", help="saddle-point certification on small trees")
    common(p)
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--instances", type=int)

    p = sub.add_parser("filter-sim", help="posterior diagnostics")
    common(p)
    p.add_argument("--scenarios", type=Path)
    return parser


def parse_args(argv) -> RunConfig:
    args = _build_parser().parse_args(list(argv))
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if getattr(args, "lam", None) is not None:
        overrides["lambdas"] = repr(args.lam)
    if getattr(args, "sigma", None) is not None:
        overrides["sigma"] = repr(args.sigma)
    if getattr(args, "grid_step", None) is not None:
        overrides["grid_step"] = repr(args.grid_step)
    if getattr(args, "instances", None) is not None:
        overrides["n_instances"] = str(args.instances)
    cfg = RunConfig(
        subcommand=args.subcommand,
        out_dir=Path(args.out),
        seed=args.seed,
        scenarios=getattr(args, "scenarios", None),
        figure=getattr(args, "figure", None),
        overrides=overrides,
    )
    try:
        cfg.experiment_specs()
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad setting: {exc}") from None
    return cfg


def load_scenarios(path) -> ScenarioData:
    return read_scenario_csv(path)


# -- output ------------------------------------------------------------------------


def fmt_value(x: float) -> str:
    return format(float(x), ".17g")


def table_to_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for r in table.rows:
        w.writerow([r.experiment, r.param_name, r.param_value, r.quantity, fmt_value(r.value)])
    return buf.getvalue()


def read_results(path) -> ResultTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != RESULT_HEADER:
        raise DataError(f"{path}: not a results file")
    name = Path(path).stem
    table = ResultTable(name)
    for r in rows[1:]:
        table.rows.append(ResultRow(r[0], r[1], r[2], r[3], float(r[4])))
    return table


def _series(table: ResultTable):
    spec = table.plot
    out: dict[str, list[tuple[float, float]]] = {}
    for r in table.select(spec.quantity):
        params = dict(zip(r.param_name.split("|"), r.param_value.split("|")))
        if spec.x not in params:
            continue
        try:
            x = float(params[spec.x])
        except ValueError:
            continue
        key = params.get(spec.series, "") if spec.series else ""
        out.setdefault(key, []).append((x, r.value))
    return {k: sorted(v) for k, v in out.items()}


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def table_to_svg(table: ResultTable, width: int = 640, height: int = 400) -> str | None:
    """A plain polyline chart of the table's plot spec, or None if nothing to draw."""
    if table.plot is None:
        return None
    series = _series(table)
    pts = [pt for v in series.values() for pt in v if math.isfinite(pt[1])]
    if not pts:
        return None
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 70, 130, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + (1 - (y - y0) / (y1 - y0)) * ph

    spec = table.plot
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{_esc(spec.title or table.experiment)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{_esc(spec.x)}</text>',
        f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {mt + ph / 2:.1f})">{_esc(spec.quantity)}</text>',
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{sx(fx):.1f}" y="{mt + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{fx:.4g}</text>')
        out.append(f'<text x="{ml - 6}" y="{sy(fy) + 3:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">{fy:.4g}</text>')
    for k, (key, pts_k) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts_k if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{coords}"/>')
        if key:
            ly = mt + 14 + 16 * k
            out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 28}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{ml + pw + 32}" y="{ly}" font-family="sans-serif" font-size="11">{_esc(spec.series)}={_esc(key)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_results(table: ResultTable, out_dir) -> list[Path]:
    """Write ``<experiment>.csv`` and, for plotted sweeps, ``<experiment>.svg``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    path = out_dir / f"{table.experiment}.csv"
    path.write_bytes(table_to_csv(table).encode("utf-8"))
    written.append(path)
    svg = table_to_svg(table)
    if svg is not None:
        path = out_dir / f"{table.experiment}.svg"
        path.write_bytes(svg.encode("utf-8"))
        written.append(path)
    return written


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_args(argv)
        for spec in cfg.experiment_specs():
            for table in run_experiment(spec):
                for path in emit_results(table, cfg.out_dir):
                    print(path)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
