"""Command-line front end.

Subcommands: stability, solve, compare, table1, decay, vs-single-server,
simulate. Parameters are given either as an arrival probability (--lambda)
or as a load (--rho, converted in closed form given --a). Results are
emitted as CSV (default) or JSON with bit-stable formatting; the exit code
distinguishes usage errors (2), unstable parameter points (3), and numerical
failures (4).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import compensation, measures, oracle, psa, simulator
from .errors import GridError, NumericsError, RelayQError, StabilityError, UnsupportedParameterError
from .grids import ProbabilityGrid
from .model import ModelParams, is_stable, lambda_for_load, load

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNSTABLE = 3
EXIT_NUMERICAL = 4

OUTPUT_DIR_ENV = "RELAYQ_OUT_DIR"

_TABLE1_LOADS = (0.1, 0.4, 0.7, 0.9, 0.95)


class UsageError(RelayQError):
    pass


@dataclass(frozen=True)
class RunSpec:
    command: str
    lam: float | None = None
    rho: float | None = None
    a: float = 0.5
    method: str = "ca"
    epsilon: float = 1e-12
    G: float = 1.0
    seed: int = 0
    warmup: int = 10_000
    slots: int = 1_000_000
    reps: int = 10
    fmt: str = "csv"
    out: str | None = None


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _resolve_params(spec: RunSpec) -> ModelParams:
    if (spec.lam is None) == (spec.rho is None):
        raise UsageError("provide exactly one of --lambda or --rho")
    lam = spec.lam if spec.lam is not None else lambda_for_load(spec.rho, spec.a)
    try:
        return ModelParams(lam=lam, a=spec.a)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _grid_rows(grid: ProbabilityGrid) -> list[dict]:
    vals = grid.clipped().values
    return [
        {"k": k, "l": l, "prob": float(vals[k, l])}
        for k in range(vals.shape[0])
        for l in range(vals.shape[1])
    ]


def _measure_rows(report: measures.MeasureReport) -> list[dict]:
    rows = [
        {"name": "e_qsum", "value": report.e_qsum, "ci_halfwidth": None},
        {"name": "e_sojourn", "value": report.e_sojourn, "ci_halfwidth": None},
        {"name": "correlation", "value": report.correlation, "ci_halfwidth": None},
    ]
    if report.decay_ratio is not None:
        rows.append({"name": "decay_ratio", "value": report.decay_ratio, "ci_halfwidth": None})
    if report.marginal_min_decay is not None:
        rows.append(
            {"name": "marginal_min_decay", "value": report.marginal_min_decay, "ci_halfwidth": None}
        )
    return rows


def _psa_reporting_grid(solution) -> ProbabilityGrid:
    # a non-converged reconstruction carries round-off (or divergence) mass;
    # measures are reported from the clipped, renormalized grid
    return solution.grid.clipped().normalized()


def _solve_grid(params: ModelParams, spec: RunSpec) -> ProbabilityGrid:
    if spec.method == "ca":
        return compensation.solve(params, epsilon=spec.epsilon).grid
    if spec.method == "psa":
        return _psa_reporting_grid(psa.solve(params, G=spec.G, epsilon=spec.epsilon))
    if spec.method == "oracle":
        T = oracle.choose_truncation(params, spec.epsilon)
        return oracle.stationary(oracle.build(params, T))
    raise UsageError(f"unknown method {spec.method!r}")


def run(spec: RunSpec) -> dict:
    """Execute a RunSpec; returns {"tables": {name: [row dicts]}}."""
    if spec.command == "stability":
        params = _resolve_params(spec)
        rep = is_stable(params)
        rows = [
            {
                "lambda": params.lam,
                "a": params.a,
                "load": load(params),
                "margin": rep.margin,
                "verdict": "stable" if rep.stable else "unstable",
            }
        ]
        return {"tables": {"stability": rows}}

    if spec.command == "solve":
        params = _resolve_params(spec)
        if spec.method == "psa" and abs(params.a - 0.5) > 1e-15:
            raise UsageError("method=psa supports a = 1/2 only")
        if spec.method == "sim":
            sim = simulator.simulate(
                params,
                simulator.SimConfig(
                    seed=spec.seed,
                    warmup_slots=spec.warmup,
                    measure_slots=spec.slots,
                    replications=spec.reps,
                ),
            )
            rows = [
                {"name": "e_qsum", "value": sim.e_qsum, "ci_halfwidth": sim.e_qsum_ci},
                {"name": "e_sojourn", "value": sim.e_sojourn, "ci_halfwidth": sim.e_sojourn_ci},
                {"name": "correlation", "value": sim.correlation, "ci_halfwidth": sim.correlation_ci},
                {"name": "overflow_mass", "value": sim.overflow_mass, "ci_halfwidth": None},
            ]
            return {"tables": {"measures": rows, "grid": _grid_rows(sim.empirical)}}
        grid = _solve_grid(params, spec)
        report = measures.moments_from_transformed(grid, params)
        return {"tables": {"measures": _measure_rows(report), "grid": _grid_rows(grid)}}

    if spec.command == "compare":
        params = _resolve_params(spec)
        if abs(params.a - 0.5) > 1e-15:
            raise UsageError("compare runs the power-series method and needs a = 1/2")
        ca = compensation.solve(params, epsilon=spec.epsilon)
        ps = psa.solve(params, G=spec.G, epsilon=spec.epsilon)
        ps_grid = _psa_reporting_grid(ps)
        T_or = oracle.choose_truncation(params, min(spec.epsilon, 1e-10))
        orc = oracle.stationary(oracle.build(params, T_or))

        def maxnorm(g1: ProbabilityGrid, g2: ProbabilityGrid) -> float:
            m = min(g1.T, g2.T)
            return float(np.max(np.abs(g1.values[: m + 1, : m + 1] - g2.values[: m + 1, : m + 1])))

        m_ca = measures.moments_from_transformed(ca.grid, params)
        m_ps = measures.moments_from_transformed(ps_grid, params)
        rows = [
            {"name": "maxnorm_ca_oracle", "value": maxnorm(ca.grid, orc), "ci_halfwidth": None},
            {"name": "maxnorm_psa_oracle", "value": maxnorm(ps_grid, orc), "ci_halfwidth": None},
            {"name": "maxnorm_ca_psa", "value": maxnorm(ca.grid, ps_grid), "ci_halfwidth": None},
            {"name": "abs_diff_e_sojourn", "value": abs(m_ca.e_sojourn - m_ps.e_sojourn), "ci_halfwidth": None},
            {
                "name": "abs_diff_correlation",
                "value": abs((m_ca.correlation or 0.0) - (m_ps.correlation or 0.0)),
                "ci_halfwidth": None,
            },
        ]
        return {"tables": {"compare": rows}}

    if spec.command == "table1":
        rows = []
        for rho in _TABLE1_LOADS:
            params = ModelParams(lam=lambda_for_load(rho, 0.5), a=0.5)
            ca = compensation.solve(params, epsilon=spec.epsilon)
            m_ca = measures.moments_from_transformed(ca.grid, params)
            ps = psa.solve(params, G=spec.G, epsilon=spec.epsilon)
            m_ps = measures.moments_from_transformed(_psa_reporting_grid(ps), params)
            rows.append(
                {
                    "rho": rho,
                    "e_sojourn_ca": m_ca.e_sojourn,
                    "e_sojourn_psa": m_ps.e_sojourn,
                    "abs_diff_e_sojourn": abs(m_ca.e_sojourn - m_ps.e_sojourn),
                    "correlation_ca": m_ca.correlation,
                    "correlation_psa": m_ps.correlation,
                    "abs_diff_correlation": abs(m_ca.correlation - m_ps.correlation),
                    "psa_converged": ps.diagnostics.converged,
                }
            )
        return {"tables": {"table1": rows}}

    if spec.command == "decay":
        params = _resolve_params(spec)
        # decay estimates probe the tail, so guarantee a deep enough grid
        result = compensation.solve(params, epsilon=spec.epsilon, T_min=24)
        diag = measures.decay_diagnostics(result.grid, params)
        rows = [{"name": "expected_rho_squared", "l": None, "value": diag.expected}]
        for l, est in sorted(diag.fixed_l_estimates.items()):
            rows.append({"name": "fixed_l_ratio", "l": l, "value": est})
        rows.append({"name": "marginal_min_ratio", "l": None, "value": diag.marginal_estimate})
        return {"tables": {"decay": rows}}

    if spec.command == "vs-single-server":
        if spec.lam is None:
            raise UsageError("vs-single-server needs --lambda")
        a_grid = tuple(np.round(np.arange(0.05, 1.0, 0.05), 10))
        comp = measures.single_server_comparison(spec.lam, a_grid, epsilon=spec.epsilon)
        rows = [
            {
                "a": r.a,
                "single_stable": r.single_stable,
                "jsrq_stable": r.jsrq_stable,
                "single_mean_queue": r.single_mean_queue,
                "jsrq_mean_total": r.jsrq_mean_total,
            }
            for r in comp.rows
        ]
        head = [{"name": "a_minus", "value": comp.a_minus}, {"name": "a_plus", "value": comp.a_plus}]
        return {"tables": {"stability_interval": head, "vs_single_server": rows}}

    if spec.command == "simulate":
        params = _resolve_params(spec)
        sim = simulator.simulate(
            params,
            simulator.SimConfig(
                seed=spec.seed,
                warmup_slots=spec.warmup,
                measure_slots=spec.slots,
                replications=spec.reps,
            ),
        )
        rows = [
            {"name": "e_qsum", "value": sim.e_qsum, "ci_halfwidth": sim.e_qsum_ci},
            {"name": "e_sojourn", "value": sim.e_sojourn, "ci_halfwidth": sim.e_sojourn_ci},
            {"name": "correlation", "value": sim.correlation, "ci_halfwidth": sim.correlation_ci},
            {"name": "overflow_mass", "value": sim.overflow_mass, "ci_halfwidth": None},
        ]
        return {"tables": {"measures": rows, "grid": _grid_rows(sim.empirical)}}

    raise UsageError(f"unknown command {spec.command!r}")


def _to_csv(artifact: dict) -> str:
    chunks = []
    for name, rows in artifact["tables"].items():
        if not rows:
            continue
        header = list(rows[0].keys())
        lines = [f"# table: {name}", ",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(row[h]) for h in header))
        chunks.append("\n".join(lines))
    return "\n".join(chunks) + "\n"


def _to_json(artifact: dict) -> str:
    def convert(obj):
        if isinstance(obj, dict):
            return {k: convert(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [convert(v) for v in obj]
        if isinstance(obj, (np.floating, float)):
            return float(obj)
        if isinstance(obj, (np.integer, int)):
            return int(obj)
        return obj

    return json.dumps(convert(artifact["tables"]), indent=2, sort_keys=False) + "\n"


def emit(artifact: dict, spec: RunSpec) -> str:
    text = _to_csv(artifact) if spec.fmt == "csv" else _to_json(artifact)
    if spec.out:
        path = spec.out
        base_dir = os.environ.get(OUTPUT_DIR_ENV)
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relayq",
        description="Equilibrium analysis of a two-relay random-access network "
        "with join-the-shortest-queue routing and collisions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *, needs_params=True, needs_method=False, needs_sim=False):
        if needs_params:
            p.add_argument("--lambda", dest="lam", type=float, default=None,
                           help="arrival probability per slot")
            p.add_argument("--rho", type=float, default=None,
                           help="system load (alternative to --lambda)")
            p.add_argument("--a", type=float, default=0.5,
                           help="per-relay transmission attempt probability")
        if needs_method:
            p.add_argument("--method", choices=("ca", "psa", "oracle", "sim"), default="ca")
        p.add_argument("--epsilon", type=float, default=1e-12,
                       help="precision target (clamped at 1e-12)")
        p.add_argument("--G", type=float, default=1.0, help="series acceleration parameter")
        if needs_sim:
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--warmup", type=int, default=10_000)
            p.add_argument("--slots", type=int, default=1_000_000)
            p.add_argument("--reps", type=int, default=10)
        p.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")
        p.add_argument("--out", type=str, default=None,
                       help=f"output path (relative paths join ${OUTPUT_DIR_ENV} when set)")

    add_common(sub.add_parser("stability", help="load, margin and verdict"))
    add_common(sub.add_parser("solve", help="equilibrium grid plus measures"),
               needs_method=True, needs_sim=True)
    add_common(sub.add_parser("compare", help="cross-method distances"))
    add_common(sub.add_parser("table1", help="sojourn/correlation sweep over loads"),
               needs_params=False)
    add_common(sub.add_parser("decay", help="geometric decay diagnostics"))
    add_common(sub.add_parser("vs-single-server", help="two relays vs one server"))
    add_common(sub.add_parser("simulate", help="Monte Carlo estimates"), needs_sim=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    spec = RunSpec(
        command=args.command,
        lam=getattr(args, "lam", None),
        rho=getattr(args, "rho", None),
        a=getattr(args, "a", 0.5),
        method=getattr(args, "method", "ca"),
        epsilon=args.epsilon,
        G=args.G,
        seed=getattr(args, "seed", 0),
        warmup=getattr(args, "warmup", 10_000),
        slots=getattr(args, "slots", 1_000_000),
        reps=getattr(args, "reps", 10),
        fmt=args.fmt,
        out=args.out,
    )
    try:
        artifact = run(spec)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnsupportedParameterError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StabilityError as exc:
        print(f"stability error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (NumericsError, GridError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    text = emit(artifact, spec)
    if not spec.out:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
