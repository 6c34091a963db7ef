"""Command-line entry point: ``finq {portfolio,crash,benchmark,gen-instance}``."""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from finq import crash as cn
from finq import qubo as qc
from finq.benchmark import report_text, run_benchmark, write_report
from finq.config import BenchmarkConfig, dump_config, load_config, resolve_seed, solver_overrides, split_list
from finq.errors import DataError, FinqError, ParameterError
from finq.portfolio import (
    SIZES,
    DegenerateSharpeWarning,
    build_qubo,
    cost_full,
    decode,
    generate_instance,
    problem_from_market,
    read_prices,
    sharpe_ratio,
    write_prices,
    write_trajectory,
)
from finq.reduction import cluster_assets, coarse_solve_then_refine, dendrogram_text, fragment_and_recombine
from finq.solvers import BACKENDS, SolverHandle, solve

ingest_prices = read_prices


# --- crash scenario -------------------------------------------------------------


@dataclass
class CrashReport:
    network: cn.FinancialNetwork
    before: cn.EquilibriumResult
    after: cn.EquilibriumResult
    newly_failed: list[int]
    solver: str

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["inst", "v_before", "failed_before", "v_after", "failed_after", "newly_failed"])
        for i, name in enumerate(self.network.institutions):
            w.writerow([
                name,
                repr(float(self.before.v[i])),
                int(self.before.failed[i]),
                repr(float(self.after.v[i])),
                int(self.after.failed[i]),
                int(i in self.newly_failed),
            ])
        return buf.getvalue()

    def to_text(self) -> str:
        names = self.network.institutions
        lines = [f"solver: {self.solver}"]
        for label, eq in (("before", self.before), ("after", self.after)):
            state = "converged" if eq.converged else "not converged"
            lines.append(f"{label}: residual {eq.residual:.3e}, iterations {eq.iterations} ({state})")
            for i, name in enumerate(names):
                flag = "FAILED" if eq.failed[i] else "ok"
                lines.append(f"  {name:<12} v = {eq.v[i]:>12.6g}  v_crit = {self.network.v_crit[i]:>10.6g}  {flag}")
        if self.newly_failed:
            lines.append("new failures: " + ", ".join(names[i] for i in self.newly_failed))
        else:
            lines.append("no new failures")
        return "\n".join(lines) + "\n"


def run_crash_scenario(
    institutions,
    ownership,
    prices,
    dependency=None,
    perturbation=None,
    solver: str = "fixed-point",
    num_bits: int = 2,
    tol: float = 1e-10,
    max_iter: int = 1000,
    seed: int = 0,
    overrides: dict | None = None,
) -> CrashReport:
    net = cn.load_network(institutions, ownership, prices, dependency)
    delta = np.zeros(net.n_assets) if perturbation is None else cn.load_perturbation(perturbation, net)
    handle = None
    if solver != "fixed-point":
        handle = SolverHandle(solver, (overrides or {}).get(solver, {}), seed=seed)
    before, after, newly = cn.shock_and_detect(net, delta, handle, num_bits, tol, max_iter)
    return CrashReport(net, before, after, newly, solver)


# --- argument parsing -------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file with [problem], [benchmark] and per-solver sections")
    p.add_argument("--seed", type=int, help="global seed (fallback: config, then FINQ_SEED, then 0)")
    p.add_argument("--show-config", action="store_true", help="print the effective configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("portfolio", help="optimise one portfolio instance")
    _add_common(p)
    p.add_argument("--solver", default="sa", help=f"one of {', '.join(BACKENDS)}")
    p.add_argument("--size", choices=list(SIZES), help="benchmark size label (default from config)")
    p.add_argument("--data", type=Path, help="prices CSV; dimensions come from --size or [problem]")
    p.add_argument("--report", type=Path, help="directory for report.csv, report.txt and trajectories")
    p.add_argument("--clusters", type=int, help="solve a clustered problem first, then refine")
    p.add_argument("--fragment-candidates", type=int, metavar="M", help="per-period candidates for recombination")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for restarts and per-period solves")

    c = sub.add_parser("crash", help="equilibrium and failures after a price shock")
    _add_common(c)
    c.add_argument("--institutions", type=Path, required=True)
    c.add_argument("--ownership", type=Path, required=True)
    c.add_argument("--prices", type=Path, required=True)
    c.add_argument("--dependency", type=Path)
    c.add_argument("--perturbation", type=Path)
    c.add_argument("--solver", default="fixed-point", help=f"fixed-point or one of {', '.join(BACKENDS)}")
    c.add_argument("--bits", type=int, default=2, help="bits per market value on the QUBO route")
    c.add_argument("--tol", type=float, default=1e-10)
    c.add_argument("--max-iter", type=int, default=1000)
    c.add_argument("--report", type=Path)

    b = sub.add_parser("benchmark", help="run a size x solver x seed grid")
    _add_common(b)
    b.add_argument("--sizes", help="comma-separated size labels")
    b.add_argument("--solvers", help="comma-separated solver names")
    b.add_argument("--seeds", help="comma-separated integer seeds")
    b.add_argument("--output", type=Path, help="report directory")
    b.add_argument("--jobs", type=int, help="parallel benchmark cells")
    b.add_argument("--clusters", type=int)
    b.add_argument("--fragment-candidates", type=int, metavar="M")

    g = sub.add_parser("gen-instance", help="write a synthetic instance to disk")
    _add_common(g)
    g.add_argument("--kind", choices=("portfolio", "crash"), default="portfolio")
    g.add_argument("--size", choices=list(SIZES), default="XS")
    g.add_argument("--institutions", type=int, default=3, help="network size for --kind crash")
    g.add_argument("--output", type=Path, required=True)
    return parser


# --- subcommands ---------------------------------------------------------------


def _cmd_portfolio(args, cfg, out) -> int:
    seed = resolve_seed(args.seed, cfg)
    if args.solver not in BACKENDS:
        raise ParameterError(f"unknown solver {args.solver!r}; valid: {', '.join(BACKENDS)}")
    pc = cfg["problem"]
    size = args.size or pc["size"]
    if args.data is not None:
        data = read_prices(args.data)
        spec = SIZES.get(size)
        n_steps = pc["n_steps"] or (spec.n_steps if spec else None)
        K = pc["K"] or (spec.budget if spec else None)
        N_q = pc["N_q"] or (spec.n_bits if spec else None)
        if None in (n_steps, K, N_q):
            raise ParameterError("with --data, set n_steps, K and N_q in [problem] or pass --size")
        problem = problem_from_market(data, n_steps, K, N_q, pc["gamma"], pc["lambda"], pc["K_prime"], pc["rho"], pc["window"])
        if data.n_assets != problem.n_assets:
            raise DataError("price file and problem disagree on the number of assets")
        label = args.data.stem
    else:
        if size not in SIZES:
            raise ParameterError(f"unknown size {size!r}; valid: {', '.join(SIZES)}")
        data, problem = generate_instance(size, seed, pc["gamma"], pc["lambda"], pc["rho"], pc["window"])
        label = size
    handle = SolverHandle(args.solver, solver_overrides(cfg)[args.solver], seed=seed, workers=args.jobs)
    extra = ""
    start = time.perf_counter()
    if args.clusters:
        clustering = cluster_assets(data, args.clusters)
        traj = coarse_solve_then_refine(problem, clustering, handle)
        extra = dendrogram_text(clustering, data.assets)
    elif args.fragment_candidates:
        traj = fragment_and_recombine(problem, handle, args.fragment_candidates)
    else:
        traj = decode(solve(build_qubo(problem, pc["max_qubits"]), handle).best_bits, problem)
    wall = (time.perf_counter() - start) * 1e3
    cost = cost_full(problem, traj)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always", DegenerateSharpeWarning)
        sharpe = sharpe_ratio(traj, data)
    text = (
        f"solver {args.solver}  instance {label}  qubits {problem.n_steps * problem.n_assets * problem.N_q}\n"
        f"cost {cost:.10g}  sharpe {sharpe:.4f}  feasible {traj.is_feasible(problem.K_prime)}  wall_ms {wall:.1f}\n"
        "holdings (rows = periods):\n" + "\n".join("  " + " ".join(f"{v:>3d}" for v in row) for row in traj.holdings) + "\n"
    )
    out.write(text)
    if args.report:
        try:
            args.report.mkdir(parents=True, exist_ok=True)
            with open(args.report / "report.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["solver", "instance", "seed", "cost", "sharpe"])
                w.writerow([args.solver, label, seed, repr(cost), repr(sharpe)])
            (args.report / "report.txt").write_text(text + extra)
            (args.report / "trajectories").mkdir(exist_ok=True)
            write_trajectory(traj, data.assets, args.report / "trajectories" / f"{label}_{args.solver}.csv")
            if extra:
                (args.report / "dendrogram.txt").write_text(extra)
        except OSError as exc:
            raise DataError(f"cannot write report to {args.report}: {exc}") from None
    return 0


def _cmd_crash(args, cfg, out) -> int:
    if args.solver != "fixed-point" and args.solver not in BACKENDS:
        raise ParameterError(f"unknown solver {args.solver!r}; valid: fixed-point, {', '.join(BACKENDS)}")
    rep = run_crash_scenario(
        args.institutions, args.ownership, args.prices, args.dependency, args.perturbation,
        args.solver, args.bits, args.tol, args.max_iter, resolve_seed(args.seed, cfg), solver_overrides(cfg),
    )
    out.write(rep.to_text())
    if args.report:
        try:
            args.report.mkdir(parents=True, exist_ok=True)
            (args.report / "crash.csv").write_text(rep.to_csv())
            (args.report / "crash.txt").write_text(rep.to_text())
        except OSError as exc:
            raise DataError(f"cannot write report to {args.report}: {exc}") from None
    return 0


def _cmd_benchmark(args, cfg, out) -> int:
    cli = {
        "sizes": split_list(args.sizes) if args.sizes else None,
        "solvers": split_list(args.solvers) if args.solvers is not None else None,
        "seeds": split_list(args.seeds) if args.seeds else None,
        "output": args.output,
        "jobs": args.jobs,
        "clusters": args.clusters,
        "fragment_candidates": args.fragment_candidates,
    }
    if cli["seeds"] is None and args.seed is not None:
        cli["seeds"] = (str(args.seed),)
    config = BenchmarkConfig.from_config(cfg, **cli)
    report = run_benchmark(config)
    path = write_report(report, config)
    out.write(report_text(report))
    out.write(f"report written to {path}\n")
    return 0


def _cmd_gen_instance(args, cfg, out) -> int:
    seed = resolve_seed(args.seed, cfg)
    outdir = args.output
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        if args.kind == "portfolio":
            pc = cfg["problem"]
            data, problem = generate_instance(args.size, seed, pc["gamma"], pc["lambda"], pc["rho"], pc["window"])
            write_prices(data, outdir / "prices.csv")
            qc.save(build_qubo(problem), outdir / "qubo.txt")
            cfg = {**cfg, "problem": {**cfg["problem"], "size": args.size, "seed": seed}}
            (outdir / "problem.ini").write_text(dump_config(cfg))
            out.write(f"{args.size} instance (seed {seed}) written to {outdir}\n")
        else:
            net = cn.random_network(np.random.default_rng(seed), args.institutions)
            cn.save_network(net, outdir)
            out.write(f"{args.institutions}-institution network (seed {seed}) written to {outdir}\n")
    except OSError as exc:
        raise DataError(f"cannot write to {outdir}: {exc}") from None
    return 0


COMMANDS = {
    "portfolio": _cmd_portfolio,
    "crash": _cmd_crash,
    "benchmark": _cmd_benchmark,
    "gen-instance": _cmd_gen_instance,
}


def main(argv=None, out=None) -> int:
    """Run the CLI; returns the exit code (0 ok, 2 usage, 3 data, 4 capacity)."""
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if args.show_config:
            out.write(dump_config(cfg))
            return 0
        return COMMANDS[args.command](args, cfg, out)
    except FinqError as exc:
        print(f"finq: error: {exc}", file=sys.stderr)
        return exc.exit_code


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
