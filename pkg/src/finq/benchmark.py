"""Benchmark orchestration over (size, solver, seed) cells and report emission."""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import finq
from finq.config import BenchmarkConfig
from finq.errors import CapacityError, DataError
from finq.portfolio import (
    PERIODS_PER_YEAR,
    SIZES,
    DegenerateSharpeWarning,
    Trajectory,
    build_qubo,
    cost_full,
    count_qubits,
    decode,
    generate_instance,
    sharpe_ratio,
    write_trajectory,
)
from finq.reduction import cluster_assets, coarse_solve_then_refine, fragment_and_recombine
from finq.solvers import SolverHandle, solve

CSV_COLUMNS = ("solver", "size", "seed", "method", "qubits", "status", "cost", "sharpe")
WALL_NOTE = "wall time: monotonic clock around the solver call only, instance generation excluded"
SHARPE_NOTE = f"Sharpe ratio: mean/std of per-period returns x sqrt({PERIODS_PER_YEAR}), risk-free rate 0, std with T-1 denominator"


@dataclass
class BenchmarkRow:
    solver: str
    size: str
    seed: int
    method: str
    qubits: int
    status: str
    cost: float | None = None
    sharpe: float | None = None
    wall_ms: float | None = None
    holdings: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    note: str = ""

    @property
    def key(self) -> str:
        return f"{self.size}_{self.solver}_{self.method}_seed{self.seed}"


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow]
    metadata: dict

    def revalidate(self, config: BenchmarkConfig, tol: float = 1e-9) -> list[str]:
        """Keys of rows whose stored trajectory does not re-score to the stored cost."""
        bad = []
        for row in self.rows:
            if row.status != "ok":
                continue
            _, problem = _instance(config, row.size, row.seed)
            c = cost_full(problem, Trajectory(row.holdings, problem.K))
            if abs(c - row.cost) > tol * max(1.0, abs(c)):
                bad.append(row.key)
        return bad


def _instance(config: BenchmarkConfig, size: str, seed: int):
    return generate_instance(size, seed, config.gamma, config.lambda_tc, config.rho, config.window)


def _method(config: BenchmarkConfig) -> str:
    if config.clusters:
        return f"cluster{config.clusters}"
    if config.fragment_candidates:
        return f"fragment{config.fragment_candidates}"
    return "direct"


def run_cell(config: BenchmarkConfig, size: str, solver: str, seed: int) -> BenchmarkRow:
    data, problem = _instance(config, size, seed)
    handle = SolverHandle(solver, config.overrides.get(solver, {}), seed=seed)
    row = BenchmarkRow(solver, size, seed, _method(config), count_qubits(problem), "ok")
    try:
        start = time.perf_counter()
        if config.clusters:
            info: dict = {}
            clustering = cluster_assets(data, min(config.clusters, problem.n_assets))
            traj = coarse_solve_then_refine(problem, clustering, handle, info)
            diagnostics = {"reduction": info, "clusters": clustering.assignments.tolist()}
        elif config.fragment_candidates:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                traj = fragment_and_recombine(problem, handle, config.fragment_candidates)
            diagnostics = {"warnings": [str(w.message) for w in caught]}
        else:
            res = solve(build_qubo(problem), handle)
            traj = decode(res.best_bits, problem)
            diagnostics = res.diagnostics
        row.wall_ms = (time.perf_counter() - start) * 1e3
    except CapacityError as exc:
        row.status = "capacity"
        row.note = str(exc)
        return row
    row.holdings = np.array(traj.holdings)
    row.cost = cost_full(problem, traj)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateSharpeWarning)
        row.sharpe = sharpe_ratio(traj, data)
    if caught:
        row.note = "degenerate Sharpe (zero volatility)"
    row.diagnostics = {"feasible": traj.is_feasible(problem.K_prime), "solver": diagnostics}
    return row


def run_benchmark(config: BenchmarkConfig) -> BenchmarkReport:
    """Run every (size, solver, seed) cell; capacity refusals become ``-`` cells."""
    cells = [(size, solver, seed) for size in config.sizes for solver in config.solvers for seed in config.seeds]
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(lambda c: run_cell(config, *c), cells))
    else:
        rows = [run_cell(config, *c) for c in cells]
    metadata = {
        "config_hash": config.hash(),
        "config": config.canonical(),
        "versions": _versions(),
        "notes": [WALL_NOTE, SHARPE_NOTE, "exhaustive search is capped at 30 variables, which admits size M"],
    }
    return BenchmarkReport(rows, metadata)


def _versions() -> dict:
    import numba
    import scipy

    return {"finq": finq.__version__, "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _num(x) -> str:
    if x is None:
        return "-"
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _clean(o):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(float(o)):
        return _num(o)
    if isinstance(o, np.generic):
        return o.item()
    return o


def report_csv(report: BenchmarkReport, extra_columns=()) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*CSV_COLUMNS, *extra_columns])
    for r in report.rows:
        w.writerow([r.solver, r.size, r.seed, r.method, r.qubits, r.status, _num(r.cost), _num(r.sharpe), *[""] * len(extra_columns)])
    return buf.getvalue()


def _table(header, rows) -> list[str]:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = "  ".join(f"{{:<{w}}}" if i < 2 else f"{{:>{w}}}" for i, w in enumerate(widths))
    out = [fmt.format(*header), "  ".join("-" * w for w in widths)]
    out += [fmt.format(*map(str, r)) for r in rows]
    return out


def report_text(report: BenchmarkReport) -> str:
    def short(x, spec):
        if x is None:
            return "-"
        return format(x, spec) if math.isfinite(x) else _num(x)

    header = ("solver", "size", "seed", "method", "qubits", "cost", "sharpe", "wall_ms")
    rows = [
        (r.solver, r.size, r.seed, r.method, r.qubits, short(r.cost, ".6g"), short(r.sharpe, ".3f"), short(r.wall_ms, ".1f"))
        for r in report.rows
    ]
    lines = _table(header, rows)
    # Sharpe pivot: solvers down, sizes across, mean over seeds
    sizes = [s for s in SIZES if any(r.size == s for r in report.rows)]
    solvers = list(dict.fromkeys(r.solver for r in report.rows))
    pivot = []
    for sv in solvers:
        cells = []
        for sz in sizes:
            vals = [r.sharpe for r in report.rows if r.solver == sv and r.size == sz and r.status == "ok"]
            vals = [v for v in vals if v is not None and math.isfinite(v)]
            cells.append(f"{np.mean(vals):.2f}" if vals else "-")
        pivot.append((sv, *cells))
    lines += ["", "Sharpe ratio by solver and size (mean over seeds)"]
    lines += _table(("solver", *sizes), pivot)
    notes = [r for r in report.rows if r.note]
    if notes:
        lines.append("")
        lines += [f"{r.key}: {r.note}" for r in notes]
    lines += ["", *report.metadata["notes"], f"config hash: {report.metadata['config_hash']}"]
    return "\n".join(lines) + "\n"


def write_report(report: BenchmarkReport, config: BenchmarkConfig) -> Path:
    out = Path(config.output)
    try:
        (out / "trajectories").mkdir(parents=True, exist_ok=True)
        (out / "diagnostics").mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report_csv(report, config.extra_columns))
        (out / "report.txt").write_text(report_text(report))
        (out / "metadata.json").write_text(json.dumps(_clean(report.metadata), indent=2, sort_keys=True) + "\n")
        for r in report.rows:
            if r.holdings is not None:
                assets = [f"ASSET{i:02d}" for i in range(r.holdings.shape[1])]
                write_trajectory(Trajectory(r.holdings), assets, out / "trajectories" / f"{r.key}.csv")
            # wall time lives in report.txt only, so these files stay byte-identical across reruns
            payload = {"key": r.key, "status": r.status, "note": r.note, **r.diagnostics}
            (out / "diagnostics" / f"{r.key}.json").write_text(
                json.dumps(_clean(payload), indent=1, sort_keys=True, default=_json_default) + "\n"
            )
    except OSError as exc:
        raise DataError(f"cannot write report to {out}: {exc}") from None
    return out
