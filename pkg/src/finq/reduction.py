"""Dimensional reduction: correlation clustering of assets and per-period fragmentation."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import squareform

from finq.errors import DimensionError, ParameterError
from finq.portfolio import MarketData, PortfolioProblem, Trajectory, build_qubo, cost_full, decode
from finq.solvers import SolverHandle, solve
from finq.solvers.base import child_seeds


class SparsePoolWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AssetClustering:
    """``assignments[n]`` is the cluster of asset ``n``; cluster ids follow first appearance."""

    assignments: np.ndarray
    representatives: tuple[np.ndarray, ...]
    n_clusters: int
    diagnostics: dict = field(default_factory=dict, compare=False)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == c)

    def weight_matrix(self) -> np.ndarray:
        """``W`` with ``W[n, c]`` the weight of asset ``n`` in cluster ``c``'s index."""
        W = np.zeros((self.assignments.size, self.n_clusters))
        for c, rep in enumerate(self.representatives):
            W[self.members(c), c] = rep
        return W


def correlation_distance(data: MarketData) -> tuple[np.ndarray, list[int]]:
    """``sqrt(2 (1 - corr))`` on log-returns; zero-variance assets get correlation 0 to all others."""
    r = np.diff(np.log(data.prices), axis=0)
    std = r.std(axis=0)
    flat = [int(i) for i in np.flatnonzero(std == 0)]
    z = np.zeros_like(r)
    live = std > 0
    z[:, live] = (r[:, live] - r[:, live].mean(axis=0)) / std[live]
    corr = z.T @ z / r.shape[0]
    np.fill_diagonal(corr, 1.0)
    d = np.sqrt(np.clip(2.0 * (1.0 - corr), 0.0, None))
    np.fill_diagonal(d, 0.0)
    return (d + d.T) / 2, flat


def cluster_assets(data: MarketData, n_clusters: int) -> AssetClustering:
    """Average-linkage agglomerative clustering cut at ``n_clusters``."""
    N = data.n_assets
    if not 1 <= n_clusters <= N:
        raise ParameterError(f"n_clusters must be in [1, {N}], got {n_clusters}")
    d, flat = correlation_distance(data)
    if N == 1:
        labels = np.zeros(1, dtype=int)
        Z = np.zeros((0, 4))
    else:
        Z = linkage(squareform(d, checks=False), method="average")
        labels = cut_tree(Z, n_clusters=n_clusters).ravel()
    # relabel by first appearance so ids do not depend on merge bookkeeping
    order = {}
    for lab in labels:
        order.setdefault(int(lab), len(order))
    assignments = np.array([order[int(lab)] for lab in labels])
    assignments.setflags(write=False)
    reps = []
    for c in range(n_clusters):
        k = int(np.sum(assignments == c))
        reps.append(np.full(k, 1.0 / k))
    diagnostics = {"zero_variance_assets": flat, "merges": [[int(a), int(b), float(h)] for a, b, h, _ in Z]}
    return AssetClustering(assignments, tuple(reps), n_clusters, diagnostics)


def dendrogram_text(clustering: AssetClustering, names=None) -> str:
    """One line per merge, in linkage order."""
    N = clustering.assignments.size
    names = list(names or [f"A{i}" for i in range(N)])
    label = {i: names[i] for i in range(N)}
    lines = []
    for k, (a, b, h) in enumerate(clustering.diagnostics.get("merges", [])):
        label[N + k] = f"({label[a]} {label[b]})"
        lines.append(f"{h:.6f}  {label[N + k]}")
    lines.append("clusters: " + ", ".join(f"{c}={[names[i] for i in clustering.members(c)]}" for c in range(clustering.n_clusters)))
    return "\n".join(lines) + "\n"


# --- coarse solve then refine ---------------------------------------------------


def coarse_problem(problem: PortfolioProblem, clustering: AssetClustering) -> PortfolioProblem:
    """Index-level problem: one synthetic asset per cluster with its representative weights."""
    if clustering.assignments.size != problem.n_assets:
        raise DimensionError("clustering does not cover the problem's assets")
    W = clustering.weight_matrix()
    lam = problem.lambda_vector @ (W**2)
    caps = [min(problem.K, len(clustering.members(c)) * problem.K_prime) for c in range(clustering.n_clusters)]
    n_q = max(problem.N_q, int(max(caps)).bit_length())
    return PortfolioProblem(
        mu=problem.mu @ W,
        sigma=np.einsum("nc,tnm,md->tcd", W, problem.sigma, W),
        gamma=problem.gamma,
        lambda_tc=lam,
        K=problem.K,
        N_q=n_q,
        rho=problem.rho,
    )


def largest_remainder(target: np.ndarray, total: int, caps: np.ndarray) -> np.ndarray:
    """Integer vector summing to ``total`` close to ``target``, each entry within ``caps``."""
    target = np.clip(np.asarray(target, dtype=float), 0.0, caps)
    units = np.minimum(np.floor(target + 1e-12).astype(np.int64), caps)
    rem = target - units
    # stable order: largest remainder first, lower index on ties
    order = sorted(range(target.size), key=lambda n: (-rem[n], n))
    short = total - int(units.sum())
    while short > 0:
        moved = False
        for n in order:
            if short == 0:
                break
            if units[n] < caps[n]:
                units[n] += 1
                short -= 1
                moved = True
        if not moved:
            raise ParameterError("budget exceeds total capacity")
    return units


def expand(coarse: Trajectory, clustering: AssetClustering, problem: PortfolioProblem) -> Trajectory:
    """Spread cluster units over members by representative weight; repair each period to the budget."""
    W = clustering.weight_matrix()
    caps = np.full(problem.n_assets, problem.K_prime)
    out = np.zeros((problem.n_steps, problem.n_assets), dtype=np.int64)
    for t in range(problem.n_steps):
        units = coarse.holdings[t].astype(float)
        tot = units.sum()
        target = W @ units * (problem.K / tot) if tot > 0 else np.full(problem.n_assets, problem.K / problem.n_assets)
        out[t] = largest_remainder(target, problem.K, caps)
    return Trajectory(out, problem.K)


def refine(traj: Trajectory, problem: PortfolioProblem, clustering: AssetClustering) -> tuple[Trajectory, int]:
    """Best-improvement descent over single-unit moves between assets of one cluster."""
    h = np.array(traj.holdings)
    best = cost_full(problem, Trajectory(h, problem.K))
    groups = [clustering.members(c) for c in range(clustering.n_clusters)]
    moves = 0
    while True:
        pick = None
        for t in range(problem.n_steps):
            for g in groups:
                for a in g:
                    if h[t, a] == 0:
                        continue
                    for b in g:
                        if b == a or h[t, b] >= problem.K_prime:
                            continue
                        h[t, a] -= 1
                        h[t, b] += 1
                        c = cost_full(problem, Trajectory(h, problem.K))
                        h[t, a] += 1
                        h[t, b] -= 1
                        if c < best - 1e-15 * max(1.0, abs(best)):
                            best, pick = c, (t, a, b)
        if pick is None:
            return Trajectory(h, problem.K), moves
        t, a, b = pick
        h[t, a] -= 1
        h[t, b] += 1
        moves += 1


def coarse_solve_then_refine(
    problem: PortfolioProblem,
    clustering: AssetClustering,
    solver: SolverHandle | str,
    diagnostics: dict | None = None,
) -> Trajectory:
    """Solve the clustered problem, expand to assets, then refine within clusters.

    The result is always feasible. ``diagnostics``, when given, receives the
    coarse and expanded costs and the number of refinement moves.
    """
    coarse = coarse_problem(problem, clustering)
    res = solve(build_qubo(coarse), solver)
    expanded = expand(decode(res.best_bits, coarse), clustering, problem)
    final, moves = refine(expanded, problem, clustering)
    if diagnostics is not None:
        diagnostics.update(
            coarse_qubits=coarse.n_steps * coarse.n_assets * coarse.N_q,
            coarse_cost=float(res.best_cost),
            expanded_cost=cost_full(problem, expanded),
            refined_cost=cost_full(problem, final),
            refine_moves=moves,
        )
    return final


# --- fragmentation --------------------------------------------------------------


@dataclass(frozen=True)
class FragmentPlan:
    """``pools[t]`` lists ``(holdings, standalone score)`` candidates for period ``t``, best first."""

    pools: tuple[tuple[tuple[np.ndarray, float], ...], ...]

    @property
    def sizes(self) -> list[int]:
        return [len(p) for p in self.pools]


def period_problem(problem: PortfolioProblem, t: int) -> PortfolioProblem:
    """Single-period subproblem: returns, risk and budget penalty, no transaction costs."""
    return problem.replace(mu=problem.mu[t : t + 1], sigma=problem.sigma[t : t + 1], lambda_tc=0.0)


def _with(handle: SolverHandle | str, seed: int, num_samples: int) -> SolverHandle:
    if isinstance(handle, str):
        handle = SolverHandle(handle)
    params = dict(handle.params)
    params["num_samples"] = max(num_samples, params["num_samples"])
    return SolverHandle(handle.backend, params, seed, handle.workers)


def build_fragment_plan(problem: PortfolioProblem, solver: SolverHandle | str, M: int) -> FragmentPlan:
    """Solve each period alone and keep its ``M`` best distinct feasible samples."""
    if M < 1:
        raise ParameterError("M must be >= 1")
    base = SolverHandle(solver) if isinstance(solver, str) else solver
    seeds = child_seeds(base.seed, problem.n_steps)

    def stage(t):
        sub = period_problem(problem, t)
        res = solve(build_qubo(sub), _with(base, seeds[t], 4 * M))
        pool = []
        for bits, _ in res.samples:
            h = decode(np.array(bits), sub).holdings[0]
            if h.sum() == problem.K and np.all(h <= problem.K_prime):
                pool.append((h, cost_full(sub, Trajectory(h[None, :], problem.K))))
            if len(pool) == M:
                break
        return tuple(pool)

    if base.workers > 1:
        with ThreadPoolExecutor(max_workers=base.workers) as ex:
            pools = tuple(ex.map(stage, range(problem.n_steps)))
    else:
        pools = tuple(stage(t) for t in range(problem.n_steps))
    for t, pool in enumerate(pools):
        if not pool:
            raise ParameterError(f"solver returned no feasible candidate for period {t}")
        if len(pool) < M:
            warnings.warn(f"period {t}: only {len(pool)} of {M} distinct feasible candidates", SparsePoolWarning, stacklevel=2)
    return FragmentPlan(pools)


def recombine(problem: PortfolioProblem, plan: FragmentPlan) -> Trajectory:
    """Exact dynamic programme over the candidate lattice with transaction costs on transitions."""
    lam = problem.lambda_vector
    K = problem.K

    def trans(a, b):
        d = (b - a) / K
        return float(lam @ (d * d))

    zero = np.zeros(problem.n_assets)
    value = [score + trans(zero, h) for h, score in plan.pools[0]]
    back = []
    for t in range(1, problem.n_steps):
        prev_pool, pool = plan.pools[t - 1], plan.pools[t]
        nv, arg = [], []
        for h, score in pool:
            opts = [value[i] + trans(ph, h) for i, (ph, _) in enumerate(prev_pool)]
            i = int(np.argmin(opts))
            nv.append(opts[i] + score)
            arg.append(i)
        value = nv
        back.append(arg)
    k = int(np.argmin(value))
    path = [k]
    for arg in reversed(back):
        k = arg[k]
        path.append(k)
    path.reverse()
    return Trajectory(np.array([plan.pools[t][k][0] for t, k in enumerate(path)]), K)


def fragment_and_recombine(problem: PortfolioProblem, solver: SolverHandle | str, M: int) -> Trajectory:
    return recombine(problem, build_fragment_plan(problem, solver, M))
