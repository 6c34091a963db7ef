"""Thermal (SA) and path-integral (SQA) Monte Carlo annealers.

Both kernels work directly on bits with a cached local field
``field[i] = linear[i] + sum_j c_ij x_j``, so flipping bit ``i`` changes the
cost by ``(1 - 2 x_i) * field[i]``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp
from numba import njit

from finq.qubo import Qubo
from finq.solvers.base import SolverHandle, child_seeds, energy_scale, finalize


def _csr(qubo: Qubo):
    m = sp.csr_array(qubo.coupling)
    m.sort_indices()
    return (
        m.indptr.astype(np.int64),
        m.indices.astype(np.int64),
        m.data.astype(np.float64),
    )


def _map(fn, items, workers):
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@njit(cache=True, nogil=True)
def _sa_kernel(lin, indptr, indices, data, offset, betas, seed):
    np.random.seed(seed)
    n = lin.shape[0]
    x = np.zeros(n, dtype=np.int8)
    for i in range(n):
        x[i] = 1 if np.random.random() < 0.5 else 0
    field = lin.copy()
    energy = offset
    for i in range(n):
        if x[i]:
            energy += lin[i]
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                field[j] += data[p]
                if j > i and x[j]:
                    energy += data[p]
    best_x = x.copy()
    best_e = energy
    trace = np.empty(betas.shape[0])
    accepted = 0
    for s in range(betas.shape[0]):
        beta = betas[s]
        for i in range(n):
            de = field[i] if x[i] == 0 else -field[i]
            if de <= 0.0 or np.random.random() < np.exp(-beta * de):
                sign = 1.0 if x[i] == 0 else -1.0
                x[i] = 1 - x[i]
                energy += de
                accepted += 1
                for p in range(indptr[i], indptr[i + 1]):
                    field[indices[p]] += sign * data[p]
                if energy < best_e:
                    best_e = energy
                    best_x[:] = x
        trace[s] = energy
    return best_x, x, trace, accepted


def solve_sa(qubo: Qubo, handle: SolverHandle | None = None):
    """Simulated annealing with a geometric temperature schedule and restarts.

    Defaults run from ``t_hot`` = the largest single-flip energy change down to
    ``1e-3`` of it. Each restart draws its own seed, so the result does not
    depend on ``handle.workers``.
    """
    handle = handle or SolverHandle("sa")
    n = qubo.num_vars
    scale = energy_scale(qubo)
    t_hot = handle.get("t_hot") or scale
    t_cold = handle.get("t_cold") or 1e-3 * scale
    sweeps = handle.get("sweeps")
    temps = t_hot * (t_cold / t_hot) ** (np.arange(sweeps) / max(sweeps - 1, 1))
    betas = 1.0 / temps
    indptr, indices, data = _csr(qubo)
    lin = np.ascontiguousarray(qubo.linear, dtype=np.float64)
    seeds = child_seeds(handle.seed, handle.get("restarts"))

    def run(seed):
        return _sa_kernel(lin, indptr, indices, data, qubo.offset, betas, seed)

    runs = _map(run, seeds, handle.workers)
    candidates = [r[0] for r in runs] + [r[1] for r in runs]
    costs = [qubo.cost(r[0]) for r in runs]
    best_run = int(np.argmin(costs))
    diagnostics = {
        "sweeps": sweeps * len(seeds),
        "restarts": len(seeds),
        "acceptance_rate": float(sum(r[3] for r in runs)) / (sweeps * max(n, 1) * len(seeds)),
        "energy_trace": [float(e) for e in runs[best_run][2]],
        "t_hot": float(t_hot),
        "t_cold": float(t_cold),
    }
    return finalize(qubo, candidates, handle.get("num_samples"), diagnostics)


@njit(cache=True, nogil=True)
def _sqa_kernel(lin, indptr, indices, data, offset, gammas, temperature, replicas, seed):
    np.random.seed(seed)
    n = lin.shape[0]
    P = replicas
    x = np.zeros((P, n), dtype=np.int8)
    for i in range(n):
        v = 1 if np.random.random() < 0.5 else 0
        for k in range(P):
            x[k, i] = v
    field = np.empty((P, n))
    energy = np.empty(P)
    for k in range(P):
        field[k, :] = lin
        e = offset
        for i in range(n):
            if x[k, i]:
                e += lin[i]
                for p in range(indptr[i], indptr[i + 1]):
                    j = indices[p]
                    field[k, j] += data[p]
                    if j > i and x[k, j]:
                        e += data[p]
        energy[k] = e
    pt = P * temperature
    beta = 1.0 / pt
    best_x = x[0].copy()
    best_e = energy[0]
    for k in range(1, P):
        if energy[k] < best_e:
            best_e = energy[k]
            best_x[:] = x[k]
    trace = np.empty(gammas.shape[0])
    accepted = 0
    for s in range(gammas.shape[0]):
        jperp = -0.5 * pt * np.log(np.tanh(gammas[s] / pt))
        for k in range(P):
            up = (k + 1) % P
            dn = (k - 1 + P) % P
            for i in range(n):
                xi = x[k, i]
                dh = field[k, i] if xi == 0 else -field[k, i]
                si = 2 * xi - 1
                nb = (2 * x[up, i] - 1) + (2 * x[dn, i] - 1)
                de = dh + 2.0 * jperp * si * nb
                if de <= 0.0 or np.random.random() < np.exp(-beta * de):
                    sign = 1.0 if xi == 0 else -1.0
                    x[k, i] = 1 - xi
                    energy[k] += dh
                    accepted += 1
                    for p in range(indptr[i], indptr[i + 1]):
                        field[k, indices[p]] += sign * data[p]
        # collective moves: flip one bit in every replica at once
        for i in range(n):
            de = 0.0
            for k in range(P):
                de += field[k, i] if x[k, i] == 0 else -field[k, i]
            if de <= 0.0 or np.random.random() < np.exp(-beta * de):
                for k in range(P):
                    xi = x[k, i]
                    sign = 1.0 if xi == 0 else -1.0
                    energy[k] += field[k, i] if xi == 0 else -field[k, i]
                    x[k, i] = 1 - xi
                    for p in range(indptr[i], indptr[i + 1]):
                        field[k, indices[p]] += sign * data[p]
        for k in range(P):
            if energy[k] < best_e:
                best_e = energy[k]
                best_x[:] = x[k]
        trace[s] = energy.min()
    return best_x, x, energy, trace, accepted


def solve_sqa(qubo: Qubo, handle: SolverHandle | None = None):
    """Path-integral Monte Carlo emulation of transverse-field annealing.

    ``replicas`` Trotter slices are coupled ferromagnetically with strength
    ``-(P T / 2) ln tanh(Gamma / (P T))`` while ``Gamma`` ramps linearly from
    ``gamma_start`` to ``gamma_end``; both and ``temperature`` are in units of
    the largest single-flip energy change.
    """
    handle = handle or SolverHandle("sqa")
    scale = energy_scale(qubo)
    sweeps = handle.get("sweeps")
    gammas = scale * np.linspace(handle.get("gamma_start"), handle.get("gamma_end"), sweeps)
    temperature = scale * handle.get("temperature")
    P = handle.get("replicas")
    indptr, indices, data = _csr(qubo)
    lin = np.ascontiguousarray(qubo.linear, dtype=np.float64)
    seeds = child_seeds(handle.seed, handle.get("restarts"))

    def run(seed):
        return _sqa_kernel(lin, indptr, indices, data, qubo.offset, gammas, temperature, P, seed)

    runs = _map(run, seeds, handle.workers)
    candidates = [r[0] for r in runs]
    for r in runs:
        candidates.extend(r[1])
    best_run = int(np.argmin([qubo.cost(r[0]) for r in runs]))
    diagnostics = {
        "sweeps": sweeps * len(seeds),
        "replicas": P,
        "acceptance_rate": float(sum(r[4] for r in runs)) / (sweeps * max(qubo.num_vars, 1) * P * len(seeds)),
        "energy_trace": [float(e) for e in runs[best_run][3]],
        "final_replicas": [[int(b) for b in row] for row in runs[best_run][1]],
        "final_replica_energies": [float(e) for e in runs[best_run][2]],
    }
    return finalize(qubo, candidates, handle.get("num_samples"), diagnostics)
