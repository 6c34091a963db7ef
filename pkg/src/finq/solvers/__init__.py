"""Uniform QUBO solver interface over five backends."""

from __future__ import annotations

from finq.qubo import Qubo
from finq.solvers.annealing import solve_sa, solve_sqa
from finq.solvers.base import BACKENDS, DEFAULTS, SolveResult, SolverHandle
from finq.solvers.exhaustive import solve_exhaustive
from finq.solvers.mps import solve_mps
from finq.solvers.vqe import solve_vqe

_DISPATCH = {
    "exhaustive": solve_exhaustive,
    "sa": solve_sa,
    "sqa": solve_sqa,
    "mps": solve_mps,
    "vqe": solve_vqe,
}


def solve(qubo: Qubo, handle: SolverHandle | str) -> SolveResult:
    if isinstance(handle, str):
        handle = SolverHandle(handle)
    return _DISPATCH[handle.backend](qubo, handle)


__all__ = [
    "BACKENDS",
    "DEFAULTS",
    "SolveResult",
    "SolverHandle",
    "solve",
    "solve_exhaustive",
    "solve_mps",
    "solve_sa",
    "solve_sqa",
    "solve_vqe",
]
