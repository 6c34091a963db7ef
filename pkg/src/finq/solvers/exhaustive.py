"""Brute-force enumeration in Gray-code order."""

from __future__ import annotations

import numpy as np
from numba import njit

from finq.errors import CapacityError
from finq.qubo import Qubo
from finq.solvers.base import SolverHandle, finalize


@njit(cache=True, inline="always")
def _lex_less(a, b):
    # bit 0 is the most significant position for lexicographic order
    d = a ^ b
    if d == 0:
        return False
    low = d & -d
    return (a & low) == 0


@njit(cache=True, nogil=True)
def _enumerate(lin, coupling, offset, keep):
    n = lin.shape[0]
    field = lin.copy()
    x = np.zeros(n, dtype=np.int8)
    energy = offset
    kept_e = np.full(keep, np.inf)
    kept_s = np.full(keep, -1, dtype=np.int64)
    count = 0
    worst = 0
    state = np.int64(0)
    total = np.int64(1) << n
    g = np.int64(0)
    while True:
        tol = 1e-12 * max(1.0, abs(energy))
        if count < keep:
            kept_e[count] = energy
            kept_s[count] = state
            count += 1
            if count == keep:
                worst = 0
                for k in range(1, keep):
                    if kept_e[k] > kept_e[worst] + tol or (
                        abs(kept_e[k] - kept_e[worst]) <= tol and _lex_less(kept_s[worst], kept_s[k])
                    ):
                        worst = k
        elif energy < kept_e[worst] - tol or (
            abs(energy - kept_e[worst]) <= tol and _lex_less(state, kept_s[worst])
        ):
            kept_e[worst] = energy
            kept_s[worst] = state
            worst = 0
            for k in range(1, keep):
                if kept_e[k] > kept_e[worst] + tol or (
                    abs(kept_e[k] - kept_e[worst]) <= tol and _lex_less(kept_s[worst], kept_s[k])
                ):
                    worst = k
        g += 1
        if g == total:
            break
        bit = 0
        while not (g >> bit) & 1:
            bit += 1
        if x[bit] == 0:
            energy += field[bit]
            x[bit] = 1
            for j in range(n):
                field[j] += coupling[j, bit]
        else:
            energy -= field[bit]
            x[bit] = 0
            for j in range(n):
                field[j] -= coupling[j, bit]
        state ^= np.int64(1) << bit
    return kept_s[:count]


def solve_exhaustive(qubo: Qubo, handle: SolverHandle | None = None):
    """Global minimum over all ``2**n`` states.

    ``samples`` holds the ``num_samples`` lowest-cost states.
    """
    handle = handle or SolverHandle("exhaustive")
    cap = handle.get("max_vars")
    n = qubo.num_vars
    if n > cap:
        raise CapacityError(f"exhaustive search is capped at {cap} variables; instance has {n}")
    keep = int(min(handle.get("num_samples"), 2**n)) if n < 63 else handle.get("num_samples")
    states = _enumerate(
        np.ascontiguousarray(qubo.linear, dtype=np.float64),
        np.ascontiguousarray(qubo.coupling, dtype=np.float64),
        qubo.offset,
        max(keep, 1),
    )
    bits = [[(int(s) >> i) & 1 for i in range(n)] for s in states]
    diagnostics = {"states_enumerated": 2**n}
    return finalize(qubo, bits, handle.get("num_samples"), diagnostics)
