"""Toy-scale variational eigensolver on a dense statevector."""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.optimize import minimize

from finq.errors import CapacityError
from finq.qubo import Qubo
from finq.solvers.base import SolverHandle, child_seeds, finalize


def _all_costs(qubo: Qubo) -> np.ndarray:
    n = qubo.num_vars
    idx = np.arange(2**n, dtype=np.int64)
    out = np.empty(2**n)
    chunk = 1 << 16
    for lo in range(0, 2**n, chunk):
        sl = idx[lo : lo + chunk]
        bits = ((sl[:, None] >> np.arange(n)) & 1).astype(float)
        out[lo : lo + chunk] = qubo.costs(bits)
    return out


def _ring_signs(n: int) -> np.ndarray:
    idx = np.arange(2**n, dtype=np.int64)
    parity = np.zeros(2**n, dtype=np.int64)
    pairs = [(i, (i + 1) % n) for i in range(n)] if n > 2 else ([(0, 1)] if n == 2 else [])
    for i, j in pairs:
        parity ^= ((idx >> i) & 1) & ((idx >> j) & 1)
    return 1.0 - 2.0 * parity


@njit(cache=True)
def _ry(psi, qubit, theta, n):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    stride = 1 << qubit
    for base in range(0, psi.shape[0], 2 * stride):
        for k in range(base, base + stride):
            a0 = psi[k]
            a1 = psi[k + stride]
            psi[k] = c * a0 - s * a1
            psi[k + stride] = s * a0 + c * a1
    return psi


def ansatz_state(params: np.ndarray, n: int, layers: int, signs: np.ndarray | None = None) -> np.ndarray:
    """RY layer followed by ``layers`` rounds of (CZ ring, RY layer), applied to |0...0>."""
    if signs is None:
        signs = _ring_signs(n)
    theta = np.asarray(params).reshape(layers + 1, n)
    psi = np.zeros(2**n)
    psi[0] = 1.0
    for q in range(n):
        _ry(psi, q, float(theta[0, q]), n)
    for layer in range(1, layers + 1):
        psi *= signs
        for q in range(n):
            _ry(psi, q, float(theta[layer, q]), n)
    return psi


def solve_vqe(qubo: Qubo, handle: SolverHandle | None = None):
    """Minimise the cost expectation over a hardware-efficient RY/CZ ansatz with COBYLA.

    The returned bitstring is the best of ``shots`` samples from the optimised state.
    """
    handle = handle or SolverHandle("vqe")
    n = qubo.num_vars
    cap = handle.get("max_vars")
    if n > cap:
        raise CapacityError(f"vqe statevector is capped at {cap} variables; instance has {n}")
    layers = handle.get("layers")
    init_seed, shot_seed = child_seeds(handle.seed, 2)
    energies = _all_costs(qubo)
    signs = _ring_signs(n)

    def expectation(p):
        psi = ansatz_state(p, n, layers, signs)
        return float(np.dot(psi * psi, energies))

    x0 = np.random.default_rng(init_seed).uniform(0, 2 * np.pi, size=(layers + 1) * n)
    res = minimize(expectation, x0, method="COBYLA", options={"maxiter": handle.get("maxiter"), "rhobeg": 0.5})
    psi = ansatz_state(res.x, n, layers, signs)
    probs = psi * psi
    probs = probs / probs.sum()
    shots = np.random.default_rng(shot_seed).choice(2**n, size=handle.get("shots"), p=probs)
    states = sorted(set(shots.tolist()) | {int(np.argmax(probs))})
    bits = [[(s >> i) & 1 for i in range(n)] for s in states]
    diagnostics = {
        "expectation": float(np.dot(probs, energies)),
        "iterations": int(res.nfev),
        "ground_probability": float(probs[np.argmin(energies)]),
        "layers": layers,
    }
    return finalize(qubo, bits, handle.get("num_samples"), diagnostics)
