"""Matrix-product-state ground-state search over QUBO bitstrings.

The cost Hamiltonian is diagonal, ``H = offset + sum_i l_i n_i + sum_{i<j} c_ij n_i n_j``
with ``n = diag(0, 1)``. It is written as an MPO whose virtual states are a
"ready" state, a "done" state, and one channel per earlier site that still has
a coupling partner further right, so the MPO bond dimension equals the number
of couplings crossing that cut plus two. Single-site DMRG sweeps with subspace
expansion lower the energy; bitstrings are then sampled from the MPS and
polished by steepest single-bit descent.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from numba import njit
from scipy.sparse.linalg import LinearOperator, eigsh

from finq.errors import ConvergenceError
from finq.qubo import Qubo
from finq.solvers.base import SolverHandle, child_seeds, energy_scale, finalize

_N = np.array([[0.0, 0.0], [0.0, 1.0]])
_I = np.eye(2)
_X = np.array([[0.0, 1.0], [1.0, 0.0]])
_DENSE_LIMIT = 64
_CUTOFF = 1e-12


def build_mpo(qubo: Qubo, mix: float = 1.0, transverse: float = 0.0) -> list[np.ndarray]:
    """MPO for ``mix * H_cost - transverse * sum_i X_i``.

    Tensors have shape ``(w_left, w_right, 2, 2)``; virtual state 0 is "ready"
    and the last one is "done".
    """
    n = qubo.num_vars
    C = qubo.upper
    last_partner = np.full(n, -1)
    for (i, j) in qubo.pairs:
        last_partner[i] = max(last_partner[i], j)
    # open[b] lists sites i < b whose channel crosses bond b (between sites b-1 and b)
    open_at = [[i for i in range(b) if last_partner[i] >= b] for b in range(n + 1)]
    mpo = []
    for k in range(n):
        left, right = open_at[k], open_at[k + 1]
        wl, wr = len(left) + 2, len(right) + 2
        W = np.zeros((wl, wr, 2, 2))
        W[0, 0] = _I
        W[wl - 1, wr - 1] = _I
        onsite = mix * qubo.linear[k] * _N - transverse * _X
        if k == 0:
            onsite = onsite + mix * qubo.offset * _I
        W[0, wr - 1] = onsite
        rpos = {i: r + 1 for r, i in enumerate(right)}
        if k in rpos:
            W[0, rpos[k]] = _N
        for a, i in enumerate(left, start=1):
            if i in rpos:
                W[a, rpos[i]] = _I
            if C[i, k] != 0.0:
                W[a, wr - 1] = mix * C[i, k] * _N
        mpo.append(W)
    return mpo


def _left_env(L, A, W):
    t = np.tensordot(L, A, axes=([2], [0]))  # a w t b'
    t = np.tensordot(t, W, axes=([1, 2], [0, 3]))  # a b' v s
    t = np.tensordot(A, t, axes=([0, 1], [0, 3]))  # b b' v
    return t.transpose(0, 2, 1)


def _right_env(R, B, W):
    t = np.tensordot(B, R, axes=([2], [2]))  # x t b v
    t = np.tensordot(W, t, axes=([1, 3], [3, 1]))  # w s x b
    t = np.tensordot(B, t, axes=([1, 2], [1, 3]))  # a w x
    return t


def _apply(L, W, R, M):
    t = np.tensordot(L, M, axes=([2], [0]))  # a w t y
    t = np.tensordot(t, W, axes=([1, 2], [0, 3]))  # a y v s
    t = np.tensordot(t, R, axes=([1, 2], [2, 1]))  # a s b
    return t


def _local_ground(L, W, R, M):
    shape = M.shape
    dim = M.size
    v0 = M.reshape(-1)
    v0 = v0 / np.linalg.norm(v0)
    e0 = float(v0 @ _apply(L, W, R, v0.reshape(shape)).reshape(-1))
    if dim <= _DENSE_LIMIT:
        t = np.tensordot(L, W, axes=([1], [0]))  # a x v s t
        H = np.tensordot(t, R, axes=([2], [1]))  # a x s t b y
        H = H.transpose(0, 2, 4, 1, 3, 5).reshape(dim, dim)
        H = 0.5 * (H + H.T)
        vals, vecs = sla.eigh(H, subset_by_index=[0, 0])
        e, v = float(vals[0]), vecs[:, 0]
    else:
        op = LinearOperator(
            (dim, dim), matvec=lambda x: _apply(L, W, R, x.reshape(shape)).reshape(-1), dtype=float
        )
        vals, vecs = eigsh(op, k=1, which="SA", v0=v0, tol=1e-10, ncv=min(dim, 24))
        e, v = float(vals[0]), vecs[:, 0]
    if e > e0:
        return e0, v0.reshape(shape)
    return e, v.reshape(shape)


def _random_mps(n, chi, rng):
    dims = [1] + [min(chi, 2 ** min(b, n - b)) for b in range(1, n)] + [1]
    return [rng.normal(size=(dims[k], 2, dims[k + 1])) for k in range(n)]


def _right_canonicalize(mps):
    for k in range(len(mps) - 1, 0, -1):
        a, d, b = mps[k].shape
        q, r = np.linalg.qr(mps[k].reshape(a, d * b).T)
        mps[k] = q.T.reshape(-1, d, b)
        mps[k - 1] = np.einsum("asb,bc->asc", mps[k - 1], r.T)
    mps[0] /= np.linalg.norm(mps[0])


def _truncate(s, chi, cutoff):
    keep = max(1, min(chi, int(np.sum(s > cutoff * s[0]))))
    return keep


def mps_energy(mps, mpo) -> float:
    env = np.zeros((1, mpo[0].shape[0], 1))
    env[0, 0, 0] = 1.0
    norm = np.ones((1, 1))
    for A, W in zip(mps, mpo):
        env = _left_env(env, A, W)
        norm = np.tensordot(A, np.tensordot(norm, A, axes=([1], [0])), axes=([0, 1], [0, 1]))
    return float(env[0, -1, 0] / norm[0, 0])


class _Sweeper:
    def __init__(self, mps, mpo, chi):
        self.mps = mps
        self.mpo = mpo
        self.chi = chi
        n = len(mps)
        self.L = [None] * (n + 1)
        self.R = [None] * (n + 1)
        self.L[0] = np.zeros((1, mpo[0].shape[0], 1))
        self.L[0][0, 0, 0] = 1.0
        self.R[n] = np.zeros((1, mpo[-1].shape[1], 1))
        self.R[n][0, -1, 0] = 1.0
        for k in range(n - 1, 0, -1):
            self.R[k] = _right_env(self.R[k + 1], mps[k], mpo[k])

    def snapshot(self):
        return [m.copy() for m in self.mps], list(self.L), list(self.R)

    def restore(self, snap):
        self.mps, self.L, self.R = [m.copy() for m in snap[0]], list(snap[1]), list(snap[2])

    def sweep(self, alpha):
        """One left-to-right and one right-to-left pass; returns the final local energy."""
        mps, mpo, n = self.mps, self.mpo, len(self.mps)
        energy = None
        if n == 1:
            energy, mps[0] = _local_ground(self.L[0], mpo[0], self.R[1], mps[0])
            mps[0] /= np.linalg.norm(mps[0])
            return energy
        for k in range(n - 1):
            energy, M = _local_ground(self.L[k], mpo[k], self.R[k + 1], mps[k])
            nxt = mps[k + 1]
            if alpha > 0.0:
                P = np.tensordot(self.L[k], M, axes=([2], [0]))  # a w t b
                P = alpha * np.tensordot(P, mpo[k], axes=([1, 2], [0, 3]))  # a b v s
                a, b, w, d = P.shape
                M = np.concatenate([M, P.transpose(0, 3, 1, 2).reshape(a, d, b * w)], axis=2)
                nxt = np.concatenate([nxt, np.zeros((b * w,) + nxt.shape[1:])], axis=0)
            a, d, b = M.shape
            u, s, vt = np.linalg.svd(M.reshape(a * d, b), full_matrices=False)
            keep = _truncate(s, self.chi, _CUTOFF) if alpha > 0.0 else len(s)
            u, s, vt = u[:, :keep], s[:keep], vt[:keep]
            mps[k] = u.reshape(a, d, keep)
            nxt = np.einsum("b,bc,csd->bsd", s, vt, nxt)
            mps[k + 1] = nxt / np.linalg.norm(nxt)
            self.L[k + 1] = _left_env(self.L[k], mps[k], mpo[k])
        for k in range(n - 1, 0, -1):
            energy, M = _local_ground(self.L[k], mpo[k], self.R[k + 1], mps[k])
            prv = mps[k - 1]
            if alpha > 0.0:
                P = np.tensordot(M, self.R[k + 1], axes=([2], [2]))  # a t b v
                P = alpha * np.tensordot(P, mpo[k], axes=([1, 3], [3, 1]))  # a b w s
                a, b, w, d = P.shape
                M = np.concatenate([M, P.transpose(0, 2, 3, 1).reshape(a * w, d, b)], axis=0)
                prv = np.concatenate([prv, np.zeros(prv.shape[:2] + (a * w,))], axis=2)
            a, d, b = M.shape
            u, s, vt = np.linalg.svd(M.reshape(a, d * b), full_matrices=False)
            keep = _truncate(s, self.chi, _CUTOFF) if alpha > 0.0 else len(s)
            u, s, vt = u[:, :keep], s[:keep], vt[:keep]
            mps[k] = vt.reshape(keep, d, b)
            prv = np.einsum("asb,bc,c->asc", prv, u, s)
            mps[k - 1] = prv / np.linalg.norm(prv)
            self.R[k] = _right_env(self.R[k + 1], mps[k], mpo[k])
        energy, mps[0] = _local_ground(self.L[0], mpo[0], self.R[1], mps[0])
        mps[0] /= np.linalg.norm(mps[0])
        return energy


def sample_mps(mps, count: int, rng: np.random.Generator) -> np.ndarray:
    """Exact sequential sampling; requires sites 1.. to be right-canonical."""
    n = len(mps)
    out = np.zeros((count, n), dtype=np.int8)
    env = np.ones((count, 1))
    for k, A in enumerate(mps):
        amp = np.einsum("ma,asb->msb", env, A)
        p = np.einsum("msb,msb->ms", amp, amp)
        p1 = p[:, 1] / np.maximum(p.sum(axis=1), 1e-300)
        bit = (rng.random(count) < p1).astype(np.int8)
        out[:, k] = bit
        chosen = amp[np.arange(count), bit]
        nrm = np.linalg.norm(chosen, axis=1, keepdims=True)
        env = chosen / np.maximum(nrm, 1e-300)
    return out


@njit(cache=True, nogil=True)
def greedy_descent(lin, coupling, states):
    """Steepest single-bit descent applied to every row of ``states`` in place."""
    m, n = states.shape
    for r in range(m):
        x = states[r]
        field = lin.copy()
        for i in range(n):
            if x[i]:
                for j in range(n):
                    field[j] += coupling[j, i]
        while True:
            best = 0.0
            arg = -1
            for i in range(n):
                de = field[i] if x[i] == 0 else -field[i]
                if de < best - 1e-14 * (1.0 + abs(best)):
                    best = de
                    arg = i
            if arg < 0:
                break
            sign = 1.0 if x[arg] == 0 else -1.0
            x[arg] = 1 - x[arg]
            for j in range(n):
                field[j] += sign * coupling[j, arg]
    return states


def solve_mps(qubo: Qubo, handle: SolverHandle | None = None):
    """DMRG-style variational search followed by sampling and bit-flip descent.

    The state is first dragged along ``(1 - s) * (-G sum X) + s * H_cost`` for
    ``anneal_steps`` values of ``s`` in [0, 1), one expanded sweep each, with
    ``G`` the largest single-flip energy change. A pure-cost DMRG stage follows.
    Samples are drawn half from the last annealed state and half from the final
    one, then polished by steepest descent.

    In the pure-cost stage, a sweep that would raise the energy by more than
    ``energy_tol`` is redone without expansion, which cannot increase it; if
    that still fails the solver raises :class:`ConvergenceError`.
    """
    handle = handle or SolverHandle("mps")
    n = qubo.num_vars
    chi = handle.get("bond_dim")
    tol = handle.get("energy_tol")
    init_seed, sample_seed = child_seeds(handle.seed, 2)
    rng = np.random.default_rng(init_seed)
    srng = np.random.default_rng(sample_seed)
    gamma = energy_scale(qubo)
    mps = _random_mps(n, chi, rng)
    _right_canonicalize(mps)
    alpha = handle.get("expansion")
    anneal_energies = []
    steps = handle.get("anneal_steps")
    for s in np.arange(steps) / steps:
        sweeper = _Sweeper(mps, build_mpo(qubo, mix=s, transverse=(1.0 - s) * gamma), chi)
        anneal_energies.append(float(sweeper.sweep(alpha)))
        mps = sweeper.mps
    n_samples = handle.get("samples")
    annealed = sample_mps(mps, n_samples - n_samples // 2, srng) if steps else np.zeros((0, n), np.int8)

    mpo = build_mpo(qubo)
    sweeper = _Sweeper(mps, mpo, chi)
    trace: list[float] = []
    fallbacks = 0
    previous = mps_energy(sweeper.mps, mpo)
    for sweep in range(handle.get("max_sweeps")):
        snap = sweeper.snapshot()
        energy = sweeper.sweep(alpha)
        if energy > previous + tol * max(1.0, abs(previous)):
            sweeper.restore(snap)
            fallbacks += 1
            energy = sweeper.sweep(0.0)
            if energy > previous + tol * max(1.0, abs(previous)):
                raise ConvergenceError(
                    f"MPS sweep {sweep} raised the energy from {previous} to {energy}",
                    {"energy_trace": trace + [energy], "sweeps": sweep + 1},
                )
        trace.append(float(energy))
        converged = abs(previous - energy) <= tol * max(1.0, abs(energy))
        previous = energy
        alpha *= 0.5
        if converged:
            break
    mps = sweeper.mps
    final = sample_mps(mps, n_samples // 2 if steps else n_samples, srng)
    raw = np.concatenate([annealed, final])
    polished = greedy_descent(
        np.ascontiguousarray(qubo.linear, dtype=np.float64),
        np.ascontiguousarray(qubo.coupling, dtype=np.float64),
        raw.copy(),
    )
    diagnostics = {
        "sweeps": len(anneal_energies) + len(trace),
        "energy_trace": trace,
        "anneal_energies": anneal_energies,
        "mps_energy": float(trace[-1]) if trace else mps_energy(mps, mpo),
        "bond_dims": [int(A.shape[2]) for A in mps[:-1]],
        "mpo_bond_dims": [int(W.shape[1]) for W in mpo[:-1]],
        "expansion_fallbacks": fallbacks,
    }
    return finalize(qubo, list(polished) + list(raw), handle.get("num_samples"), diagnostics)
