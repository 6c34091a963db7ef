"""Acceptance suite: one test per criterion, each printing a single pass/fail line."""

import itertools
import math
import warnings

import numpy as np
import pytest

from finq.benchmark import report_csv, run_benchmark
from finq.config import BenchmarkConfig
from finq.crash import default_encoding, equilibrium_qubo, fixed_point_equilibrium, grid_minimum, qubo_equilibrium, random_network
from finq.portfolio import build_qubo, cost_full, count_qubits, decode, generate_instance, SIZES
from finq.qubo import BinaryPolynomial, quadratize
from finq.reduction import SparsePoolWarning, fragment_and_recombine
from finq.solvers import SolverHandle, solve

pytestmark = pytest.mark.acceptance

# Qubit counts and state-count exponents as tabulated for the six size labels
TABLE_QUBITS = {"XS": 6, "S": 20, "M": 28, "L": 272, "XL": 464, "XXL": 1272}
TABLE_EXPONENT = {"XS": 1.8, "S": 6, "M": 8, "L": 81.9, "XL": 139.7, "XXL": 382.9}


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else ""))
        return ok

    return emit


def optimum(problem):
    return solve(build_qubo(problem), "exhaustive").best_cost


def test_1_size_table(verdict):
    bad = []
    for label, spec in SIZES.items():
        _, p = generate_instance(label, seed=0)
        n = count_qubits(p)
        exponent = n * math.log10(2)
        if n != TABLE_QUBITS[label] or n != spec.n_assets * spec.n_steps * spec.n_bits:
            bad.append(f"{label} qubits {n}")
        if abs(exponent - TABLE_EXPONENT[label]) > 1:
            bad.append(f"{label} exponent {exponent:.1f}")
    assert verdict(1, "qubit counts and state exponents for all six sizes", not bad, ", ".join(bad))


def test_2_qubo_exactness(verdict):
    worst = 0.0
    for label in ("XS", "S", "M"):
        _, p = generate_instance(label, seed=11)
        q = build_qubo(p)
        rng = np.random.default_rng(12)
        bits = rng.integers(0, 2, size=(1000, q.num_vars))
        qc = q.costs(bits)
        for b, c in zip(bits, qc):
            direct = cost_full(p, decode(b, p))
            worst = max(worst, abs(c - direct) / max(1.0, abs(direct)))
    assert verdict(2, "QUBO cost equals direct cost on 1000 random assignments per size", worst < 1e-10, f"max rel err {worst:.2e}")


@pytest.mark.parametrize("label", ["XS", "S"])
def test_3_portfolio_oracle_equivalence(label, verdict):
    hits = {"sa": 0, "mps": 0}
    below = 0
    for seed in range(100):
        _, p = generate_instance(label, seed=seed)
        q = build_qubo(p)
        ref = optimum(p)
        for name, params in (("sa", {}), ("mps", {"bond_dim": 16})):
            got = solve(q, SolverHandle(name, params, seed=seed)).best_cost
            below += got < ref - 1e-9 * max(1.0, abs(ref))
            hits[name] += abs(got - ref) <= 1e-9 * max(1.0, abs(ref))
    ok = below == 0 and min(hits.values()) >= 95
    assert verdict(3, f"SA and MPS reach the exhaustive optimum on {label}", ok, f"sa {hits['sa']}/100, mps {hits['mps']}/100, below-min {below}")


def test_4_crash_oracle_equivalence(verdict):
    rng = np.random.default_rng(2024)
    mismatches, max_bits = [], 0
    for k in range(20):
        net = random_network(rng, 2 + k % 2)
        enc = default_encoding(net, 2)
        max_bits = max(max_bits, equilibrium_qubo(net, enc).num_vars)
        res, info = qubo_equilibrium(net, enc)
        g, _ = grid_minimum(net, enc)
        # penalty terms cancel in floating point, so equality is checked to 1e-9
        if abs(info["ground_cost"] - g) > 1e-9 or abs(res.residual - g) > 1e-12:
            mismatches.append(k)
    zero_drop = []
    for k in range(20):
        net = random_network(rng, 2 + k % 2, drop=False)
        exact = fixed_point_equilibrium(net)
        if not exact.converged:
            continue
        enc = default_encoding(net, 2)
        res, _ = qubo_equilibrium(net, enc)
        if np.max(np.abs(res.v - exact.v)) > enc.scale / 2 + 1e-12:
            zero_drop.append(k)
    ok = not mismatches and not zero_drop and max_bits <= 10
    assert verdict(4, "crash QUBO ground state equals grid enumeration", ok,
                   f"mismatches {mismatches}, zero-drop misses {zero_drop}, max bits {max_bits}")


def test_5_quadratization(verdict):
    rng = np.random.default_rng(5)
    failures = 0
    for trial in range(100):
        n = int(rng.integers(3, 7))
        terms = {}
        for _ in range(int(rng.integers(2, 9))):
            k = int(rng.integers(1, 4))
            idx = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
            terms[idx] = terms.get(idx, 0.0) + float(rng.normal())
        terms[tuple(sorted(rng.choice(n, size=3, replace=False).tolist()))] = float(rng.normal())
        poly = BinaryPolynomial(terms, n)
        q, n_anc = quadratize(poly)
        anc = np.array(list(itertools.product((0, 1), repeat=n_anc)), dtype=np.int8).reshape(-1, n_anc)
        for x in itertools.product((0, 1), repeat=n):
            ext = np.hstack([np.tile(np.array(x, dtype=np.int8), (len(anc), 1)), anc])
            if abs(q.costs(ext).min() - poly.evaluate(np.array(x))) > 1e-9:
                failures += 1
                break
    assert verdict(5, "ancilla-minimised quadratized cost equals the cubic on every assignment", failures == 0, f"{failures}/100 failed")


def test_6_fragmentation(verdict):
    exact_miss, within = 0, 0
    for seed in range(100):
        _, p = generate_instance("XS", seed=seed)
        ref = optimum(p)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SparsePoolWarning)
            full = cost_full(p, fragment_and_recombine(p, "exhaustive", 2 ** (p.n_assets * p.N_q)))
            m8 = cost_full(p, fragment_and_recombine(p, SolverHandle("sa", seed=seed), 8))
        exact_miss += abs(full - ref) > 1e-12
        within += m8 <= ref + 0.05 * abs(ref)
    verdict(6, "fragmentation with M=8 within 5% of optimum on >= 90/100 (report only)", within >= 90, f"{within}/100")
    assert verdict(6, "fragmentation with full pools equals the exhaustive optimum", exact_miss == 0, f"{exact_miss} misses")


def test_7_variational_bounds(verdict):
    problems = []
    for label, seeds in (("XS", range(10)), ("S", range(2))):
        for seed in seeds:
            problems.append((label, seed, generate_instance(label, seed=seed)[1]))
    violations = []
    for label, seed, p in problems:
        q = build_qubo(p)
        ref = optimum(p)
        mps = solve(q, SolverHandle("mps", seed=seed))
        trace = np.array(mps.diagnostics["energy_trace"])
        if mps.diagnostics["mps_energy"] < ref - 1e-9 or np.any(np.diff(trace) > 1e-9):
            violations.append(f"mps {label}/{seed}")
        vqe = solve(q, SolverHandle("vqe", {"maxiter": 150} if label == "S" else {}, seed=seed))
        if vqe.diagnostics["expectation"] < ref - 1e-9 or vqe.best_cost < ref - 1e-9:
            violations.append(f"vqe {label}/{seed}")
    assert verdict(7, "VQE and MPS energies bounded below by the exhaustive minimum", not violations, ", ".join(violations))


def test_8_determinism(tmp_path, verdict):
    base = dict(sizes=("XS", "S"), solvers=("exhaustive", "sa", "sqa", "mps", "vqe"), seeds=(0, 1),
                overrides={"vqe": {"maxiter": 60}})
    texts = [
        report_csv(run_benchmark(BenchmarkConfig(output=tmp_path / str(i), jobs=jobs, **base)))
        for i, jobs in enumerate((1, 1, 3))
    ]
    assert verdict(8, "benchmark CSV byte-identical across reruns and --jobs 3", len(set(texts)) == 1)


def test_9_invariants(verdict):
    gamma_bad, hold_bad = [], []
    for seed in range(20):
        _, base = generate_instance("XS", seed=seed)
        risks = []
        for g in (0.0, 0.5, 1.0, 2.0, 5.0):
            p = base.replace(gamma=g, rho=None)
            w = decode(solve(build_qubo(p), "exhaustive").best_bits, p).as_weights
            risks.append(sum(w[t] @ p.sigma[t] @ w[t] for t in range(p.n_steps)))
        if any(b > a + 1e-12 for a, b in zip(risks, risks[1:])):
            gamma_bad.append(seed)
        p = base.replace(lambda_tc=1e3, rho=None)
        w = decode(solve(build_qubo(p), "exhaustive").best_bits, p).as_weights
        if not np.all(w[1:] == w[:-1]):
            hold_bad.append(seed)
    ok = not gamma_bad and not hold_bad
    assert verdict(9, "risk falls with gamma and large lambda holds the portfolio fixed", ok,
                   f"gamma violations {gamma_bad}, hold violations {hold_bad}")
