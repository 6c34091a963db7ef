import itertools

import numpy as np
import pytest

from finq.errors import CapacityError, ConvergenceError, ParameterError
from finq.qubo import Qubo
from finq.solvers import BACKENDS, SolverHandle, solve
from finq.solvers.base import finalize
from finq.solvers.mps import build_mpo, mps_energy, solve_mps
from finq.solvers.vqe import ansatz_state, _all_costs, _ring_signs


def random_qubo(rng, n, density=0.6):
    upper = np.triu(rng.normal(size=(n, n)), 1)
    upper *= rng.random((n, n)) < density
    return Qubo.from_matrix(upper, rng.normal(size=n), float(rng.normal()))


def brute_min(qubo):
    n = qubo.num_vars
    states = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int8)
    costs = qubo.costs(states)
    return float(costs.min())


def chain(n, j=-1.0):
    return Qubo(np.zeros(n), {(i, i + 1): j for i in range(n - 1)})


@pytest.fixture(scope="module")
def random_instances():
    rng = np.random.default_rng(2024)
    out = []
    for _ in range(50):
        q = random_qubo(rng, int(rng.integers(3, 13)))
        out.append((q, brute_min(q)))
    return out


class TestHandle:
    def test_unknown_backend(self):
        with pytest.raises(ParameterError, match="valid"):
            SolverHandle("gekko")

    def test_unknown_parameter(self):
        with pytest.raises(ParameterError):
            SolverHandle("sa", {"bond_dim": 4})

    @pytest.mark.parametrize("key", ["sweeps", "restarts"])
    def test_budget_positive(self, key):
        with pytest.raises(ParameterError):
            SolverHandle("sa", {key: 0})

    def test_sqa_needs_two_replicas(self):
        with pytest.raises(ParameterError):
            SolverHandle("sqa", {"replicas": 1})

    def test_params_are_read_only(self):
        h = SolverHandle("mps", {"bond_dim": 4})
        assert h.get("bond_dim") == 4
        with pytest.raises(TypeError):
            h.params["bond_dim"] = 8


class TestFinalize:
    def test_tie_break_is_lexicographic(self):
        q = Qubo(np.array([1.0, 1.0]), {(0, 1): -2.0})
        res = finalize(q, [[1, 0], [0, 1], [0, 0]], 8)
        assert res.best_cost == 0.0
        assert res.best_bits.tolist() == [0, 0]

    def test_samples_sorted_and_rescored(self):
        rng = np.random.default_rng(0)
        q = random_qubo(rng, 5)
        cands = rng.integers(0, 2, size=(30, 5))
        res = finalize(q, cands, 100)
        costs = [c for _, c in res.samples]
        assert costs == sorted(costs)
        assert len({b for b, _ in res.samples}) == len(res.samples)
        for b, c in res.samples:
            assert c == q.cost(np.array(b))


class TestExhaustive:
    def test_single_variable(self):
        res = solve(Qubo(np.array([-1.0])), "exhaustive")
        assert res.best_bits.tolist() == [1]
        assert res.best_cost == -1.0

    def test_zero_qubo_tie_break(self):
        res = solve(Qubo.zeros(5), "exhaustive")
        assert res.best_cost == 0.0
        assert res.best_bits.tolist() == [0] * 5

    def test_capacity(self):
        with pytest.raises(CapacityError, match="3"):
            solve(Qubo.zeros(4), SolverHandle("exhaustive", {"max_vars": 3}))

    def test_top_k_matches_sort(self):
        rng = np.random.default_rng(3)
        q = random_qubo(rng, 8)
        res = solve(q, SolverHandle("exhaustive", {"num_samples": 10}))
        states = np.array(list(itertools.product((0, 1), repeat=8)), dtype=np.int8)
        ref = sorted(zip(q.costs(states), map(tuple, states.tolist())))[:10]
        assert [c for _, c in res.samples] == pytest.approx([c for c, _ in ref], abs=1e-12)
        assert res.diagnostics["states_enumerated"] == 256

    def test_ties_pick_smallest_bitstring(self):
        # x0 and x1 symmetric: (0,1) beats (1,0) lexicographically
        q = Qubo(np.array([-1.0, -1.0]), {(0, 1): 2.0})
        res = solve(q, "exhaustive")
        assert res.best_bits.tolist() == [0, 1]


class TestAnnealers:
    @pytest.mark.parametrize("backend", ["sa", "sqa"])
    def test_ferromagnetic_chain(self, backend):
        res = solve(chain(10), SolverHandle(backend, seed=1))
        assert res.best_cost == -9.0
        assert len(set(res.best_bits.tolist())) == 1

    @pytest.mark.parametrize("backend", ["sa", "sqa", "mps"])
    def test_zero_qubo(self, backend):
        res = solve(Qubo.zeros(4), SolverHandle(backend, seed=0))
        assert res.best_cost == 0.0

    def test_sqa_dominant_variable(self):
        rng = np.random.default_rng(5)
        q = random_qubo(rng, 8)
        lin = q.linear.copy()
        lin[3] = -100.0
        q = Qubo(lin, q.pairs, q.offset)
        res = solve(q, SolverHandle("sqa", seed=2))
        assert res.best_bits[3] == 1

    def test_sqa_replica_energies_are_classical_costs(self):
        rng = np.random.default_rng(6)
        q = random_qubo(rng, 9)
        res = solve(q, SolverHandle("sqa", {"sweeps": 200}, seed=3))
        reps = np.array(res.diagnostics["final_replicas"])
        assert reps.shape == (20, 9)
        np.testing.assert_allclose(res.diagnostics["final_replica_energies"], q.costs(reps), atol=1e-9)

    def test_sa_diagnostics(self):
        res = solve(chain(6), SolverHandle("sa", {"sweeps": 50, "restarts": 2}))
        d = res.diagnostics
        assert d["sweeps"] == 100 and d["restarts"] == 2
        assert 0.0 <= d["acceptance_rate"] <= 1.0
        assert len(d["energy_trace"]) == 50


class TestMps:
    def test_mpo_reproduces_cost(self):
        rng = np.random.default_rng(7)
        q = random_qubo(rng, 6)
        mpo = build_mpo(q)
        for bits in itertools.product((0, 1), repeat=6):
            mps = [np.eye(2)[b].reshape(1, 2, 1) for b in bits]
            assert mps_energy(mps, mpo) == pytest.approx(q.cost(np.array(bits)), abs=1e-10)

    def test_mpo_bond_dimension_tracks_coupling_band(self):
        q = chain(8)
        dims = [w.shape[0] for w in build_mpo(q)]
        assert max(dims) <= 3

    def test_separable_with_unit_bond(self):
        rng = np.random.default_rng(8)
        lin = rng.normal(size=10)
        q = Qubo(lin, {}, 0.5)
        res = solve(q, SolverHandle("mps", {"bond_dim": 1}))
        assert res.best_bits.tolist() == (lin < 0).astype(int).tolist()

    def test_sweep_energy_non_increasing(self, random_instances):
        for k, (q, _) in enumerate(random_instances[:15]):
            res = solve(q, SolverHandle("mps", seed=k))
            trace = np.array(res.diagnostics["energy_trace"])
            assert np.all(np.diff(trace) <= 1e-9)

    def test_variational_bound(self, random_instances):
        for k, (q, ref) in enumerate(random_instances[:15]):
            res = solve(q, SolverHandle("mps", {"bond_dim": 2}, seed=k))
            assert res.diagnostics["mps_energy"] >= ref - 1e-9
            assert res.best_cost >= ref - 1e-9

    def test_bond_dim_validation(self):
        with pytest.raises(ParameterError):
            SolverHandle("mps", {"bond_dim": 0})


class TestVqe:
    def test_single_variable(self):
        res = solve(Qubo(np.array([2.0]), {}, -1.0), SolverHandle("vqe", seed=0))
        assert res.best_bits.tolist() == [0]
        assert res.best_cost == -1.0

    def test_capacity(self):
        with pytest.raises(CapacityError):
            solve(Qubo.zeros(21), "vqe")

    def test_state_is_normalized(self):
        rng = np.random.default_rng(9)
        n, layers = 5, 2
        psi = ansatz_state(rng.normal(size=n * (layers + 1)), n, layers, _ring_signs(n))
        assert np.sum(np.abs(psi) ** 2) == pytest.approx(1.0)

    def test_expectation_above_minimum(self, random_instances):
        for k, (q, ref) in enumerate(random_instances[:10]):
            if q.num_vars > 8:
                continue
            res = solve(q, SolverHandle("vqe", {"maxiter": 100}, seed=k))
            assert res.diagnostics["expectation"] >= ref - 1e-9
            assert res.best_cost >= ref - 1e-9

    def test_cost_table(self):
        rng = np.random.default_rng(10)
        q = random_qubo(rng, 4)
        table = _all_costs(q)
        for idx in range(16):
            bits = np.array([(idx >> i) & 1 for i in range(4)])
            assert table[idx] == pytest.approx(q.cost(bits))


class TestContract:
    @pytest.mark.parametrize("backend", ["sa", "sqa", "mps"])
    def test_oracle_equivalence(self, backend, random_instances):
        hits = 0
        for k, (q, ref) in enumerate(random_instances):
            res = solve(q, SolverHandle(backend, seed=k))
            assert res.best_cost >= ref - 1e-9
            hits += res.best_cost <= ref + 1e-9 * max(1.0, abs(ref))
        assert hits >= 48

    @pytest.mark.parametrize("backend", ["sa", "sqa", "mps"])
    def test_determinism_and_workers(self, backend):
        q = random_qubo(np.random.default_rng(11), 10)
        params = {"sa": {"restarts": 4}, "sqa": {"restarts": 3}, "mps": {}}[backend]
        a = solve(q, SolverHandle(backend, params, seed=42))
        b = solve(q, SolverHandle(backend, params, seed=42, workers=3))
        assert a.to_dict() == b.to_dict()

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_samples_contract(self, backend):
        q = random_qubo(np.random.default_rng(12), 6)
        res = solve(q, SolverHandle(backend, seed=1))
        assert res.best_cost == q.cost(res.best_bits)
        costs = [c for _, c in res.samples]
        assert costs == sorted(costs)
        for bits, c in res.samples:
            assert c == q.cost(np.array(bits))


def test_convergence_error_carries_diagnostics():
    err = ConvergenceError("energy rose", {"sweep": 3})
    assert err.diagnostics == {"sweep": 3}
