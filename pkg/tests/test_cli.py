import csv
import io

import numpy as np
import pytest

from finq import crash as cn
from finq.benchmark import report_csv, run_benchmark, write_report
from finq.cli import ingest_prices, main, run_crash_scenario
from finq.config import BenchmarkConfig, dump_config, load_config, resolve_seed
from finq.errors import ConfigurationError, DataError, ParameterError
from finq.portfolio import MarketData, generate_instance, write_prices


def run(argv):
    buf = io.StringIO()
    code = main(argv, out=buf)
    return code, buf.getvalue()


def small_config(tmp_path, **kw):
    params = dict(sizes=("XS",), solvers=("exhaustive", "sa"), seeds=(0,), output=tmp_path / "out")
    params.update(kw)
    return BenchmarkConfig(**params)


@pytest.fixture
def cascade_files(tmp_path):
    C = np.array([[0, 0, 0.3], [0.3, 0, 0], [0, 0.3, 0]])
    net = cn.cross_holding_network(C, np.eye(3), [1.0, 1.0, 1.0], [0.9, 0.85, 0.5], [0.5, 0.5, 0.5])
    paths = cn.save_network(net, tmp_path / "net")
    shock = tmp_path / "net" / "shock.csv"
    shock.write_text("asset,delta\nP0,-0.4\n")
    zero = tmp_path / "net" / "zero.csv"
    zero.write_text("asset,delta\n")
    return net, paths, shock, zero


class TestConfig:
    def test_defaults_roundtrip(self):
        cfg = load_config()
        assert load_config(text=dump_config(cfg)) == cfg

    def test_overrides_and_types(self):
        cfg = load_config(text="[sa]\nsweeps = 50\n[problem]\ngamma = 2.5\nrho = auto\n")
        assert cfg["sa"]["sweeps"] == 50
        assert cfg["problem"]["gamma"] == 2.5 and cfg["problem"]["rho"] is None

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="valid"):
            load_config(text="[sa]\ncooling = 3\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigurationError):
            load_config(text="[gekko]\nx = 1\n")

    def test_bad_number(self):
        with pytest.raises(ConfigurationError):
            load_config(text="[mps]\nbond_dim = wide\n")

    def test_seed_precedence(self, monkeypatch):
        cfg = load_config()
        monkeypatch.setenv("FINQ_SEED", "17")
        assert resolve_seed(None, cfg) == 17
        assert resolve_seed(3, cfg) == 3
        assert resolve_seed(None, load_config(text="[problem]\nseed = 5\n")) == 5
        monkeypatch.delenv("FINQ_SEED")
        assert resolve_seed(None, cfg) == 0

    def test_hash_stable_and_sensitive(self, tmp_path):
        a = small_config(tmp_path)
        assert a.hash() == small_config(tmp_path / "elsewhere", jobs=4).hash()
        assert a.hash() != small_config(tmp_path, gamma=2.0).hash()
        assert a.hash() != small_config(tmp_path, seeds=(1,)).hash()
        assert a.hash() != small_config(tmp_path, overrides={"sa": {"sweeps": 10}}).hash()

    def test_validation(self, tmp_path):
        with pytest.raises(ParameterError, match="valid"):
            small_config(tmp_path, solvers=())
        with pytest.raises(ParameterError, match="exhaustive, sa"):
            small_config(tmp_path, solvers=("gekko",))
        with pytest.raises(ParameterError):
            small_config(tmp_path, seeds=())
        with pytest.raises(ParameterError):
            small_config(tmp_path, overrides={"sa": {"sweeps": -1}})


class TestBenchmark:
    def test_sa_matches_exhaustive_on_xs(self, tmp_path):
        report = run_benchmark(small_config(tmp_path))
        assert len(report.rows) == 2
        assert report.rows[0].cost == pytest.approx(report.rows[1].cost, abs=1e-12)

    def test_capacity_cells_are_dashes(self, tmp_path):
        cfg = small_config(tmp_path, sizes=("L",), solvers=("exhaustive", "vqe"))
        report = run_benchmark(cfg)
        assert [r.status for r in report.rows] == ["capacity", "capacity"]
        rows = list(csv.DictReader(io.StringIO(report_csv(report))))
        assert rows[0]["cost"] == "-" and rows[0]["sharpe"] == "-"

    def test_revalidation(self, tmp_path):
        cfg = small_config(tmp_path, solvers=("sa", "mps"), seeds=(0, 1))
        report = run_benchmark(cfg)
        assert report.revalidate(cfg) == []
        report.rows[0].cost += 1.0
        assert report.revalidate(cfg) == [report.rows[0].key]

    def test_byte_identical_reruns_and_jobs(self, tmp_path):
        a = small_config(tmp_path / "a", solvers=("sa", "sqa", "mps"), seeds=(0, 1))
        b = small_config(tmp_path / "b", solvers=("sa", "sqa", "mps"), seeds=(0, 1), jobs=3)
        pa = write_report(run_benchmark(a), a)
        pb = write_report(run_benchmark(b), b)
        for rel in ["report.csv", "metadata.json"] + [
            str(p.relative_to(pa)) for p in sorted(pa.glob("*/*"))
        ]:
            assert (pa / rel).read_bytes() == (pb / rel).read_bytes(), rel

    def test_extra_columns_are_blank(self, tmp_path):
        cfg = small_config(tmp_path, solvers=("sa",), extra_columns=("gekko", "dwave_hybrid"))
        text = report_csv(run_benchmark(cfg), cfg.extra_columns)
        header, row = text.splitlines()
        assert header.endswith("gekko,dwave_hybrid") and row.endswith(",,")

    def test_reduction_methods(self, tmp_path):
        for kw in ({"clusters": 2}, {"fragment_candidates": 2}):
            report = run_benchmark(small_config(tmp_path, solvers=("exhaustive",), **kw))
            assert report.rows[0].status == "ok"
            assert report.rows[0].diagnostics["feasible"]

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        cfg = small_config(tmp_path, output=blocker / "sub", solvers=("sa",))
        with pytest.raises(DataError):
            write_report(run_benchmark(cfg), cfg)


class TestIngest:
    def test_roundtrip(self, tmp_path):
        data, _ = generate_instance("XS", seed=2)
        write_prices(data, tmp_path / "p.csv")
        assert np.array_equal(ingest_prices(tmp_path / "p.csv").prices, data.prices)

    def test_three_rows(self, tmp_path):
        (tmp_path / "p.csv").write_text("date,A,B\n2020-01-31,1,2\n2020-02-28,1.5,2\n2020-03-31,2,2.5\n")
        data = ingest_prices(tmp_path / "p.csv")
        assert isinstance(data, MarketData) and data.prices.shape == (3, 2)


class TestCrashScenario:
    def test_zero_perturbation(self, cascade_files):
        _, paths, _, zero = cascade_files
        rep = run_crash_scenario(paths["institutions"], paths["ownership"], paths["prices"], paths["dependency"], zero)
        assert rep.newly_failed == []
        assert "no new failures" in rep.to_text()

    def test_cascade_fixture_matches_oracle(self, cascade_files):
        net, paths, shock, _ = cascade_files
        rep = run_crash_scenario(paths["institutions"], paths["ownership"], paths["prices"], paths["dependency"], shock)
        oracle = cn.best_equilibrium(net.with_prices(net.p + [-0.4, 0, 0]))
        assert rep.newly_failed == list(np.flatnonzero(oracle.failed)) == [0, 1]
        rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
        assert [r["newly_failed"] for r in rows] == ["1", "1", "0"]

    def test_identity_targeted_shock(self, tmp_path):
        (tmp_path / "i.csv").write_text("inst,v_crit,b_drop\na,0.5,0\nb,0.5,0\n")
        (tmp_path / "o.csv").write_text("inst,asset,share\na,x,1\nb,y,1\n")
        (tmp_path / "p.csv").write_text("asset,price\nx,1\ny,1\n")
        (tmp_path / "s.csv").write_text("asset,delta\ny,-0.8\n")
        rep = run_crash_scenario(tmp_path / "i.csv", tmp_path / "o.csv", tmp_path / "p.csv", None, tmp_path / "s.csv")
        assert rep.newly_failed == [1]


class TestMain:
    def test_show_config(self):
        code, out = run(["benchmark", "--show-config"])
        assert code == 0
        assert "[sqa]" in out and "temperature" in out

    def test_portfolio_subcommand(self, tmp_path):
        code, out = run(["portfolio", "--size", "XS", "--solver", "exhaustive", "--report", str(tmp_path / "r")])
        assert code == 0 and "feasible True" in out
        assert (tmp_path / "r" / "report.csv").exists()
        assert list((tmp_path / "r" / "trajectories").glob("*.csv"))

    def test_portfolio_with_data_and_clusters(self, tmp_path):
        data, _ = generate_instance("S", seed=1)
        write_prices(data, tmp_path / "p.csv")
        code, out = run(["portfolio", "--data", str(tmp_path / "p.csv"), "--size", "S", "--solver", "sa",
                         "--clusters", "2", "--report", str(tmp_path / "r")])
        assert code == 0
        assert (tmp_path / "r" / "dendrogram.txt").exists()

    def test_crash_subcommand(self, cascade_files, tmp_path):
        _, paths, shock, _ = cascade_files
        code, out = run(["crash", "--institutions", str(paths["institutions"]), "--ownership", str(paths["ownership"]),
                         "--prices", str(paths["prices"]), "--dependency", str(paths["dependency"]),
                         "--perturbation", str(shock), "--report", str(tmp_path / "c")])
        assert code == 0 and "new failures: I0, I1" in out
        assert (tmp_path / "c" / "crash.csv").exists()

    def test_benchmark_subcommand(self, tmp_path):
        code, out = run(["benchmark", "--sizes", "XS", "--solvers", "exhaustive,sa", "--seeds", "0",
                         "--output", str(tmp_path / "b")])
        assert code == 0
        assert (tmp_path / "b" / "report.csv").exists() and "config hash" in out

    def test_gen_instance(self, tmp_path):
        code, _ = run(["gen-instance", "--size", "S", "--seed", "4", "--output", str(tmp_path / "g")])
        assert code == 0
        assert {p.name for p in (tmp_path / "g").iterdir()} == {"prices.csv", "qubo.txt", "problem.ini"}
        code, _ = run(["gen-instance", "--kind", "crash", "--output", str(tmp_path / "n")])
        assert code == 0 and (tmp_path / "n" / "institutions.csv").exists()

    @pytest.mark.parametrize(
        "argv,code",
        [
            (["benchmark", "--solvers", ""], 2),
            (["benchmark", "--solvers", "gekko"], 2),
            (["portfolio", "--solver", "gekko"], 2),
            (["portfolio", "--data", "/nonexistent.csv", "--size", "XS"], 3),
            (["portfolio", "--size", "L", "--solver", "exhaustive"], 4),
            (["frobnicate"], 2),
        ],
    )
    def test_exit_codes(self, argv, code, capsys):
        assert run(argv)[0] == code

    def test_bad_config_is_usage_error(self, tmp_path):
        (tmp_path / "c.ini").write_text("[sa]\nbogus = 1\n")
        assert run(["benchmark", "--config", str(tmp_path / "c.ini")])[0] == 2
