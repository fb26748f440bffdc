import json

import pytest

from fracmhd import harness as h


def records(out):
    return h.Registry(out).records()


class TestParse:
    def test_minimal_bootstrap(self):
        cfg = h.parse_config("alpha: 1\nbeta: 1\ngamma: 0.3\n", "bootstrap")
        assert cfg.params == {"alpha": 1.0, "beta": 1.0, "gamma": 0.3, "max_steps": 200}

    def test_defaults_echoed(self):
        cfg = h.parse_config("scenario: simulate\n")
        assert cfg.scenario == "simulate" and cfg.params["N"] == 16
        assert cfg.snapshot()["dt"] == 1e-3

    def test_alpha_range(self):
        with pytest.raises(h.ConfigError, match="3/4 < alpha") as e:
            h.parse_config("gamma: 0.3\nalpha: 0.7\n", "bootstrap")
        assert (e.value.line, e.value.col) == (2, 1)

    def test_unknown_key(self):
        with pytest.raises(h.ConfigError, match="delta") as e:
            h.parse_config("alpha: 1\n  \ndelta: 2\n", "bootstrap")
        assert e.value.line == 3

    def test_syntax_error_position(self):
        with pytest.raises(h.ConfigError, match="parse error") as e:
            h.parse_config("alpha: 1\nbeta: [1\n", "bootstrap")
        assert e.value.line is not None

    def test_scenario_mismatch(self):
        with pytest.raises(h.ConfigError):
            h.parse_config("scenario: simulate\n", "bootstrap")

    def test_fraction_strings(self):
        cfg = h.parse_config("alpha: '9/10'\ngamma: '2/5'\n", "bootstrap")
        assert cfg.params["alpha"] == "9/10"

    def test_types(self):
        with pytest.raises(h.ConfigError, match="integer"):
            h.parse_config("N: 16.5\n", "simulate")
        with pytest.raises(h.ConfigError, match="dt"):
            h.parse_config("dt: 2\nT: 1\n", "simulate")
        with pytest.raises(h.ConfigError, match="enlarge"):
            h.parse_config("L: 6.283\n", "verify")
        with pytest.raises(h.ConfigError, match="excluded"):
            h.parse_config("gamma: 0.5\n", "verify")

    def test_run_id_content_hash(self):
        a = h.parse_config("alpha: 1\ngamma: 0.3\n", "bootstrap")
        b = h.parse_config("gamma: 0.3\nalpha: 1.0\n", "bootstrap")
        c = h.parse_config("gamma: 0.31\n", "bootstrap")
        assert a.run_id == b.run_id != c.run_id


class TestDispatch:
    def test_bootstrap_record(self, tmp_path):
        cfg = h.parse_config("alpha: 1\nbeta: 1\ngamma: 0.49\n", "bootstrap")
        rec = h.dispatch(cfg, tmp_path)
        assert rec["passed"] and rec["summary"]["n0"] == 5 and rec["summary"]["limit"] == "1/2"
        trace = (tmp_path / rec["artifacts"][0]).read_text().splitlines()
        assert trace[0] == "n,gamma_n,a_n,b_n,c_n,branch"
        assert json.loads((tmp_path / "registry.jsonl").read_text())["run_id"] == cfg.run_id

    def test_stalled_bootstrap_fails(self, tmp_path):
        rec = h.dispatch(h.parse_config("gamma: 0.5\n", "bootstrap"), tmp_path)
        assert not rec["passed"] and rec["audits"]["terminated"] is False

    def test_simulate_zero_data(self, tmp_path):
        cfg = h.parse_config("energy: 0\nT: 0.05\ndt: 0.01\nrecord_every: 1\n", "simulate")
        rec = h.dispatch(cfg, tmp_path)
        rows = (tmp_path / rec["artifacts"][0]).read_text().splitlines()[1:]
        assert len(rows) == 6
        assert all(float(x) == 0 for r in rows for x in r.split(",")[1:])

    def test_semigroup_decay(self, tmp_path):
        rec = h.dispatch(h.parse_config("alpha: 0.8\ngamma: 0.3\n", "semigroup-decay"), tmp_path)
        assert rec["passed"]
        assert abs(rec["summary"]["fitted"] - 0.3) <= 0.01

    def test_deterministic_hash(self, tmp_path):
        cfg = h.parse_config("T: 0.05\ndt: 0.01\n", "simulate")
        r1 = h.dispatch(cfg, tmp_path / "a")
        r2 = h.dispatch(cfg, tmp_path / "b")
        assert r1["result_hash"] == r2["result_hash"]

    def test_registry_append_only(self, tmp_path):
        cfg = h.parse_config("gamma: 0.3\n", "bootstrap")
        h.dispatch(cfg, tmp_path)
        first = (tmp_path / "registry.jsonl").read_text()
        h.dispatch(cfg, tmp_path)
        text = (tmp_path / "registry.jsonl").read_text()
        assert text.startswith(first) and len(records(tmp_path)) == 2


SWEEP = """\
target: bootstrap
beta: 1
grid:
  alpha: [0.8, 0.9, 1.0]
  gamma: [0.2, 0.4]
"""


class TestSweep:
    def test_cardinality(self, tmp_path):
        cfg = h.parse_config(SWEEP, "sweep")
        recs = h.sweep(h.expand_sweep(cfg), tmp_path)
        assert len(recs) == 6 and all(r["passed"] for r in recs)
        assert len(records(tmp_path)) == 6

    def test_isolated_failure(self, tmp_path):
        text = SWEEP.replace("gamma: [0.2, 0.4]", "gamma: [0.2, 0.5]").replace(
            "[0.8, 0.9, 1.0]", "[0.9, 1.0]").replace("beta: 1", "beta: 0.9")
        text = text.replace("alpha: [0.9, 1.0]", "alpha: [0.9, 1.0, 0.8]")
        recs = h.sweep(h.expand_sweep(h.parse_config(text, "sweep")), tmp_path)
        assert len(recs) == 6
        assert sum(not r["passed"] for r in recs) == 1

    def test_invalid_point_recorded(self, tmp_path):
        text = SWEEP.replace("[0.8, 0.9, 1.0]", "[0.7, 0.9, 1.0]")
        recs = h.sweep(h.expand_sweep(h.parse_config(text, "sweep")), tmp_path)
        bad = [r for r in recs if r["status"] == "error"]
        assert len(recs) == 6 and len(bad) == 2
        assert bad[0]["error"]["type"] == "ConfigError"

    def test_parallel_matches_sequential(self, tmp_path):
        runs = h.expand_sweep(h.parse_config(SWEEP, "sweep"))
        seq = h.sweep(runs, tmp_path / "s", 1)
        par = h.sweep(runs, tmp_path / "p", 4)
        key = lambda rs: sorted((r["run_id"], r["result_hash"]) for r in rs)
        assert key(seq) == key(par)

    def test_grid_key_validated(self):
        with pytest.raises(h.ConfigError, match="delta"):
            h.parse_config("target: bootstrap\ngrid:\n  delta: [1]\n", "sweep")


class TestCli:
    def test_exit_codes(self, tmp_path, capsys):
        assert h.main(["bootstrap", "--set", "gamma=0.49", "--out", str(tmp_path)]) == 0
        assert h.main(["bootstrap", "--set", "gamma=0.5", "--out", str(tmp_path)]) == 1
        assert h.main(["bootstrap", "--set", "alpha=0.7", "--out", str(tmp_path)]) == 2
        out = capsys.readouterr()
        assert "PASS" in out.out and "FAIL" in out.out and "config error" in out.err

    def test_config_file_and_seed(self, tmp_path):
        cfg = tmp_path / "sim.yaml"
        cfg.write_text("scenario: simulate\nT: 0.02\ndt: 0.01\n")
        assert h.main(["simulate", "--config", str(cfg), "--seed", "7",
                       "--out", str(tmp_path / "o")]) == 0
        rec = records(tmp_path / "o")[0]
        assert rec["config"]["seed"] == 7
        assert (tmp_path / "o" / rec["run_id"] / "ledger.csv").exists()

    def test_sweep_jobs(self, tmp_path):
        cfg = tmp_path / "sw.yaml"
        cfg.write_text(SWEEP)
        assert h.main(["sweep", "--config", str(cfg), "--jobs", "2",
                       "--out", str(tmp_path)]) == 0
        assert len(records(tmp_path)) == 6
