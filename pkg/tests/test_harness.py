import math

import numpy as np
import pytest

from conftest import make_record
from sievenet import cli
from sievenet.dataio import (
    RunConfig,
    load_grid,
    load_model_json,
    read_records_csv,
    save_model_json,
    write_records_csv,
)
from sievenet.errors import ConfigError
from sievenet.harness import aggregate, run_mc, run_replication, scenario_tau, split_stratified
from sievenet.likelihood import ObservedRecord
from sievenet.simulate import SimConfig
from sievenet.train import FitResult, Hyperparameters
from sievenet.model import TransformationSpec, init_network, BernsteinHazard

TINY_HP = Hyperparameters(batch_size=64, hidden_layers=1, hidden_width=8, lr_hazard=0.02, lr_net=0.01, max_epochs=25, patience=25, m=3)


def tiny_config(**overrides) -> RunConfig:
    base = dict(
        sim=SimConfig(n=400, g_case=1, r=0.0, target_event_rate=0.2, tau=1.5625),
        design="case_cohort",
        p_s=0.25,
        p_c=1.0,
        hp=TINY_HP,
        base_seed=99,
        reps=2,
        methods=("pro", "sub", "srs", "ltm"),
    )
    base.update(overrides)
    return RunConfig(**base)


class TestSplit:
    def test_floor_counts(self):
        rng = np.random.default_rng(0)
        records = [make_record("interval", rng.random(3), L=1.0, R=2.0) for _ in range(100)]
        records += [make_record("right", rng.random(3), L=2.0) for _ in range(900)]
        train, test = split_stratified(records, 0.9, np.random.default_rng(1))
        assert len(train) == 900 and len(test) == 100
        assert sum(r.is_case for r in train) == 90
        assert sum(r.is_case for r in test) == 10

    def test_partition_property(self, rng):
        records = [make_record("right", rng.random(2), L=float(i + 1)) for i in range(57)]
        train, test = split_stratified(records, 0.7, np.random.default_rng(2))
        ls = sorted([r.L for r in train] + [r.L for r in test])
        assert ls == [float(i + 1) for i in range(57)]

    def test_same_seed_same_split(self, rng):
        records = [make_record("right", rng.random(2), L=float(i + 1)) for i in range(40)]
        a = split_stratified(records, 0.8, np.random.default_rng(3))
        b = split_stratified(records, 0.8, np.random.default_rng(3))
        assert [r.L for r in a[0]] == [r.L for r in b[0]]

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            split_stratified([], 1.0, np.random.default_rng(0))


class TestRecordsCSV:
    def test_round_trip_with_inf_and_missing(self, tmp_path, rng):
        records = [
            make_record("left", rng.random(3), R=0.8),
            make_record("interval", rng.random(3), L=0.5, R=1.2),
            make_record("right", rng.random(3), L=2.0),
            ObservedRecord(L=1.5, R=math.inf, delta_L=0, delta_I=0, observed=0, z=None, weight=0.0),
        ]
        path = tmp_path / "records.csv"
        write_records_csv(path, records)
        loaded = read_records_csv(path, p_s=1.0, p_c=1.0)
        assert len(loaded) == len(records)
        for orig, back in zip(records, loaded):
            assert back.L == orig.L and back.R == orig.R
            assert back.delta_L == orig.delta_L and back.delta_I == orig.delta_I
            assert back.observed == orig.observed
            if orig.z is None:
                assert back.z is None
            else:
                assert np.array_equal(back.z, orig.z)

    def test_weights_recomputed_from_design(self, tmp_path, rng):
        records = [make_record("right", rng.random(2), L=1.0, weight=1.0)]
        path = tmp_path / "w.csv"
        write_records_csv(path, records)
        loaded = read_records_csv(path, p_s=0.2, p_c=0.5)
        assert loaded[0].weight == pytest.approx(5.0)


class TestModelJSON:
    def test_round_trip_exact(self, tmp_path, rng):
        net = init_network((4, 6, 1), rng, dropout_rate=0.1)
        hazard = BernsteinHazard(m=4, c=0.0, u=2.5, eta=rng.normal(size=5))
        res = FitResult(hazard=hazard, net=net, spec=TransformationSpec(0.5), center=0.123456789123456789)
        path = tmp_path / "model.json"
        save_model_json(path, res)
        back = load_model_json(path)
        assert back.spec.r == res.spec.r
        assert np.array_equal(back.hazard.eta, res.hazard.eta)
        assert (back.hazard.m, back.hazard.c, back.hazard.u) == (4, 0.0, 2.5)
        for a, b in zip(res.net.weights, back.net.weights):
            assert np.array_equal(a, b)
        for a, b in zip(res.net.biases, back.net.biases):
            assert np.array_equal(a, b)
        assert back.center == res.center
        assert back.net.dropout_rate == 0.1


class TestReplication:
    def test_deterministic_rows(self):
        cfg = tiny_config(methods=("pro", "ltm"))
        a = run_replication(cfg, 3)
        b = run_replication(cfg, 3)
        assert a["pro"]["re"] == b["pro"]["re"]
        assert a["ltm"]["mspe"] == b["ltm"]["mspe"]

    def test_full_design_degeneracy(self):
        # p_s = 1, p_c = 1: the case-cohort sample is the whole cohort and the
        # same-size SRS is the cohort in order, so shared fit seeds give
        # identical PRO and SRS cells
        cfg = tiny_config(p_s=1.0, p_c=1.0, methods=("pro", "srs"))
        row = run_replication(cfg, 0)
        assert row["pro"]["re"] == row["srs"]["re"]
        assert row["pro"]["mspe"] == row["srs"]["mspe"]

    def test_diagnostics_present(self):
        cfg = tiny_config(methods=("pro",))
        row = run_replication(cfg, 1)
        assert row["pro"]["hazard_monotone"] is True
        assert row["pro"]["survival_monotone"] is True
        assert row["pro"]["center_dev"] <= 1e-12

    def test_design_none_rejects_sub(self):
        cfg = tiny_config(design="none", p_c=1.0, methods=("pro", "sub"))
        with pytest.raises(ConfigError):
            run_replication(cfg, 0)


class TestMonteCarlo:
    def test_single_rep_sd_zero(self, tmp_path):
        cfg = tiny_config(reps=1, methods=("ltm",))
        out = run_mc(cfg, jobs=1, tau_cache_path=str(tmp_path / "tau.json"))
        for row in out["aggregate"]:
            assert row["sd"] == 0.0
            assert math.isfinite(row["mean"])

    def test_exchangeable_aggregation(self):
        cfg = tiny_config(methods=("ltm",))
        rows = [run_replication(cfg, i) for i in range(3)]
        agg_a = aggregate(cfg, rows)
        agg_b = aggregate(cfg, rows[::-1])
        for ra, rb in zip(agg_a, agg_b):
            assert ra["mean"] == pytest.approx(rb["mean"], abs=1e-15)
            assert ra["sd"] == pytest.approx(rb["sd"], abs=1e-15)

    def test_constant_stream_sd_zero(self):
        cfg = tiny_config(methods=("pro",))
        rows = [
            {"rep": i, "pro": {"re": 0.5, "mspe": 0.001}} for i in range(5)
        ]
        agg = aggregate(cfg, rows)
        assert all(row["sd"] == 0.0 for row in agg)
        assert agg[0]["mean"] == 0.5

    def test_parallel_matches_serial(self, tmp_path):
        cfg = tiny_config(reps=2, methods=("ltm",))
        serial = run_mc(cfg, jobs=1, tau_cache_path=str(tmp_path / "a.json"))
        parallel = run_mc(cfg, jobs=2, tau_cache_path=str(tmp_path / "b.json"))
        for ra, rb in zip(serial["aggregate"], parallel["aggregate"]):
            assert ra["mean"] == rb["mean"]

    def test_tau_cache_round_trip(self, tmp_path):
        cfg = tiny_config(sim=SimConfig(n=400, g_case=1, r=0.0, target_event_rate=0.2))
        cache_file = str(tmp_path / "tau.json")
        from sievenet.dataio import load_tau_cache, save_tau_cache

        cache = {}
        tau1 = scenario_tau(cfg, cache)
        save_tau_cache(cache_file, cache)
        cache2 = load_tau_cache(cache_file)
        assert scenario_tau(cfg, cache2) == tau1


class TestCLI:
    def _write_config(self, tmp_path, extra=""):
        cfg = tmp_path / "run.toml"
        cfg.write_text(
            """
design = "case_cohort"
p_s = 0.3
p_c = 1.0
base_seed = 5
tau_cache = "%s"

[sim]
n = 300
g_case = 1
r = 0.0
target_event_rate = 0.2

[hp]
batch_size = 64
hidden_layers = 1
hidden_width = 8
lr_hazard = 0.02
lr_net = 0.01
max_epochs = 15
patience = 15
m = 3
%s
"""
            % (tmp_path / "tau.json", extra)
        )
        return str(cfg)

    def test_simulate_fit_evaluate_shap(self, tmp_path):
        cfg = self._write_config(tmp_path)
        data = str(tmp_path / "data.csv")
        model = str(tmp_path / "model.json")
        shap_out = str(tmp_path / "shap.csv")
        assert cli.main(["simulate", "--config", cfg, "--out", data]) == 0
        assert cli.main(["fit", "--config", cfg, "--data", data, "--out", model]) == 0
        assert cli.main(["evaluate", "--model", model, "--data", data, "--metrics", "ibs,re,mspe", "--config", cfg]) == 0
        assert cli.main(["shap", "--model", model, "--data", data, "--background-size", "20", "--out", shap_out]) == 0

    def test_mc_command(self, tmp_path):
        cfg = self._write_config(tmp_path)
        out = str(tmp_path / "mc.csv")
        assert cli.main(["mc", "--config", cfg, "--out", out, "--reps", "1", "--jobs", "1"]) == 0
        text = (tmp_path / "mc.csv").read_text()
        assert text.startswith("design,p_e,n,case,method,metric,mean,sd")

    def test_tune_command(self, tmp_path):
        cfg = self._write_config(tmp_path)
        grid = tmp_path / "grid.toml"
        grid.write_text(
            "batch_size = [64]\nhidden_layers = [1]\nhidden_width = [8]\n"
            "lr_hazard = [0.02]\nlr_net = [0.01]\nmax_epochs = [10]\npatience = [10]\nm = [3]\n"
        )
        out = str(tmp_path / "best.toml")
        assert cli.main(["tune", "--config", cfg, "--grid", str(grid), "--folds", "3", "--out", out]) == 0
        assert "hidden_width = 8" in (tmp_path / "best.toml").read_text()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("design = \"bogus\"\n[sim]\nn = 10\ng_case = 1\nr = 0.0\ntarget_event_rate = 0.2\n")
        assert cli.main(["mc", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == 2

    def test_grid_expansion_order(self, tmp_path):
        grid = tmp_path / "grid.toml"
        grid.write_text("hidden_width = [8, 16]\nhidden_layers = [1, 2]\n")
        points = load_grid(str(grid))
        assert [(p.hidden_width, p.hidden_layers) for p in points] == [(8, 1), (8, 2), (16, 1), (16, 2)]
