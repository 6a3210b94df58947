import csv
import json

import numpy as np
import pytest
import yaml

from fairrobust.experiment import (
    ConfigError,
    DataSpec,
    ExperimentSpec,
    NoiseConfig,
    load_spec,
    prepare,
    read_config,
    run_experiment,
    shipped_configs,
    sweep,
    with_overrides,
)

SMALL_TRAIN = dict(tau=0.9, alpha=0.001, epochs=6, warm_start_epochs=2, batch_size=50, learning_rate=0.01)


def small_spec(**kw):
    base = dict(name="small", data=DataSpec(n_total=400), noise=NoiseConfig(rates=[0.1]),
                methods=["LR", "Ours"], metric="EO", seeds=[1, 2], train=dict(SMALL_TRAIN))
    base.update(kw)
    return ExperimentSpec(**base)


class TestSpec:
    def test_empty_methods(self):
        with pytest.raises(ConfigError):
            small_spec(methods=[])

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            small_spec(methods=["LR", "SVM"])

    def test_unknown_train_key(self):
        with pytest.raises(ConfigError):
            small_spec(train={"momentum": 0.9})

    def test_invalid_train_value(self):
        with pytest.raises(ValueError):
            small_spec(train={"tau": 2.0})

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError):
            ExperimentSpec.from_dict({"name": "x", "gpu": True})

    def test_round_trip(self):
        spec = small_spec(overrides={"Ours": {"alpha": 0.002}})
        again = ExperimentSpec.from_dict(yaml.safe_load(yaml.safe_dump(spec.to_dict())))
        assert again.to_dict() == spec.to_dict()
        assert again.config("Ours", 1).alpha == 0.002 and again.config("LR", 1).alpha == 0.001

    def test_clean_tau_follows_rate(self):
        spec = small_spec(noise=NoiseConfig(rates=[0.1, 0.2]), train=dict(SMALL_TRAIN, tau="clean"))
        assert spec.config("Ours", 1, 0.1).tau == pytest.approx(0.9)
        assert spec.config("Ours", 1, 0.2).tau == pytest.approx(0.8)

    def test_overrides(self):
        spec = with_overrides(small_spec(), seeds=[3], noise_rates=[0.2], noise_mode="random",
                              metric="DP", methods=["ITLM"], alpha=0.01)
        assert spec.seeds == [3] and spec.noise.rates == [0.2] and spec.noise.mode == "random"
        assert spec.metric == "DP" and spec.methods == ["ITLM"] and spec.train["alpha"] == 0.01
        with pytest.raises(ConfigError):
            with_overrides(small_spec(), colour="red")


class TestConfigFiles:
    def test_shipped_configs_load(self):
        names = shipped_configs()
        assert {"table1_eo", "table1_dp", "ablation", "rate_sweep"} <= set(names)
        for n in names:
            load_spec(n)

    def test_missing(self):
        with pytest.raises(ConfigError):
            read_config("no_such_config")

    def test_malformed(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("name: [unclosed\n")
        with pytest.raises(ConfigError):
            read_config(str(p))
        p.write_text("- a list\n")
        with pytest.raises(ConfigError):
            read_config(str(p))


class TestPrepare:
    def test_train_only_corrupted(self):
        clean = prepare(DataSpec(n_total=400), NoiseConfig(rates=[0.0], mode="random"), 0.0)
        noisy = prepare(DataSpec(n_total=400), NoiseConfig(rates=[0.1], mode="random"), 0.1)
        np.testing.assert_array_equal(clean.test.labels, noisy.test.labels)
        assert np.sum(clean.train.labels != noisy.train.labels) == noisy.flipped_ids.size == 25

    def test_standardized_on_train(self):
        p = prepare(DataSpec(n_total=400), NoiseConfig(rates=[0.0], mode="random"), 0.0)
        np.testing.assert_allclose(p.train.features.mean(axis=0), 0, atol=1e-12)
        assert p.train.m == 3  # two features plus the sensitive attribute

    def test_sensitive_feature_optional(self):
        p = prepare(DataSpec(n_total=400, include_sensitive_feature=False), NoiseConfig(rates=[0.0], mode="random"), 0.0)
        assert p.train.m == 2


class TestRun:
    def test_outputs(self, tmp_path):
        res = run_experiment(small_spec(), tmp_path)
        assert res.ok and len(res.cells) == 4
        for f in ("resolved_config.yaml", "summary.json", "table.csv", "table.txt"):
            assert (tmp_path / f).exists()
        assert len(list((tmp_path / "runs").glob("*.csv"))) == 4
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert len(summary["runs"]) == 4
        rows = list(csv.DictReader((tmp_path / "table.csv").open()))
        assert [r["Method"] for r in rows] == ["LR", "Ours"]
        assert "±" in rows[0]["Acc."]
        # the resolved config reproduces the run
        again = run_experiment(load_spec(str(tmp_path / "resolved_config.yaml")))
        assert [c.row for c in again.cells] == [c.row for c in res.cells]

    def test_rate_sweep_file(self, tmp_path):
        spec = small_spec(noise=NoiseConfig(rates=[0.1, 0.15, 0.2]), seeds=[1])
        run_experiment(spec, tmp_path)
        rows = list(csv.DictReader((tmp_path / "sweep.csv").open()))
        for m in spec.methods:
            assert sorted(float(r["noise_rate"]) for r in rows if r["method"] == m) == [0.1, 0.15, 0.2]
        assert (tmp_path / "table_rate0.15.txt").exists()

    def test_parallel_matches_serial(self):
        spec = small_spec()
        a = run_experiment(spec, jobs=1)
        b = run_experiment(spec, jobs=2)
        assert [c.row for c in a.cells] == [c.row for c in b.cells]

    def test_axis_sweep(self, tmp_path):
        out = sweep(small_spec(seeds=[1], methods=["Ours"]), "alpha", [0.0, 0.01], tmp_path)
        assert [v for v, _ in out] == [0.0, 0.01]
        rows = list(csv.DictReader((tmp_path / "sweep.csv").open()))
        assert [float(r["alpha"]) for r in rows] == [0.0, 0.01]
        with pytest.raises(ConfigError):
            sweep(small_spec(), "colour", [1])

    def test_failed_cell_reported(self):
        spec = small_spec(data=DataSpec(source="csv", csv_path="/nonexistent.csv",
                                        columns={"label": "y", "sensitive": "z"}))
        res = run_experiment(spec)
        assert not res.ok and len(res.failures) == 4
