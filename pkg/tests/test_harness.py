import json
from pathlib import Path

import numpy as np
import pytest

from rskdemod.harness import (
    ConfigError,
    ExperimentConfig,
    build_manifest,
    load_config,
    load_manifest,
    persist_results,
    run_from_manifest,
    run_ser,
    run_sweep,
    ser_csv,
    sweep_csv,
    wilson_interval,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def tiny_raw(**overrides):
    raw = {
        "grid": {
            "dims": [1, 1, 1],
            "voxel_edge_um": 1.0,
            "diffusion_um2_per_s": 0.0,
            "boundary": "reflecting",
        },
        "transmitter": {"voxel": [1, 1, 1], "emission_rates": [4.0, 16.0]},
        "receiver": {
            "voxel": [1, 1, 1],
            "M": 5,
            "n_sites": 2,
            "lambdas": [3.0, 3.0],
            "mus": [1.0, 1.0],
        },
        "measurement": {"choices": [["C1"]]},
        "run": {
            "horizon_s": 1.0,
            "n_trials": 12,
            "n_moment_runs": 30,
            "moment_grid_points": 21,
            "base_seed": 9,
        },
    }
    for dotted, value in overrides.items():
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    return raw


class TestConfig:
    def test_missing_key_named(self):
        raw = tiny_raw()
        del raw["receiver"]["M"]
        with pytest.raises(ConfigError, match='missing key "receiver.M"'):
            ExperimentConfig(raw)

    def test_missing_section_named(self):
        raw = tiny_raw()
        del raw["run"]
        with pytest.raises(ConfigError, match='missing key "run.n_trials"'):
            ExperimentConfig(raw)

    def test_duplicate_emission_rates_rejected(self):
        with pytest.raises(ConfigError, match="distinct"):
            ExperimentConfig(tiny_raw(**{"transmitter.emission_rates": [5.0, 5.0]}))

    def test_unknown_measured_species_rejected(self):
        with pytest.raises(ConfigError, match="C7"):
            ExperimentConfig(tiny_raw(**{"measurement.choices": [["C7"]]}))

    def test_explicit_network_form(self):
        raw = tiny_raw()
        raw["receiver"] = {
            "voxel": [1, 1, 1],
            "M": 3,
            "receptor_species": "E",
            "species": ["S", "E", "C1"],
            "reactions": ["S + E -> C1 @ 2.0", "C1 -> S + E @ 1.0"],
        }
        config = ExperimentConfig(raw)
        net = config.build_network()
        assert net.species_names == ("S", "E", "C1")
        assert net.reactions[0].rate_constant == 2.0

    def test_shipped_configs_load(self):
        for name in ("three_site.toml", "five_site.toml", "quick.toml"):
            config = load_config(CONFIGS / name)
            system = config.build_system()
            assert system.n_channels > 0

    def test_with_override_list_index(self):
        config = ExperimentConfig(tiny_raw())
        swept = config.with_override("receiver.lambdas.1", 9.0)
        assert swept.build_network().reactions[2].rate_constant == 9.0
        assert config.raw["receiver"]["lambdas"][1] == 3.0  # original untouched

    def test_with_override_bad_path(self):
        config = ExperimentConfig(tiny_raw())
        with pytest.raises(ConfigError, match="sweep path"):
            config.with_override("receiver.gamma", 1.0)

    def test_hash_changes_with_content(self):
        a = ExperimentConfig(tiny_raw())
        b = ExperimentConfig(tiny_raw(**{"run.base_seed": 10}))
        assert a.hash() != b.hash()


class TestWilson:
    def test_interval_inside_unit_range(self):
        lo, hi = wilson_interval(0, 10)
        assert lo == 0.0 and 0 < hi < 0.5
        lo, hi = wilson_interval(10, 10)
        assert 0.5 < lo < 1.0 and hi == 1.0

    def test_nominal_coverage_on_bernoulli(self):
        rng = np.random.default_rng(123)
        p_true, n, reps = 0.3, 200, 2000
        covered = 0
        for _ in range(reps):
            k = rng.binomial(n, p_true)
            lo, hi = wilson_interval(k, n)
            covered += lo <= p_true <= hi
        assert 0.92 <= covered / reps <= 0.98

    def test_trials_required(self):
        with pytest.raises(ConfigError):
            wilson_interval(0, 0)


class TestRunSer:
    def test_deterministic_and_error_bounds(self):
        config = ExperimentConfig(tiny_raw())
        a = run_ser(config)
        b = run_ser(config)
        assert ser_csv(a, 2) == ser_csv(b, 2)
        entry = a.choice(("C1",))
        assert 0 <= entry.errors <= entry.trials == 12
        lo, hi = entry.interval
        assert 0.0 <= lo <= entry.ser <= hi <= 1.0
        assert sum(entry.confusion.values()) == entry.trials

    def test_informative_system_beats_chance(self):
        config = ExperimentConfig(tiny_raw(**{"run.n_trials": 60}))
        result = run_ser(config)
        assert result.choice(("C1",)).ser < 0.35

    def test_identical_rates_near_half(self):
        # With indistinguishable symbols the decision is a coin toss.
        raw = tiny_raw(**{"run.n_trials": 80})
        raw["transmitter"]["emission_rates"] = [8.0, 8.000001]
        result = run_ser(ExperimentConfig(raw))
        ser = result.choice(("C1",)).ser
        lo, hi = wilson_interval(result.choice(("C1",)).errors, 80)
        assert lo <= 0.5 <= hi

    def test_csv_layout(self):
        config = ExperimentConfig(tiny_raw())
        text = ser_csv(run_ser(config), 2)
        lines = text.strip().splitlines()
        header = lines[0].split(",")
        assert header[:6] == ["measured", "trials", "errors", "ser", "ci_low", "ci_high"]
        assert header[6:] == [
            "sent0_decided0",
            "sent0_decided1",
            "sent1_decided0",
            "sent1_decided1",
        ]
        assert len(lines) == 2  # one measurement choice


class TestRunSweep:
    def test_single_value_sweep_matches_run_ser(self):
        config = ExperimentConfig(tiny_raw())
        direct = run_ser(config)
        [(value, swept)] = run_sweep(config, "receiver.lambdas.0", [3.0])
        assert value == 3.0
        assert ser_csv(direct, 2) == ser_csv(swept, 2)

    def test_sweep_csv_row_per_value_and_choice(self):
        raw = tiny_raw(**{"run.n_trials": 6, "run.n_moment_runs": 10})
        raw["measurement"]["choices"] = [["C1"], ["C2"]]
        config = ExperimentConfig(raw)
        results = run_sweep(config, "receiver.lambdas.1", [1.0, 2.0, 3.0, 4.0])
        text = sweep_csv("receiver.lambdas.1", results, 2)
        lines = text.strip().splitlines()
        assert len(lines) == 1 + 4 * 2
        assert lines[1].startswith("receiver.lambdas.1,1.0,C1,")

    def test_more_receptors_do_not_hurt(self):
        raw = tiny_raw(**{"run.n_trials": 60, "run.n_moment_runs": 60})
        config = ExperimentConfig(raw)
        results = run_sweep(config, "receiver.M", [1, 6])
        ser_small = results[0][1].choice(("C1",))
        ser_large = results[1][1].choice(("C1",))
        lo_small, hi_small = ser_small.interval
        assert ser_large.ser <= hi_small


class TestManifest:
    def test_ser_round_trip_bit_identical(self, tmp_path):
        config = ExperimentConfig(tiny_raw())
        result = run_ser(config)
        text = ser_csv(result, 2)
        manifest = build_manifest(config, "ser", config.base_seed)
        written = persist_results(config, {"ser.csv": text}, manifest, tmp_path)
        again = run_from_manifest(load_manifest(written["manifest.json"]))
        assert again["ser.csv"].encode() == written["ser.csv"].read_bytes()

    def test_sweep_round_trip_bit_identical(self, tmp_path):
        config = ExperimentConfig(tiny_raw(**{"run.n_trials": 6, "run.n_moment_runs": 10}))
        sweep_def = {"param": "receiver.lambdas.0", "values": [2.0, 4.0]}
        results = run_sweep(config, sweep_def["param"], sweep_def["values"])
        text = sweep_csv(sweep_def["param"], results, 2)
        manifest = build_manifest(config, "sweep", config.base_seed, sweep=sweep_def)
        written = persist_results(config, {"sweep.csv": text}, manifest, tmp_path)
        again = run_from_manifest(load_manifest(written["manifest.json"]))
        assert again["sweep.csv"].encode() == written["sweep.csv"].read_bytes()

    def test_manifest_records_versions_and_hash(self, tmp_path):
        config = ExperimentConfig(tiny_raw())
        manifest = build_manifest(config, "ser", 9)
        assert manifest["config_sha256"] == config.hash()
        assert "numpy" in manifest["versions"]
        persist_results(config, {}, manifest, tmp_path)
        assert json.loads((tmp_path / "manifest.json").read_text())["base_seed"] == 9
