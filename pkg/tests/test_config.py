"""Tests for training and experiment configuration."""

import json

import pytest

from config import (
    CsvSource,
    ExperimentConfig,
    SplitSpec,
    SynthSource,
    ThresholdPolicy,
    TrainConfig,
    config_hash,
    layer_sizes_for_depth,
    load_experiment_config,
)
from errors import ConfigError


class TestLayerSizesForDepth:
    @pytest.mark.parametrize(
        "kind, depth, expected",
        [
            ("mlcddl", 1, (120,)),
            ("mlcddl", 3, (120, 80, 50)),
            ("mlcddl", 4, (120, 80, 50, 25)),
            ("mlcdtl", 2, (120, 80)),
            ("mlcdtl", 4, (120, 80, 40, 20)),
        ],
    )
    def test_sweep_widths(self, kind, depth, expected):
        assert layer_sizes_for_depth(kind, depth) == expected

    @pytest.mark.parametrize("depth", [0, 5])
    def test_depth_out_of_range(self, depth):
        with pytest.raises(ConfigError):
            layer_sizes_for_depth("mlcddl", depth)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            layer_sizes_for_depth("pca", 2)


class TestTrainConfig:
    def test_defaults(self):
        config = TrainConfig()
        assert (config.lam, config.mu, config.eps, config.max_iter, config.tol) == (1.0, 1.0, 0.1, 100, 1e-4)
        assert config.resolved("mlcddl").layer_sizes == (120, 80, 50)
        assert config.resolved("mlcdtl").layer_sizes == (120, 80, 40)

    def test_zero_label_weight_allowed(self):
        assert TrainConfig(lam=0.0).lam == 0.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"mu": 0.0},
            {"eps": -1.0},
            {"lam": -0.5},
            {"layer_sizes": ()},
            {"layer_sizes": (10, 9, 8, 7, 6)},
            {"layer_sizes": (10, 0)},
            {"seed": -1},
            {"seed": 2**64},
            {"tol": 0.0},
            {"clamp_delta": 0.2},
            {"max_iter": 100.5},
            {"max_iter": 0},
            {"infer_iter": 2.0},
            {"log_every": True},
            {"layer_sizes": (10, 4.5)},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)

    def test_dict_round_trip(self):
        config = TrainConfig(layer_sizes=(6, 5), lam=0.5, seed=2**63, ridge_delta=1e-6)
        assert TrainConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="unknown"):
            TrainConfig.from_dict({"learning_rate": 0.1})

    def test_fractional_iteration_count_from_json(self):
        with pytest.raises(ConfigError, match="max_iter must be a positive integer"):
            TrainConfig.from_dict(json.loads('{"max_iter": 100.5}'))


class TestExperimentConfig:
    def test_exactly_one_source(self):
        with pytest.raises(ConfigError):
            ExperimentConfig()
        with pytest.raises(ConfigError):
            ExperimentConfig(synth=SynthSource(), dataset="data")

    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(model="svm", synth=SynthSource())

    def test_invalid_sweep_depth(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(synth=SynthSource(), depths=(1, 5))

    def test_house_split_needs_real_data(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(synth=SynthSource(), split=SplitSpec(group_key="house"))

    def test_zero_appliances_rejected(self):
        with pytest.raises(ConfigError):
            SynthSource(appliances=0)

    def test_threshold_policy(self):
        with pytest.raises(ConfigError):
            ThresholdPolicy(policy="median")
        assert ThresholdPolicy(validation_fraction=0.0).validation_fraction == 0.0

    def test_dict_round_trip(self):
        config = ExperimentConfig(
            model="mlcdtl",
            train=TrainConfig(layer_sizes=(6, 4)),
            synth=SynthSource(appliances=3, windows=50),
            depths=(1, 2),
            standardize=True,
        )
        assert ExperimentConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config

    def test_scale_only_standardization(self):
        config = ExperimentConfig(synth=SynthSource(), standardize="scale")
        assert ExperimentConfig.from_dict(json.loads(json.dumps(config.to_dict()))).standardize == "scale"
        with pytest.raises(ConfigError, match="standardize"):
            ExperimentConfig(synth=SynthSource(), standardize="minmax")

    def test_mean_on_estimator(self):
        source = CsvSource(paths=("h1.csv",), aggregate="mains", appliances=("fridge",))
        assert source.mean_on_estimator == "instants"
        windows = CsvSource(paths=("h1.csv",), aggregate="mains", appliances=("fridge",), mean_on_estimator="windows")
        assert windows.mean_on_estimator == "windows"
        with pytest.raises(ConfigError, match="mean_on_estimator"):
            CsvSource(paths=("h1.csv",), aggregate="mains", appliances=("fridge",), mean_on_estimator="median")

    def test_unknown_top_level_field(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"synth": {}, "extra": 1})

    def test_missing_inputs_named(self, tmp_path):
        config = ExperimentConfig(dataset=str(tmp_path / "nowhere"))
        with pytest.raises(ConfigError, match="nowhere"):
            config.validate_paths()


class TestLoadExperimentConfig:
    def test_reads_file(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps({"format_version": 1, "model": "mlcdtl", "synth": {"windows": 10}}))
        config = load_experiment_config(path)
        assert config.model == "mlcdtl" and config.synth.windows == 10

    def test_reads_run_manifest(self, tmp_path):
        inner = ExperimentConfig(synth=SynthSource(seed=5))
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"kind": "run_manifest", "config": inner.to_dict()}))
        assert load_experiment_config(path) == inner

    def test_manifest_without_config(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"kind": "run_manifest"}))
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_experiment_config(tmp_path / "absent.json")

    def test_bad_version(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps({"format_version": 2, "synth": {}}))
        with pytest.raises(ConfigError):
            load_experiment_config(path)


class TestConfigHash:
    def test_stable_and_sensitive(self):
        a = ExperimentConfig(synth=SynthSource(seed=1))
        assert config_hash(a) == config_hash(ExperimentConfig(synth=SynthSource(seed=1)))
        assert config_hash(a) != config_hash(ExperimentConfig(synth=SynthSource(seed=2)))
        assert len(config_hash(a)) == 64
