import pytest

from splat_graph.core.config import (
    ExperimentConfig,
    Schedule,
    load_experiment_config,
    parse_overrides,
    save_experiment_config,
    valid_keys
)
from splat_graph.core.errors import ConfigurationError


def test_schedule_decays_geometrically():
    schedule = Schedule(initial=1e-2, final=1e-4)
    assert schedule.at(0, 100) == pytest.approx(1e-2)
    assert schedule.at(50, 100) == pytest.approx(1e-3)
    assert schedule.at(100, 100) == pytest.approx(1e-4)
    assert schedule.at(500, 100) == pytest.approx(1e-4)


def test_constant_and_zero_schedules():
    assert Schedule(initial=0.3).at(70, 100) == 0.3
    assert Schedule(initial=0.4, final=0.0).at(25, 100) == pytest.approx(0.3)
    assert Schedule(initial=0.4, final=0.1).at(10, 0) == 0.4


def test_schedule_must_not_grow():
    with pytest.raises(ValueError):
        Schedule(initial=1e-4, final=1e-2)


def test_defaults():
    config = ExperimentConfig()
    assert config.trainer.iterations == 30000
    assert config.densify_stop == 18000
    assert config.blob_ceiling == 2_000_000
    assert config.densify.split_factor == 1.6


def test_overrides_are_typed():
    config = load_experiment_config(overrides=[
        "trainer.iterations=200",
        "trainer.use_lbs=false",
        "lr.sky.initial=0.5",
        "init.budget_scale=0.25"
    ])
    assert config.trainer.iterations == 200
    assert config.trainer.use_lbs is False
    assert config.lr.sky.initial == 0.5
    assert config.blob_ceiling == 500_000


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigurationError) as exc:
        load_experiment_config(overrides=["trainer.warp=9"])
    assert 'trainer.iterations' in exc.value.details['valid_keys']
    assert exc.value.exit_code == 2


def test_malformed_override():
    with pytest.raises(ConfigurationError):
        parse_overrides(["trainer.iterations"])


def test_out_of_range_value_is_rejected():
    with pytest.raises(ConfigurationError):
        load_experiment_config(overrides=["trainer.lambda_r=1.5"])


def test_save_and_load(tmp_path):
    config = load_experiment_config(overrides=["densify.interval=50", "model.sh_degree_rigid=1"])
    path = tmp_path / 'config.json'
    save_experiment_config(config, path)
    assert load_experiment_config(path) == config


def test_unknown_key_in_file(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text('{"trainer": {"iterations": 10, "speed": 1}}')
    with pytest.raises(ConfigurationError):
        load_experiment_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_experiment_config(tmp_path / 'absent.json')


def test_valid_keys_reach_nested_schedules():
    keys = valid_keys()
    assert 'lr.box_translation.final' in keys
    assert 'pose_prep.body_alignment' in keys
