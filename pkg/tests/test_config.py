import pytest

from driftlab.config import ConfigError, load_config


def test_defaults_without_file():
    cfg = load_config(None, environ={})
    assert cfg.training.epochs == 50
    assert cfg.training.batch_size == 1
    assert cfg.training.lr == 0.001
    assert cfg.training.lam == 200.0
    assert cfg.training.beta == 10.0
    assert cfg.training.strategy == "streak"
    assert cfg.simulator.households == 3
    assert cfg.simulator.sample_interval == 10
    assert cfg.model.horizon == 10
    assert cfg.model.move_threshold == 0.5
    assert cfg.output.formats == ["csv", "json"]


def test_load_yaml_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "simulator:\n  households: 2\n  days: 4\n  train_days: 3\n"
        "  test_days: 1\ntraining:\n  epochs: 5\n  seeds: [1, 2]\n")
    cfg = load_config(path, environ={})
    assert cfg.simulator.households == 2
    assert cfg.training.epochs == 5
    assert cfg.training.seeds == [1, 2]
    # untouched sections keep defaults
    assert cfg.model.embed_dim == 16


def test_json_is_valid_yaml(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"training": {"epochs": 7}}')
    assert load_config(path, environ={}).training.epochs == 7


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("simulater:\n  households: 2\n")
    with pytest.raises(ConfigError, match="unknown config sections"):
        load_config(path, environ={})


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("training:\n  epochz: 5\n")
    with pytest.raises(ConfigError, match="unknown keys"):
        load_config(path, environ={})


def test_type_mismatch_rejected(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("training:\n  epochs: five\n")
    with pytest.raises(ConfigError, match="expected"):
        load_config(path, environ={})


def test_env_override():
    cfg = load_config(None, environ={"DRIFTLAB_TRAINING_EPOCHS": "9",
                                     "DRIFTLAB_SIMULATOR_SAMPLE_INTERVAL": "20",
                                     "DRIFTLAB_MODEL_HORIZON": "20",
                                     "DRIFTLAB_TRAINING_SEEDS": "[3, 4]"})
    assert cfg.training.epochs == 9
    assert cfg.simulator.sample_interval == 20
    assert cfg.training.seeds == [3, 4]


def test_env_override_beats_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("training:\n  epochs: 5\n")
    cfg = load_config(path, environ={"DRIFTLAB_TRAINING_EPOCHS": "12"})
    assert cfg.training.epochs == 12


def test_env_override_unknown_section():
    with pytest.raises(ConfigError, match="unrecognized override"):
        load_config(None, environ={"DRIFTLAB_TRAINER_EPOCHS": "1"})


def test_validation_batch_size():
    with pytest.raises(ConfigError, match="batch_size"):
        load_config(None, environ={"DRIFTLAB_TRAINING_BATCH_SIZE": "2"})


def test_validation_split_days(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("simulator:\n  days: 5\n  train_days: 4\n  test_days: 2\n")
    with pytest.raises(ConfigError, match="exceeds"):
        load_config(path, environ={})


def test_validation_horizon_multiple():
    with pytest.raises(ConfigError, match="multiple"):
        load_config(None, environ={"DRIFTLAB_MODEL_HORIZON": "15"})


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/cfg.yaml", environ={})


def test_malformed_yaml(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("training: [unterminated\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(path, environ={})
