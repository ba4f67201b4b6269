import os

import pytest

from v2x_scheduler.context import ConfigError, ExperimentConfig, TrainConfig, load_config


def test_config_init() -> None:
    config = ExperimentConfig(seed=3)
    assert config.seed == 3
    assert config.channel.bandwidth_hz == 300e3
    assert config.env.t_slots == 40


def test_config_init_with_env_vars(monkeypatch) -> None:
    monkeypatch.setenv("V2X_SEED", "99")
    monkeypatch.setenv("V2X_OUTPUT_DIR", "elsewhere")
    config = ExperimentConfig()
    assert config.seed == 99
    assert config.output_dir == "elsewhere"


def test_config_init_with_env_vars_and_passed_values(monkeypatch) -> None:
    monkeypatch.setenv("V2X_SEED", "99")
    config = ExperimentConfig(seed=5)
    assert config.seed == 5


def test_config_bad_env_var(monkeypatch) -> None:
    monkeypatch.setenv("V2X_JOBS", "many")
    with pytest.raises(ConfigError):
        ExperimentConfig()


def test_evolve_keeps_resolved_values(monkeypatch) -> None:
    config = ExperimentConfig(seed=5)
    monkeypatch.setenv("V2X_SEED", "99")
    assert config.evolve(jobs=2).seed == 5
    with pytest.raises(ConfigError):
        config.evolve(colour="red")


def test_load_defaults() -> None:
    config = load_config(None)
    assert config.eval.policies == ("nearest", "rr", "max_rate", "ddqn")
    assert config.train.hidden_dims == (500, 250, 125)


def test_load_file(tiny_config_file) -> None:
    config = load_config(tiny_config_file)
    assert config.seed == 7
    assert config.scenario.grid_h == 32
    assert config.scenario.sensor_range_m == 30.0
    assert config.train.hidden_dims == (16, 8)
    assert config.eval.bootstrap_resamples == 50
    assert config.channel.carrier_freq_hz == 5.9e9


def test_load_missing_file(tmp_path) -> None:
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_load_malformed_file(tmp_path) -> None:
    path = tmp_path / "bad.toml"
    path.write_text("seed = = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_unknown_key(tmp_path) -> None:
    path = tmp_path / "bad.toml"
    path.write_text("[env]\nslots = 3\n")
    with pytest.raises(ConfigError, match="unknown keys"):
        load_config(path)


def test_load_wrong_type(tmp_path) -> None:
    path = tmp_path / "bad.toml"
    path.write_text("[env]\nt_slots = 'many'\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_invalid_value(tmp_path) -> None:
    path = tmp_path / "bad.toml"
    path.write_text("[env]\nreward_mode = 'supervised'\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_resolved_episodes() -> None:
    assert TrainConfig().resolved_episodes("labeled") == 20000
    assert TrainConfig().resolved_episodes("label_free") == 30000
    assert TrainConfig(episodes=7).resolved_episodes("labeled") == 7


def test_to_dict_round_trips_values() -> None:
    data = ExperimentConfig(seed=4).to_dict()
    assert data["seed"] == 4
    assert data["env"]["loss"]["eta"] == 0.25
    assert "V2X_SEED" not in os.environ


@pytest.mark.parametrize(
    "line", ["episodes = 2.5", "seed = 1.0", "episodes = true", "seed = 'seven'"]
)
def test_load_optional_field_wrong_type(tmp_path, line) -> None:
    path = tmp_path / "bad.toml"
    path.write_text(f"[train]\n{line}\n")
    with pytest.raises(ConfigError, match="must be an integer"):
        load_config(path)


def test_load_optional_field(tmp_path) -> None:
    path = tmp_path / "ok.toml"
    path.write_text("[train]\nepisodes = 12\nseed = 3\nmax_grad_norm = 5\n")
    config = load_config(path)
    assert config.train.episodes == 12
    assert config.train.seed == 3
    assert config.train.max_grad_norm == 5.0
    assert isinstance(config.train.max_grad_norm, float)
