import numpy as np
import pytest

from v2x_scheduler.context import EnvConfig, ExperimentConfig, ScenarioConfig, TrainConfig
from v2x_scheduler.scenario import SceneObject, ScenarioWorld, UnitState, generate_scenario, prepare_frame

TINY_TOML = """
seed = 7

[scenario]
grid_h = 32
grid_w = 32
n_collaborators = 3
min_objects = 2
max_objects = 4
occluder_density = 0.03
occluder_size_cells = 4
sensor_range_m = 30.0
rsu_sensor_range_m = 30.0
frames_per_sequence = 2

[env]
t_slots = 4

[train]
hidden_dims = [16, 8]
batch_size = 8
validate_every = 2
validation_frames = 2
train_frames = 4
replay_capacity = 500

[eval]
episodes = 2
test_frames = 3
bootstrap_resamples = 50
"""


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    """Keep V2X_* variables of the host out of the tests."""
    for name in ("V2X_SEED", "V2X_OUTPUT_DIR", "V2X_JOBS"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def tiny_scenario() -> ScenarioConfig:
    return ScenarioConfig(
        grid_h=32,
        grid_w=32,
        n_collaborators=3,
        min_objects=2,
        max_objects=4,
        occluder_density=0.03,
        occluder_size_cells=4,
        sensor_range_m=30.0,
        rsu_sensor_range_m=30.0,
        frames_per_sequence=2,
    )


@pytest.fixture
def tiny_config(tiny_scenario) -> ExperimentConfig:
    return ExperimentConfig(
        seed=7,
        scenario=tiny_scenario,
        env=EnvConfig(t_slots=4),
        train=TrainConfig(hidden_dims=(16, 8), batch_size=8, validation_frames=2, train_frames=4),
    ).validate()


@pytest.fixture
def tiny_world(tiny_scenario) -> ScenarioWorld:
    return generate_scenario(tiny_scenario, seed=3)


@pytest.fixture
def tiny_frame(tiny_world):
    return prepare_frame(tiny_world)


@pytest.fixture
def wall_world() -> ScenarioWorld:
    """A 20x20 world with one 2x3 object in front of the ego along row 10."""
    return ScenarioWorld(
        grid_h=20,
        grid_w=20,
        cell_size_m=1.0,
        units=(
            UnitState(x_m=2.5, y_m=10.5, sensor_range_m=40.0),
            UnitState(x_m=15.5, y_m=10.5, sensor_range_m=40.0),
        ),
        objects=(SceneObject(x_m=5.0, y_m=9.0, size_x_cells=2, size_y_cells=3),),
    )


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
