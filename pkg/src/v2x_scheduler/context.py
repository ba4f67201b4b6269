"""Define the configurable parameters for the simulator, the learner and the experiments.

Defaults reproduce the simulation and training tables of the reference setup. Every
field carries a human readable description in its metadata, which is also what
``v2x-sched --help`` style tooling and the resolved-config snapshot rely on.
"""

from __future__ import annotations

import copy
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar, Union, get_args, get_origin, get_type_hints

REWARD_MODES = ("labeled", "label_free")
FUSION_MODES = ("noisy_or", "max")
TARGET_RULES = ("vanilla", "double_q")
POLICY_NAMES = ("nearest", "rr", "max_rate", "ddqn")

ENV_PREFIX = "V2X_"


class ConfigError(ValueError):
    """Raised when a configuration file or value is invalid."""


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(kw_only=True)
class ChannelParams:
    """Radio parameters shared by every V2V / V2I link."""

    carrier_freq_hz: float = field(
        default=5.9e9, metadata={"description": "Carrier frequency f_c in Hz."}
    )
    bandwidth_hz: float = field(
        default=300e3,
        metadata={"description": "Channel bandwidth W in Hz. Zero disables every link."},
    )
    tx_power_dbm: float = field(
        default=23.0, metadata={"description": "Transmit power P in dBm."}
    )
    noise_psd_dbm_hz: float = field(
        default=-174.0,
        metadata={"description": "Noise power spectral density N_0 in dBm/Hz."},
    )
    noise_figure_db: float = field(
        default=9.0, metadata={"description": "Vehicle receiver noise figure in dB."}
    )
    antenna_gain_dbi: float = field(
        default=3.0,
        metadata={"description": "Vehicle antenna gain, applied at both link ends."},
    )
    subslot_duration_s: float = field(
        default=1e-3,
        metadata={"description": "Small-scale fading update interval (sub-slot) in seconds."},
    )
    subslots_per_slot: int = field(
        default=5, metadata={"description": "Sub-slots T_s per scheduling slot."}
    )
    grid_payload_bits: int = field(
        default=512,
        metadata={"description": "Payload D of one transmitted grid cell in bits."},
    )
    shadow_sigma_db: float = field(
        default=3.0, metadata={"description": "Log-normal shadowing standard deviation."}
    )
    decorrelation_dist_m: float = field(
        default=10.0, metadata={"description": "Shadowing decorrelation distance in m."}
    )
    min_distance_m: float = field(
        default=3.0,
        metadata={"description": "Distances below this are clamped before path loss."},
    )

    def validate(self) -> None:
        """Check the channel invariants."""
        _check(self.bandwidth_hz >= 0, "channel.bandwidth_hz must be >= 0")
        _check(self.subslots_per_slot >= 1, "channel.subslots_per_slot must be >= 1")
        _check(self.grid_payload_bits > 0, "channel.grid_payload_bits must be > 0")
        _check(self.subslot_duration_s > 0, "channel.subslot_duration_s must be > 0")
        _check(self.carrier_freq_hz > 0, "channel.carrier_freq_hz must be > 0")
        _check(self.shadow_sigma_db >= 0, "channel.shadow_sigma_db must be >= 0")
        _check(self.decorrelation_dist_m > 0, "channel.decorrelation_dist_m must be > 0")
        _check(self.min_distance_m > 0, "channel.min_distance_m must be > 0")

    @property
    def slot_duration_s(self) -> float:
        """Length of one scheduling slot."""
        return self.subslot_duration_s * self.subslots_per_slot


@dataclass(kw_only=True)
class ScenarioConfig:
    """Synthetic intersection generator settings and the confidence surrogate."""

    grid_h: int = field(default=64, metadata={"description": "Grid rows H."})
    grid_w: int = field(default=64, metadata={"description": "Grid columns W."})
    cell_size_m: float = field(default=1.0, metadata={"description": "Cell edge in m."})
    n_collaborators: int = field(
        default=4, metadata={"description": "Number of collaborators N (CAVs + RSU)."}
    )
    include_rsu: bool = field(
        default=True,
        metadata={"description": "Flag the last collaborator as a static roadside unit."},
    )
    min_objects: int = field(default=12, metadata={"description": "Fewest objects."})
    max_objects: int = field(default=20, metadata={"description": "Most objects."})
    object_length_cells: int = field(
        default=4, metadata={"description": "Object footprint length in cells."}
    )
    object_width_cells: int = field(
        default=2, metadata={"description": "Object footprint width in cells."}
    )
    occluder_density: float = field(
        default=0.06,
        metadata={"description": "Fraction of the grid covered by static opaque blocks."},
    )
    occluder_size_cells: int = field(
        default=6, metadata={"description": "Edge of a square static occluder block."}
    )
    sensor_range_m: float = field(
        default=20.0, metadata={"description": "Vehicle sensing radius in m."}
    )
    rsu_sensor_range_m: float = field(
        default=25.0, metadata={"description": "Roadside unit sensing radius in m."}
    )
    max_speed_kmh: float = field(
        default=25.0, metadata={"description": "Upper bound of absolute vehicle speed."}
    )
    force_occlusion: bool = field(
        default=True,
        metadata={
            "description": "Plant an object hidden from the ego behind a blocker, with a "
            "collaborator that sees it."
        },
    )
    base_hit: float = field(
        default=0.9, metadata={"description": "Confidence on visible occupied cells."}
    )
    base_miss: float = field(
        default=0.05, metadata={"description": "Confidence on visible empty cells."}
    )
    occluded_prior: float = field(
        default=0.05, metadata={"description": "Confidence on cells the unit cannot see."}
    )
    confidence_noise_std: float = field(
        default=0.03, metadata={"description": "Gaussian perturbation of every cell."}
    )
    false_positive_prob: float = field(
        default=0.01,
        metadata={"description": "Probability of a false positive on a visible empty cell."},
    )
    false_positive_low: float = field(
        default=0.5, metadata={"description": "Lower bound of false positive confidence."}
    )
    false_positive_high: float = field(
        default=0.9, metadata={"description": "Upper bound of false positive confidence."}
    )
    frames_per_sequence: int = field(
        default=5,
        metadata={"description": "Consecutive frames generated per sequence in a pool."},
    )
    frame_interval_s: float = field(
        default=0.2, metadata={"description": "Time between consecutive frames."}
    )

    def validate(self) -> None:
        """Check the scenario invariants."""
        _check(self.grid_h > 0 and self.grid_w > 0, "scenario grid must be non-empty")
        _check(self.cell_size_m > 0, "scenario.cell_size_m must be > 0")
        _check(self.n_collaborators >= 1, "scenario.n_collaborators must be >= 1")
        _check(
            0 <= self.min_objects <= self.max_objects,
            "scenario object count range must satisfy 0 <= min <= max",
        )
        _check(
            self.object_length_cells >= 1 and self.object_width_cells >= 1,
            "scenario object footprint must be at least one cell",
        )
        _check(0.0 <= self.occluder_density < 1.0, "scenario.occluder_density in [0, 1)")
        _check(self.occluder_size_cells >= 1, "scenario.occluder_size_cells must be >= 1")
        _check(self.sensor_range_m > 0, "scenario.sensor_range_m must be > 0")
        _check(self.rsu_sensor_range_m > 0, "scenario.rsu_sensor_range_m must be > 0")
        _check(0.0 <= self.max_speed_kmh <= 25.0, "scenario.max_speed_kmh in [0, 25]")
        for name in ("base_hit", "base_miss", "occluded_prior", "false_positive_prob"):
            value = getattr(self, name)
            _check(0.0 <= value <= 1.0, f"scenario.{name} must lie in [0, 1]")
        _check(self.confidence_noise_std >= 0, "scenario.confidence_noise_std must be >= 0")
        _check(
            0.0 <= self.false_positive_low <= self.false_positive_high <= 1.0,
            "scenario false positive range must lie in [0, 1] and be ordered",
        )
        _check(self.frames_per_sequence >= 1, "scenario.frames_per_sequence must be >= 1")
        _check(self.frame_interval_s > 0, "scenario.frame_interval_s must be > 0")


@dataclass(kw_only=True)
class LossWeights:
    """Detection-loss weights, focal-loss shape and the two decision thresholds."""

    lambda_cls: float = field(default=1.0, metadata={"description": "Weight of L_cls."})
    lambda_loc: float = field(
        default=0.0,
        metadata={"description": "Weight of L_loc; the surrogate has no regression head."},
    )
    lambda_dir: float = field(
        default=0.0,
        metadata={"description": "Weight of L_dir; the surrogate has no direction head."},
    )
    eta: float = field(default=0.25, metadata={"description": "Focal class balance."})
    beta: float = field(default=2.0, metadata={"description": "Focal focusing exponent."})
    zeta: float = field(
        default=0.5, metadata={"description": "Classification threshold on confidence."}
    )
    xi: float = field(
        default=0.05, metadata={"description": "Squared-change threshold of the utility."}
    )

    def validate(self) -> None:
        """Check the loss-weight invariants."""
        for f in fields(self):
            _check(getattr(self, f.name) >= 0, f"env.loss.{f.name} must be >= 0")
        _check(0.0 < self.zeta < 1.0, "env.loss.zeta must lie in (0, 1)")
        _check(0.0 < self.xi < 1.0, "env.loss.xi must lie in (0, 1)")


@dataclass(kw_only=True)
class EnvConfig:
    """Episode structure, reward design and state normalization."""

    t_slots: int = field(
        default=40, metadata={"description": "Scheduling slots per sensing interval."}
    )
    reward_mode: str = field(
        default="label_free",
        metadata={"description": "Reward variant: 'labeled' or 'label_free'."},
    )
    lambda_rate_labeled: float = field(
        default=0.02, metadata={"description": "Rate weight of the labeled reward."}
    )
    lambda_det: float = field(
        default=8.0, metadata={"description": "Loss-reduction weight of the labeled reward."}
    )
    lambda_rate_label_free: float = field(
        default=0.04, metadata={"description": "Rate weight of the label-free reward."}
    )
    lambda_utility: float = field(
        default=0.3, metadata={"description": "Utility weight of the label-free reward."}
    )
    alpha_offset_db: float = field(
        default=100.0, metadata={"description": "State feature: (alpha_dB + offset) / scale."}
    )
    alpha_scale_db: float = field(
        default=50.0, metadata={"description": "State feature: (alpha_dB + offset) / scale."}
    )
    sum_r2_scale: float = field(
        default=10.0,
        metadata={"description": "State feature: sum(R^2) * scale / number of cells."},
    )
    fusion: str = field(
        default="noisy_or", metadata={"description": "Fusion surrogate: 'noisy_or' or 'max'."}
    )
    allow_idle: bool = field(
        default=False,
        metadata={"description": "Add an extra action that schedules no link."},
    )
    loss: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> None:
        """Check the environment invariants."""
        _check(self.t_slots >= 1, "env.t_slots must be >= 1")
        _check(self.reward_mode in REWARD_MODES, f"env.reward_mode must be one of {REWARD_MODES}")
        _check(self.fusion in FUSION_MODES, f"env.fusion must be one of {FUSION_MODES}")
        for name in (
            "lambda_rate_labeled",
            "lambda_det",
            "lambda_rate_label_free",
            "lambda_utility",
        ):
            _check(getattr(self, name) >= 0, f"env.{name} must be >= 0")
        _check(self.alpha_scale_db > 0, "env.alpha_scale_db must be > 0")
        self.loss.validate()


@dataclass(kw_only=True)
class TrainConfig:
    """Deep Q-learning hyperparameters."""

    episodes: Optional[int] = field(
        default=None,
        metadata={
            "description": "Training episodes; unset means 20000 for the labeled reward and "
            "30000 for the label-free reward."
        },
    )
    epsilon_start: float = field(default=1.0, metadata={"description": "Initial epsilon."})
    epsilon_end: float = field(default=0.02, metadata={"description": "Final epsilon."})
    epsilon_decay_episodes: int = field(
        default=16000, metadata={"description": "Episodes of linear epsilon decay."}
    )
    target_sync_every: int = field(
        default=10, metadata={"description": "Episodes between target-network copies."}
    )
    gamma: float = field(default=0.99, metadata={"description": "Discount factor."})
    batch_size: int = field(default=256, metadata={"description": "Mini-batch size."})
    learning_rate: float = field(default=1e-4, metadata={"description": "Step size."})
    momentum: float = field(default=0.9, metadata={"description": "Momentum coefficient."})
    replay_capacity: int = field(
        default=100_000, metadata={"description": "Replay memory capacity."}
    )
    hidden_dims: Tuple[int, ...] = field(
        default=(500, 250, 125), metadata={"description": "Hidden layer widths."}
    )
    target_rule: str = field(
        default="double_q",
        metadata={"description": "Bootstrap target: 'vanilla' (max under target) or 'double_q'."},
    )
    max_grad_norm: Optional[float] = field(
        default=10.0,
        metadata={"description": "Global gradient-norm clip; unset disables clipping."},
    )
    validate_every: int = field(
        default=100, metadata={"description": "Episodes between validation runs."}
    )
    validation_frames: int = field(
        default=15, metadata={"description": "Fixed frames in the validation set."}
    )
    train_frames: int = field(
        default=128, metadata={"description": "Frames in the training scenario pool."}
    )
    seed: Optional[int] = field(
        default=None,
        metadata={"description": "Learner seed; unset derives it from the master seed."},
    )

    def validate(self) -> None:
        """Check the training invariants."""
        _check(self.episodes is None or self.episodes >= 0, "train.episodes must be >= 0")
        _check(0.0 <= self.epsilon_end <= 1.0, "train.epsilon_end must lie in [0, 1]")
        _check(0.0 <= self.epsilon_start <= 1.0, "train.epsilon_start must lie in [0, 1]")
        _check(self.epsilon_decay_episodes >= 0, "train.epsilon_decay_episodes must be >= 0")
        _check(0.0 <= self.gamma <= 1.0, "train.gamma must lie in [0, 1]")
        _check(self.batch_size >= 1, "train.batch_size must be >= 1")
        _check(self.learning_rate > 0, "train.learning_rate must be > 0")
        _check(0.0 <= self.momentum < 1.0, "train.momentum must lie in [0, 1)")
        _check(self.replay_capacity >= 1, "train.replay_capacity must be >= 1")
        _check(self.target_sync_every >= 1, "train.target_sync_every must be >= 1")
        _check(all(h >= 1 for h in self.hidden_dims), "train.hidden_dims must be positive")
        _check(self.target_rule in TARGET_RULES, f"train.target_rule must be one of {TARGET_RULES}")
        _check(
            self.max_grad_norm is None or self.max_grad_norm > 0,
            "train.max_grad_norm must be > 0",
        )
        _check(self.validate_every >= 1, "train.validate_every must be >= 1")
        _check(self.validation_frames >= 1, "train.validation_frames must be >= 1")
        _check(self.train_frames >= 1, "train.train_frames must be >= 1")

    def resolved_episodes(self, reward_mode: str) -> int:
        """Return the episode count, falling back to the reward-specific default."""
        if self.episodes is not None:
            return self.episodes
        return 20000 if reward_mode == "labeled" else 30000


@dataclass(kw_only=True)
class EvalConfig:
    """Paired evaluation and sweep settings."""

    episodes: int = field(default=500, metadata={"description": "Testing episodes."})
    test_frames: int = field(
        default=100, metadata={"description": "Frames in the test scenario pool."}
    )
    policies: Tuple[str, ...] = field(
        default=POLICY_NAMES, metadata={"description": "Policies to evaluate."}
    )
    bandwidths_hz: Tuple[float, ...] = field(
        default=(200e3, 300e3, 400e3, 500e3, 600e3),
        metadata={"description": "Bandwidth sweep values in Hz."},
    )
    slots_list: Tuple[int, ...] = field(
        default=(4, 10, 20),
        metadata={"description": "Short sensing-interval sweep in scheduling slots."},
    )
    nearest_includes_rsu: bool = field(
        default=False,
        metadata={"description": "Let the nearest-link baseline pick the roadside unit."},
    )
    bootstrap_resamples: int = field(
        default=1000, metadata={"description": "Resamples for 95% bootstrap intervals."}
    )
    case_study_bandwidth_hz: float = field(
        default=200e3,
        metadata={"description": "Bandwidth of the case-study trace; replaces channel.bandwidth_hz."},
    )

    def validate(self) -> None:
        """Check the evaluation invariants."""
        _check(self.episodes >= 1, "eval.episodes must be >= 1")
        _check(self.test_frames >= 1, "eval.test_frames must be >= 1")
        unknown = set(self.policies) - set(POLICY_NAMES)
        _check(not unknown, f"eval.policies has unknown names {sorted(unknown)}")
        _check(all(w > 0 for w in self.bandwidths_hz), "eval.bandwidths_hz must be positive")
        _check(all(t >= 1 for t in self.slots_list), "eval.slots_list must be positive")
        _check(self.bootstrap_resamples >= 10, "eval.bootstrap_resamples must be >= 10")
        _check(self.case_study_bandwidth_hz >= 0, "eval.case_study_bandwidth_hz must be >= 0")


@dataclass(kw_only=True)
class ExperimentConfig:
    """The complete, resolved configuration of one experiment run."""

    seed: int = field(
        default=0, metadata={"description": "Master seed; every random stream derives from it."}
    )
    output_dir: str = field(
        default="runs", metadata={"description": "Directory receiving run artifacts."}
    )
    jobs: int = field(
        default=1, metadata={"description": "Worker processes for evaluation episodes."}
    )
    channel: ChannelParams = field(default_factory=ChannelParams)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self) -> None:
        """Fetch env vars for top-level attributes that were not passed as args."""
        for f in fields(self):
            if not f.init or f.default is MISSING:
                continue
            raw = os.environ.get(f"{ENV_PREFIX}{f.name.upper()}")
            if raw is None or getattr(self, f.name) != f.default:
                continue
            try:
                setattr(self, f.name, type(f.default)(raw))
            except ValueError as exc:
                raise ConfigError(f"{ENV_PREFIX}{f.name.upper()}={raw!r}: {exc}") from exc

    def validate(self) -> "ExperimentConfig":
        """Check every section and return ``self`` for chaining."""
        _check(self.jobs >= 1, "jobs must be >= 1")
        self.channel.validate()
        self.scenario.validate()
        self.env.validate()
        self.train.validate()
        self.eval.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        """Return the resolved configuration as plain data."""
        return asdict(self)

    def evolve(self, **changes: Any) -> "ExperimentConfig":
        """Return a shallow copy with ``changes`` applied.

        Unlike ``dataclasses.replace`` the environment fallbacks are not re-applied, so
        values resolved earlier stay as they are.
        """
        new = copy.copy(self)
        for key, value in changes.items():
            if not hasattr(new, key):
                raise ConfigError(f"unknown config field {key!r}")
            setattr(new, key, value)
        return new


T = TypeVar("T")


def _optional_inner(hint: Any) -> type:
    """Return ``X`` for an ``Optional[X]`` annotation."""
    if get_origin(hint) is Union:
        inner = [arg for arg in get_args(hint) if arg is not type(None)]
        if len(inner) == 1:
            return inner[0]
    raise TypeError(f"unsupported optional annotation {hint!r}")


def _coerce(name: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        _check(isinstance(value, bool), f"{name} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        _check(isinstance(value, int) and not isinstance(value, bool), f"{name} must be an integer")
        return value
    if isinstance(default, float):
        _check(
            isinstance(value, (int, float)) and not isinstance(value, bool),
            f"{name} must be a number",
        )
        return float(value)
    if isinstance(default, str):
        _check(isinstance(value, str), f"{name} must be a string")
        return value
    if isinstance(default, tuple):
        _check(isinstance(value, list), f"{name} must be a list")
        if default:
            return tuple(_coerce(f"{name}[]", default[0], v) for v in value)
        return tuple(value)
    return value


def build_section(cls: Type[T], data: Dict[str, Any], section: str) -> T:
    """Build a config dataclass from a mapping, rejecting unknown keys.

    Args:
        cls: The config dataclass to build.
        data: Parsed key/value mapping for that section.
        section: Dotted section name used in error messages.
    """
    _check(isinstance(data, dict), f"[{section}] must be a table")
    known = {f.name: f for f in fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(data) - set(known))
    _check(not unknown, f"unknown keys in [{section}]: {unknown}")
    defaults = cls()
    hints = get_type_hints(cls)
    kwargs: Dict[str, Any] = {}
    for key, value in data.items():
        current = getattr(defaults, key)
        name = f"{section}.{key}" if section else key
        if is_dataclass(current):
            kwargs[key] = build_section(type(current), value, name)
        elif current is None:
            kwargs[key] = _coerce(name, _optional_inner(hints[key])(), value)
        else:
            kwargs[key] = _coerce(name, current, value)
    return cls(**kwargs)


def load_config(path: Optional[str | Path] = None) -> ExperimentConfig:
    """Load and validate an experiment config from a TOML file.

    Args:
        path: TOML file; ``None`` yields the default configuration.

    Raises:
        ConfigError: The file is missing, malformed, or holds unknown or invalid keys.
    """
    if path is None:
        return ExperimentConfig().validate()
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return build_section(ExperimentConfig, data, "").validate()
