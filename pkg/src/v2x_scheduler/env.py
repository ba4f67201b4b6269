"""The episodic scheduling MDP.

One episode covers one sensing interval of ``t_slots`` scheduling slots. Each slot the
scheduler grants the channel to one collaborator; the link then carries as many grid
cells as its accrued bits allow, chosen by priority score against the ego's initial
map, and the ego fuses them into its running map.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from v2x_scheduler.channel import (
    complex_normal,
    fading_correlation,
    fading_step,
    grid_budget,
    instantaneous_rate_bps,
    large_scale_gain,
    shadowing_step,
)
from v2x_scheduler.context import ChannelParams, EnvConfig, ExperimentConfig, ScenarioConfig
from v2x_scheduler.perception import (
    detection_loss,
    focal_cls_loss,
    fuse_confidence,
    mask_out,
    priority_scores,
    remaining_scores,
    selection_mask,
    utility,
)
from v2x_scheduler.scenario import ScenarioFrame, ScenarioWorld, initial_confidence, prepare_frame
from v2x_scheduler.state import FEATURES_PER_LINK, EnvState
from v2x_scheduler.utils import derive_seed, make_rng, write_csv

logger = logging.getLogger(__name__)

TRACE_HEADER = ("episode", "t", "action", "rate_bps", "budget", "utility", "l_cls", "reward")


def reward_labeled(
    delta_l_det: float, rate_term: float, lambda_rate: float = 0.02, lambda_det: float = 8.0
) -> float:
    """Return ``lambda_rate * C_r + lambda_det * dL_det``."""
    return lambda_rate * rate_term + lambda_det * delta_l_det


def reward_label_free(
    utility_val: float, rate_term: float, lambda_rate: float = 0.04, lambda_utility: float = 0.3
) -> float:
    """Return ``lambda_rate * C_r + lambda_utility * U``."""
    return lambda_rate * rate_term + lambda_utility * utility_val


@dataclass(frozen=True)
class StepInfo:
    """What happened during one slot."""

    t: int
    action: int
    rate_bps: float
    rate_mbps: float
    budget: int
    popcount: int
    utility: float
    l_cls: float
    l_det: float
    delta_l_det: float
    reward: float

    def as_dict(self) -> Dict[str, Any]:
        """Return the info as plain data."""
        return asdict(self)


@dataclass(frozen=True)
class SideInfo:
    """Side-channel data the baseline schedulers read at the start of a slot."""

    distances_m: np.ndarray
    slot_start_rates_bps: np.ndarray
    slot_index: int
    is_rsu: np.ndarray
    remaining_scores: np.ndarray


class SchedulingEnv:
    """Episodic environment over one scenario frame.

    All random draws (confidence maps, shadowing, fading) come from streams seeded by
    the episode seed and none depends on the chosen actions, so two runs with the same
    frame and seed see identical channels whatever the scheduler does.
    """

    def __init__(
        self,
        channel: ChannelParams,
        scenario: ScenarioConfig,
        env: EnvConfig,
        frame: Optional[ScenarioFrame | ScenarioWorld] = None,
        seed: int = 0,
    ) -> None:
        """Create an environment; ``frame`` and ``seed`` are the defaults of :meth:`reset`."""
        self.channel = channel
        self.scenario = scenario
        self.cfg = env
        self.frame = _as_frame(frame) if frame is not None else None
        self.seed = seed
        self.t = 0
        self.history: List[StepInfo] = []
        self.ego_maps: List[np.ndarray] = []

    @classmethod
    def from_config(
        cls, cfg: ExperimentConfig, frame: Optional[ScenarioFrame | ScenarioWorld] = None, seed: int = 0
    ) -> "SchedulingEnv":
        """Create an environment from a resolved experiment config."""
        return cls(cfg.channel, cfg.scenario, cfg.env, frame=frame, seed=seed)

    @property
    def world(self) -> ScenarioWorld:
        """The world of the current episode."""
        if self.frame is None:
            raise RuntimeError("environment has no scenario frame; pass one to reset()")
        return self.frame.world

    @property
    def n_collaborators(self) -> int:
        """Number of collaborators N."""
        return self.world.n_collaborators

    @property
    def n_actions(self) -> int:
        """Size of the action space (N, plus one when idling is allowed)."""
        return self.n_collaborators + (1 if self.cfg.allow_idle else 0)

    @property
    def state_dim(self) -> int:
        """Length of the observation vector."""
        return FEATURES_PER_LINK * self.n_collaborators

    @property
    def done(self) -> bool:
        """Whether the sensing interval is over."""
        return self.t >= self.cfg.t_slots

    def reset(self, frame: Optional[ScenarioFrame | ScenarioWorld] = None, seed: Optional[int] = None) -> EnvState:
        """Start an episode on ``frame`` (default: the stored frame) with ``seed``.

        Builds every unit's initial confidence map, sets the ego's running map to its
        own map, replays the shadowing of the frame's sequence and draws fresh
        small-scale fading for every link.
        """
        if frame is not None:
            self.frame = _as_frame(frame)
        if seed is not None:
            self.seed = seed
        world = self.world
        maps_rng = make_rng(self.seed, "scenario")
        self._rng = make_rng(self.seed, "channel")

        maps = np.stack(
            [
                initial_confidence(unit, world, maps_rng, self.scenario, self.frame.visibility[i])  # type: ignore[union-attr]
                for i, unit in enumerate(world.units)
            ]
        )
        self.tau_e0 = maps[0]
        self.tau_e = maps[0].copy()
        self.collab_maps = maps[1:].copy()
        self.gt = world.gt_map

        distances = world.distances_to_ego()
        n = len(distances)
        self.shadow_db = sequence_shadowing(self.frame, self.channel, self.seed)  # type: ignore[arg-type]
        self.alpha = np.asarray(large_scale_gain(distances, self.shadow_db, self.channel))
        self.mu = np.asarray(
            fading_correlation(world.relative_speeds(), self.channel.carrier_freq_hz, self.channel.subslot_duration_s)
        )
        self.h = np.asarray(complex_normal(self._rng, size=n))
        self.distances = distances

        self.t = 0
        self.history = []
        self.ego_maps = [self.tau_e.copy()]
        self.l_det = detection_loss(self.tau_e, self.gt, self.cfg.loss)
        return self.build_state()

    def build_state(self) -> EnvState:
        """Return the observation at the start of the current slot.

        ``R_j = tau_j^2 (1 - tau_e^t)`` against the running ego map; the link features
        use the slot-initial fading coefficient.
        """
        return build_state(self.collab_maps, self.tau_e, self.alpha, self.h, self.cfg, t=self.t)

    def slot_start_rates(self) -> np.ndarray:
        """Instantaneous rate of every link at the first sub-slot of the current slot."""
        return np.asarray(instantaneous_rate_bps(self.channel, self.alpha * np.abs(self.h) ** 2))

    def side_info(self) -> SideInfo:
        """Return what the baseline schedulers may look at."""
        return SideInfo(
            distances_m=self.distances.copy(),
            slot_start_rates_bps=self.slot_start_rates(),
            slot_index=self.t,
            is_rsu=np.array([u.is_rsu for u in self.world.collaborators]),
            remaining_scores=remaining_scores(self.collab_maps, self.tau_e),
        )

    def step(self, action: int) -> Tuple[EnvState, float, bool, StepInfo]:
        """Run one scheduling slot with the channel granted to ``action``.

        Raises:
            ValueError: ``action`` is not a valid index.
            RuntimeError: The episode is already over.
        """
        if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)):
            raise ValueError(f"action must be an integer, got {action!r}")
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside [0, {self.n_actions})")
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        idle = action >= self.n_collaborators

        # Every link fades every sub-slot; the scheduled one accrues bits first.
        subslot_rates = np.zeros(self.channel.subslots_per_slot)
        for s in range(self.channel.subslots_per_slot):
            if not idle:
                gain = self.alpha[action] * abs(self.h[action]) ** 2
                subslot_rates[s] = instantaneous_rate_bps(self.channel, gain)
            self.h = np.asarray(fading_step(self.h, self.mu, self._rng))
        budget = grid_budget(subslot_rates, self.channel.subslot_duration_s, self.channel.grid_payload_bits)
        rate_bps = float(np.mean(subslot_rates))

        tau_prev = self.tau_e
        if idle:
            mask = selection_mask(np.zeros_like(tau_prev), 0)
        else:
            tau_j = self.collab_maps[action]
            mask = selection_mask(priority_scores(tau_j, self.tau_e0), budget)
            self.tau_e = fuse_confidence(tau_prev, tau_j, mask, self.cfg.fusion)
            self.collab_maps[action] = mask_out(tau_j, mask)

        w = self.cfg.loss
        l_det = detection_loss(self.tau_e, self.gt, w)
        delta = self.l_det - l_det
        self.l_det = l_det
        u = utility(tau_prev, self.tau_e, mask, w)
        rate_mbps = rate_bps / 1e6
        if self.cfg.reward_mode == "labeled":
            reward = reward_labeled(delta, rate_mbps, self.cfg.lambda_rate_labeled, self.cfg.lambda_det)
        else:
            reward = reward_label_free(u, rate_mbps, self.cfg.lambda_rate_label_free, self.cfg.lambda_utility)

        info = StepInfo(
            t=self.t,
            action=action,
            rate_bps=rate_bps,
            rate_mbps=rate_mbps,
            budget=budget,
            popcount=mask.popcount,
            utility=u,
            l_cls=focal_cls_loss(self.tau_e, self.gt, w),
            l_det=l_det,
            delta_l_det=delta,
            reward=reward,
        )
        self.t += 1
        self.history.append(info)
        self.ego_maps.append(self.tau_e.copy())
        return self.build_state(), reward, self.done, info


def build_state(
    collab_maps: np.ndarray,
    tau_e: np.ndarray,
    alpha_linear: np.ndarray,
    h: np.ndarray,
    cfg: EnvConfig,
    t: int = 0,
) -> EnvState:
    """Assemble the normalized ``4N`` observation.

    Per collaborator: ``sum(R^2) * sum_r2_scale / cells``, ``max(R^2)``,
    ``(alpha_dB + alpha_offset_db) / alpha_scale_db`` and ``|h|^2``.
    """
    collab_maps = np.asarray(collab_maps, dtype=np.float64)
    r2 = (collab_maps**2 * (1.0 - np.asarray(tau_e, dtype=np.float64))[None]) ** 2
    sum_r2 = r2.sum(axis=(1, 2))
    max_r2 = r2.max(axis=(1, 2))
    alpha_linear = np.asarray(alpha_linear, dtype=np.float64)
    h_mag2 = np.abs(np.asarray(h)) ** 2
    n_cells = collab_maps.shape[1] * collab_maps.shape[2]
    alpha_db = 10.0 * np.log10(alpha_linear)
    vector = np.stack(
        [
            sum_r2 * cfg.sum_r2_scale / n_cells,
            max_r2,
            (alpha_db + cfg.alpha_offset_db) / cfg.alpha_scale_db,
            h_mag2,
        ],
        axis=1,
    ).ravel()
    return EnvState(sum_r2=sum_r2, max_r2=max_r2, alpha_linear=alpha_linear, h_mag2=h_mag2, vector=vector, t=t)


def sequence_shadowing(frame: ScenarioFrame, channel: ChannelParams, seed: int = 0) -> np.ndarray:
    """Return the shadowing in dB of every link of ``frame``.

    A stationary draw starts the frame's sequence and every recorded frame step
    advances it by the distance the link moved, so frames of one sequence see
    shadowing correlated over ``decorrelation_dist_m``. A frame outside any sequence
    gets a stationary draw seeded by ``seed``.
    """
    n = frame.world.n_collaborators
    key = frame.sequence_seed if frame.sequence_seed is not None else seed
    rng = make_rng(key, "shadowing")
    sigma, d_corr = channel.shadow_sigma_db, channel.decorrelation_dist_m
    # An infinite move decorrelates from the zero start.
    shadow = np.asarray(shadowing_step(np.zeros(n), np.full(n, np.inf), sigma, d_corr, rng))
    for moved in frame.link_moves_m:
        shadow = np.asarray(shadowing_step(shadow, moved, sigma, d_corr, rng))
    return shadow


def _as_frame(frame: ScenarioFrame | ScenarioWorld) -> ScenarioFrame:
    return frame if isinstance(frame, ScenarioFrame) else prepare_frame(frame)


class EpisodeFactory:
    """Hand out environments over a scenario pool, one per episode index.

    The frame and the episode seed depend only on ``(seed, name, episode)``, so the same
    episode index gives the same environment in any process and for any policy.
    """

    def __init__(self, cfg: ExperimentConfig, frames: Sequence[ScenarioFrame], seed: int, name: str = "train") -> None:
        """Bind the factory to a config, a pool and a named seed stream."""
        if not frames:
            raise ValueError("scenario pool is empty")
        self.cfg = cfg
        self.frames = list(frames)
        self.seed = seed
        self.name = name

    def __len__(self) -> int:
        """Number of frames in the pool."""
        return len(self.frames)

    def frame_index(self, episode: int) -> int:
        """Pool index used by ``episode``."""
        return int(make_rng(self.seed, f"{self.name}-frame", episode).integers(len(self.frames)))

    def __call__(self, episode: int) -> SchedulingEnv:
        """Return a fresh environment for ``episode``, ready for ``reset()``."""
        return SchedulingEnv.from_config(
            self.cfg,
            frame=self.frames[self.frame_index(episode)],
            seed=derive_seed(self.seed, f"{self.name}-episode", episode),
        )


def write_trace(path: str | Path, rows: Iterable[Mapping[str, Any]]) -> Path:
    """Stream per-slot step records (graph trace rows) to CSV."""
    return write_csv(path, TRACE_HEADER, ([row[k] for k in TRACE_HEADER] for row in rows))
