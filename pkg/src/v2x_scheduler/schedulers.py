"""Baseline schedulers, the trained-policy wrapper and the evaluation harness.

Every policy is evaluated on the same episodes: the frame and the channel seed of
episode ``k`` depend only on ``(seed, k)``, and no random draw in the environment depends
on the actions taken, so metric differences between policies come from the decisions
alone.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import bootstrap, spearmanr

from v2x_scheduler.context import ExperimentConfig
from v2x_scheduler.ddqn import DDQNAgent, QNetworkParams, forward
from v2x_scheduler.env import EpisodeFactory, SchedulingEnv, SideInfo, write_trace
from v2x_scheduler.graph import Policy, run_episode
from v2x_scheduler.perception import focal_cls_loss, grid_metrics
from v2x_scheduler.scenario import ScenarioFrame
from v2x_scheduler.state import EnvState
from v2x_scheduler.utils import write_csv, write_map_csv, write_pgm

logger = logging.getLogger(__name__)

METRIC_NAMES = (
    "f1",
    "precision",
    "recall",
    "final_l_cls",
    "final_l_det",
    "mean_rate_mbps",
    "total_utility",
    "delta_l_cls",
    "episode_return",
)

REPORT_HEADER = (
    "policy",
    "bandwidth_hz",
    "t_slots",
    "episodes",
    *METRIC_NAMES,
    "f1_ci_low",
    "f1_ci_high",
    "rate_ci_low",
    "rate_ci_high",
    "spearman_utility_dl_cls",
)


def nearest_policy(distances: Sequence[float], eligible: Optional[Sequence[bool]] = None) -> int:
    """Index of the closest eligible collaborator; ties go to the lowest index."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("no collaborators to schedule")
    if eligible is not None:
        mask = np.asarray(eligible, dtype=bool)
        if mask.any():
            d = np.where(mask, d, np.inf)
    return int(np.argmin(d))


def round_robin_policy(slot_index: int, n: int) -> int:
    """Cycle through the links in index order."""
    if n < 1:
        raise ValueError("no collaborators to schedule")
    return slot_index % n


def max_rate_policy(slot_start_rates: Sequence[float]) -> int:
    """Index of the fastest link at the start of the slot; ties go to the lowest index."""
    rates = np.asarray(slot_start_rates, dtype=np.float64)
    if rates.size == 0:
        raise ValueError("no collaborators to schedule")
    return int(np.argmax(rates))


@dataclass
class NearestPolicy:
    """Schedule the closest CAV, optionally letting the roadside unit compete."""

    include_rsu: bool = False
    name: str = "nearest"

    def select(self, state: EnvState, info: SideInfo) -> int:
        """Pick the nearest eligible link."""
        eligible = None if self.include_rsu else ~info.is_rsu
        return nearest_policy(info.distances_m, eligible)


@dataclass
class RoundRobinPolicy:
    """Let the links take turns."""

    name: str = "rr"

    def select(self, state: EnvState, info: SideInfo) -> int:
        """Pick ``slot mod N``."""
        return round_robin_policy(info.slot_index, len(info.distances_m))


@dataclass
class MaxRatePolicy:
    """Schedule the link with the highest slot-start rate."""

    name: str = "max_rate"

    def select(self, state: EnvState, info: SideInfo) -> int:
        """Pick the fastest link."""
        return max_rate_policy(info.slot_start_rates_bps)


@dataclass
class TrainedPolicy:
    """Greedy policy of a trained Q-network."""

    params: QNetworkParams
    name: str = "ddqn"

    @classmethod
    def from_agent(cls, agent: DDQNAgent) -> "TrainedPolicy":
        """Snapshot an agent's online network."""
        return cls(agent.online.copy())

    def select(self, state: EnvState, info: SideInfo) -> int:
        """Pick the argmax of the Q-values."""
        return int(np.argmax(forward(self.params, state)))


def build_policies(
    names: Sequence[str], cfg: ExperimentConfig, agent: Optional[DDQNAgent] = None
) -> List[Policy]:
    """Instantiate policies by name; ``ddqn`` requires ``agent``."""
    policies: List[Policy] = []
    for name in names:
        if name == "nearest":
            policies.append(NearestPolicy(include_rsu=cfg.eval.nearest_includes_rsu))
        elif name == "rr":
            policies.append(RoundRobinPolicy())
        elif name == "max_rate":
            policies.append(MaxRatePolicy())
        elif name == "ddqn":
            if agent is None:
                raise ValueError("policy 'ddqn' needs a trained checkpoint")
            policies.append(TrainedPolicy.from_agent(agent))
        else:
            raise ValueError(f"unknown policy {name!r}")
    return policies


@dataclass
class EpisodeMetrics:
    """Outcome of one evaluation episode."""

    episode: int
    f1: float
    precision: float
    recall: float
    final_l_cls: float
    final_l_det: float
    mean_rate_mbps: float
    total_utility: float
    delta_l_cls: float
    episode_return: float


@dataclass
class MetricsReport:
    """Per-policy means over paired episodes, with 95% bootstrap intervals."""

    policy: str
    episodes: int
    means: Dict[str, float]
    f1_ci: Tuple[float, float]
    rate_ci: Tuple[float, float]
    spearman_utility_dl_cls: float
    bandwidth_hz: float
    t_slots: int
    per_episode: List[EpisodeMetrics] = field(default_factory=list, repr=False)

    def row(self) -> List[Any]:
        """Return the report as one CSV row in :data:`REPORT_HEADER` order."""
        return [
            self.policy,
            float(self.bandwidth_hz),
            self.t_slots,
            self.episodes,
            *(float(self.means[m]) for m in METRIC_NAMES),
            float(self.f1_ci[0]),
            float(self.f1_ci[1]),
            float(self.rate_ci[0]),
            float(self.rate_ci[1]),
            float(self.spearman_utility_dl_cls),
        ]


def write_reports(path: str | Path, reports: Sequence[MetricsReport]) -> Path:
    """Write reports as CSV."""
    return write_csv(path, REPORT_HEADER, (r.row() for r in reports))


def format_reports(reports: Sequence[MetricsReport]) -> str:
    """Render reports as a fixed-width table."""
    cols = ("policy", "W [kHz]", "T", "F1", "precision", "recall", "rate [Mbps]", "utility")
    lines = ["  ".join(f"{c:>11}" for c in cols)]
    for r in reports:
        values = (
            r.policy,
            f"{r.bandwidth_hz / 1e3:.0f}",
            str(r.t_slots),
            f"{r.means['f1']:.4f}",
            f"{r.means['precision']:.4f}",
            f"{r.means['recall']:.4f}",
            f"{r.means['mean_rate_mbps']:.4f}",
            f"{r.means['total_utility']:.3f}",
        )
        lines.append("  ".join(f"{v:>11}" for v in values))
    return "\n".join(lines)


def _episode_metrics(
    cfg: ExperimentConfig, policy: Policy, frames: Sequence[ScenarioFrame], seed: int, episode: int
) -> EpisodeMetrics:
    factory = EpisodeFactory(cfg, frames, seed, name="eval")
    env = factory(episode)
    final = run_episode(env, policy, episode=episode)
    trace = final["trace"]
    w = cfg.env.loss
    scores = grid_metrics(env.tau_e, env.gt, w.zeta)
    initial_l_cls = focal_cls_loss(env.ego_maps[0], env.gt, w)
    return EpisodeMetrics(
        episode=episode,
        f1=scores["f1"],
        precision=scores["precision"],
        recall=scores["recall"],
        final_l_cls=trace[-1]["l_cls"],
        final_l_det=trace[-1]["l_det"],
        mean_rate_mbps=float(np.mean([row["rate_mbps"] for row in trace])),
        total_utility=float(sum(row["utility"] for row in trace)),
        delta_l_cls=initial_l_cls - trace[-1]["l_cls"],
        episode_return=float(final["episode_return"]),
    )


def _run_chunk(args: Tuple[ExperimentConfig, Policy, Sequence[ScenarioFrame], int, Sequence[int]]) -> List[EpisodeMetrics]:
    cfg, policy, frames, seed, episodes = args
    return [_episode_metrics(cfg, policy, frames, seed, k) for k in episodes]


def _bootstrap_ci(values: np.ndarray, resamples: int, seed: int) -> Tuple[float, float]:
    if values.size < 2 or np.all(values == values[0]):
        v = float(values[0]) if values.size else float("nan")
        return (v, v)
    res = bootstrap(
        (values,),
        np.mean,
        confidence_level=0.95,
        n_resamples=resamples,
        method="percentile",
        random_state=np.random.default_rng(seed),
    )
    return (float(res.confidence_interval.low), float(res.confidence_interval.high))


def _spearman(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan")
    rho = spearmanr(x, y)[0]
    return float(rho)


def summarize(
    policy_name: str, results: Sequence[EpisodeMetrics], cfg: ExperimentConfig, seed: int
) -> MetricsReport:
    """Reduce per-episode metrics into a report."""
    columns = {m: np.array([getattr(r, m) for r in results], dtype=np.float64) for m in METRIC_NAMES}
    return MetricsReport(
        policy=policy_name,
        episodes=len(results),
        means={m: float(np.mean(v)) if v.size else float("nan") for m, v in columns.items()},
        f1_ci=_bootstrap_ci(columns["f1"], cfg.eval.bootstrap_resamples, seed),
        rate_ci=_bootstrap_ci(columns["mean_rate_mbps"], cfg.eval.bootstrap_resamples, seed),
        spearman_utility_dl_cls=_spearman(columns["total_utility"], columns["delta_l_cls"]),
        bandwidth_hz=cfg.channel.bandwidth_hz,
        t_slots=cfg.env.t_slots,
        per_episode=list(results),
    )


def evaluate(
    policy: Policy,
    pool: Sequence[ScenarioFrame],
    episodes: int,
    seed: int,
    cfg: Optional[ExperimentConfig] = None,
    jobs: int = 1,
) -> MetricsReport:
    """Run ``episodes`` paired episodes of ``policy`` over ``pool``.

    Args:
        policy: The scheduler under test.
        pool: Scenario frames; episode ``k`` uses a frame chosen from ``(seed, k)``.
        episodes: Number of test episodes.
        seed: Seed of the paired episode stream.
        cfg: Experiment configuration; defaults apply when omitted.
        jobs: Worker processes; results do not depend on it.
    """
    cfg = cfg or ExperimentConfig()
    if not pool:
        raise ValueError("scenario pool is empty")
    indices = list(range(episodes))
    if jobs > 1 and episodes > 1:
        chunks = [indices[i::jobs] for i in range(jobs) if indices[i::jobs]]
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            parts = executor.map(_run_chunk, [(cfg, policy, pool, seed, c) for c in chunks])
            results = sorted((r for part in parts for r in part), key=lambda r: r.episode)
    else:
        results = _run_chunk((cfg, policy, pool, seed, indices))
    report = summarize(policy.name, results, cfg, seed)
    logger.info(
        "%s W=%.0f T=%d: F1 %.4f rate %.3f Mbps utility %.2f",
        policy.name,
        report.bandwidth_hz,
        report.t_slots,
        report.means["f1"],
        report.means["mean_rate_mbps"],
        report.means["total_utility"],
    )
    return report


def bandwidth_sweep(
    policies: Sequence[Policy],
    bandwidths_hz: Sequence[float],
    pool: Sequence[ScenarioFrame],
    cfg: ExperimentConfig,
    episodes: int,
    seed: int,
    jobs: int = 1,
) -> List[MetricsReport]:
    """Evaluate every policy at every bandwidth on the same paired episodes."""
    reports = []
    for w in bandwidths_hz:
        if w <= 0:
            raise ValueError(f"bandwidth must be positive, got {w}")
        swept = cfg.evolve(channel=replace(cfg.channel, bandwidth_hz=float(w)))
        reports.extend(evaluate(p, pool, episodes, seed, swept, jobs) for p in policies)
    return reports


def slots_sweep(
    policies: Sequence[Policy],
    t_slots_list: Sequence[int],
    pool: Sequence[ScenarioFrame],
    cfg: ExperimentConfig,
    episodes: int,
    seed: int,
    jobs: int = 1,
) -> List[MetricsReport]:
    """Evaluate every policy for several sensing-interval lengths."""
    reports = []
    for t_slots in t_slots_list:
        if t_slots < 1:
            raise ValueError(f"t_slots must be >= 1, got {t_slots}")
        swept = cfg.evolve(env=replace(cfg.env, t_slots=int(t_slots)))
        reports.extend(evaluate(p, pool, episodes, seed, swept, jobs) for p in policies)
    return reports


@dataclass
class CaseTrace:
    """Slot-by-slot record of one rollout on a fixed scenario."""

    policy: str
    seed: int
    rows: List[Dict[str, Any]]
    ego_maps: List[np.ndarray] = field(repr=False)
    gt: np.ndarray = field(repr=False)
    world: Dict[str, Any] = field(repr=False, default_factory=dict)

    @property
    def decisions(self) -> List[int]:
        """Scheduled link per slot."""
        return [row["action"] for row in self.rows]

    def to_dict(self) -> Dict[str, Any]:
        """Return the trace as JSON-ready data."""
        return {"policy": self.policy, "seed": self.seed, "rows": self.rows, "world": self.world}

    def write(self, out_dir: str | Path) -> Path:
        """Write ``trace.json`` plus a CSV and a PGM dump of every ego map."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "trace.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        for t, tau in enumerate(self.ego_maps):
            write_map_csv(out / "maps" / f"ego_t{t:03d}.csv", tau)
            write_pgm(out / "maps" / f"ego_t{t:03d}.pgm", tau)
        write_pgm(out / "gt.pgm", self.gt)
        write_trace(out / "trace.csv", self.rows)
        return path


def case_study(frame: ScenarioFrame, policy: Policy, cfg: ExperimentConfig, seed: int) -> CaseTrace:
    """Roll ``policy`` out on one frame, recording rates, remaining scores and decisions.

    Each row holds the slot-start rate of every link in Mbps, every collaborator's
    remaining score ``sum(R_j^2)`` against the running ego map, and the chosen link.
    """
    env = SchedulingEnv.from_config(cfg, frame=frame, seed=seed)
    recorder = _Recorder(policy)
    final = run_episode(env, recorder, record_maps=True)
    rows = []
    for side, step in zip(recorder.seen, final["trace"]):
        rows.append(
            {
                "episode": step["episode"],
                "t": step["t"],
                "action": step["action"],
                "rate_bps": step["rate_bps"],
                "rates_mbps": [float(r) / 1e6 for r in side.slot_start_rates_bps],
                "remaining_scores": [float(s) for s in side.remaining_scores],
                "budget": step["budget"],
                "utility": step["utility"],
                "l_cls": step["l_cls"],
                "reward": step["reward"],
            }
        )
    return CaseTrace(
        policy=policy.name,
        seed=seed,
        rows=rows,
        ego_maps=list(final["ego_maps"]),
        gt=frame.world.gt_map,
        world=frame.world.to_dict(),
    )


@dataclass
class _Recorder:
    """Wrap a policy and keep the side information it was shown."""

    policy: Policy
    seen: List[SideInfo] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.policy.name

    def select(self, state: EnvState, info: SideInfo) -> int:
        self.seen.append(info)
        return self.policy.select(state, info)


def reports_to_json(reports: Sequence[MetricsReport]) -> List[Dict[str, Any]]:
    """Return reports without their per-episode rows."""
    out = []
    for r in reports:
        data = asdict(r)
        data.pop("per_episode")
        out.append(data)
    return out
