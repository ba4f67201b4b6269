"""Command-line front-end: ``v2x-sched {train,eval,sweep,case-study,validate-obs}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from v2x_scheduler.context import POLICY_NAMES, ConfigError, ExperimentConfig, load_config
from v2x_scheduler.ddqn import CheckpointSchemaError, DDQNAgent, train
from v2x_scheduler.env import EpisodeFactory
from v2x_scheduler.graph import run_episode
from v2x_scheduler.perception import XI_GRID, ObservationTrace, measure_observations
from v2x_scheduler.scenario import ScenarioError, build_pool, case_study_config, generate_scenario, prepare_frame
from v2x_scheduler.schedulers import (
    RoundRobinPolicy,
    bandwidth_sweep,
    build_policies,
    case_study,
    evaluate,
    format_reports,
    reports_to_json,
    slots_sweep,
    write_reports,
)
from v2x_scheduler.state import FEATURES_PER_LINK
from v2x_scheduler.utils import derive_seed, write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SCHEMA = 4

OBSERVATION_COLLABORATORS = (2, 3, 4, 5)
OBSERVATION_HEADER = ("metric", "parameter", "all_cells", "gt_positive")


def _csv_list(kind: type) -> Callable[[str], tuple]:
    def parse(raw: str) -> tuple:
        try:
            return tuple(kind(v) for v in raw.split(",") if v.strip())
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"invalid list {raw!r}: {exc}") from exc

    return parse


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes for evaluation")
    common.add_argument("--episodes", type=int, help="episode count of the command")
    common.add_argument("--log-level", default="INFO", help="logging level")

    parser = argparse.ArgumentParser(prog="v2x-sched", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train the Q-network scheduler")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "evaluate policies on paired test episodes"),
        ("sweep", cmd_sweep, "evaluate policies across bandwidths or interval lengths"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--checkpoint", type=Path, help="trained checkpoint for the 'ddqn' policy")
        p.add_argument("--policies", type=_csv_list(str), help=f"comma list from {','.join(POLICY_NAMES)}")
        p.add_argument("--bandwidths", type=_csv_list(float), help="comma list of bandwidths in Hz")
        p.add_argument("--slots", type=_csv_list(int), help="comma list of slots per interval")
        p.set_defaults(func=func)
    sub.choices["sweep"].add_argument("--axis", choices=("bandwidth", "slots"), default="bandwidth")

    p = sub.add_parser("case-study", parents=[common], help="trace one forced-occlusion scenario")
    p.add_argument("--checkpoint", type=Path, help="trained checkpoint; without it a baseline runs")
    p.add_argument("--policy", choices=POLICY_NAMES, help="policy to trace")
    p.add_argument("--scenario-seed", type=int, default=0, help="seed of the traced world")
    p.set_defaults(func=cmd_case_study)

    p = sub.add_parser("validate-obs", parents=[common], help="measure true-to-false and violation rates")
    p.set_defaults(func=cmd_validate_observations)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Load the config file and apply command-line overrides."""
    cfg = load_config(args.config)
    # Flags are set after construction so environment fallbacks cannot override them.
    for key, value in (("seed", args.seed), ("jobs", args.jobs), ("output_dir", args.out)):
        if value is not None:
            setattr(cfg, key, str(value) if key == "output_dir" else value)
    eval_cfg = cfg.eval
    if getattr(args, "policies", None):
        eval_cfg = replace(eval_cfg, policies=args.policies)
    if getattr(args, "bandwidths", None):
        eval_cfg = replace(eval_cfg, bandwidths_hz=args.bandwidths)
    if getattr(args, "slots", None):
        eval_cfg = replace(eval_cfg, slots_list=args.slots)
    if args.episodes is not None:
        if args.command == "train":
            cfg.train = replace(cfg.train, episodes=args.episodes)
        else:
            eval_cfg = replace(eval_cfg, episodes=args.episodes)
    cfg.eval = eval_cfg
    return cfg.validate()


def _output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def _load_agent(cfg: ExperimentConfig, checkpoint: Optional[Path], n_collaborators: int) -> Optional[DDQNAgent]:
    if checkpoint is None:
        return None
    n_actions = n_collaborators + (1 if cfg.env.allow_idle else 0)
    dims = (FEATURES_PER_LINK * n_collaborators, *cfg.train.hidden_dims, n_actions)
    return DDQNAgent.load(checkpoint, cfg.train, expected_dims=dims)


def cmd_train(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    """Train the scheduler and write checkpoint, curve and config snapshot."""
    out = _output_dir(cfg)
    train_pool = build_pool(cfg.scenario, derive_seed(cfg.seed, "scenario"), cfg.train.train_frames, name="train")
    val_pool = build_pool(cfg.scenario, derive_seed(cfg.seed, "scenario"), cfg.train.validation_frames, name="validation")
    episodes = cfg.train.resolved_episodes(cfg.env.reward_mode)
    logger.info("training %d episodes with the %s reward", episodes, cfg.env.reward_mode)
    result = train(
        EpisodeFactory(cfg, train_pool, derive_seed(cfg.seed, "channel"), name="train"),
        cfg.train,
        episodes=episodes,
        validation_factory=EpisodeFactory(cfg, val_pool, derive_seed(cfg.seed, "channel"), name="validation"),
        seed=derive_seed(cfg.seed, "agent"),
    )
    result.agent.save(out / "checkpoint.bin")
    result.write_curve(out / "curve.csv")
    write_csv(out / "train_returns.csv", ("episode", "return"), enumerate(result.episode_returns))
    logger.info("wrote checkpoint and curve to %s", out)
    return EXIT_OK


def _test_pool(cfg: ExperimentConfig) -> list:
    return build_pool(cfg.scenario, derive_seed(cfg.seed, "scenario"), cfg.eval.test_frames, name="test")


def _policies(args: argparse.Namespace, cfg: ExperimentConfig) -> list:
    names = list(cfg.eval.policies)
    agent = _load_agent(cfg, args.checkpoint, cfg.scenario.n_collaborators)
    if "ddqn" in names and agent is None:
        if args.policies and "ddqn" in args.policies:
            raise ConfigError("policy 'ddqn' requires --checkpoint")
        logger.warning("no checkpoint given; skipping the ddqn policy")
        names.remove("ddqn")
    return build_policies(names, cfg, agent)


def cmd_eval(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    """Evaluate policies on paired test episodes and write ``metrics.csv``."""
    out = _output_dir(cfg)
    pool = _test_pool(cfg)
    seed = derive_seed(cfg.seed, "channel")
    reports = [evaluate(p, pool, cfg.eval.episodes, seed, cfg, cfg.jobs) for p in _policies(args, cfg)]
    write_reports(out / "metrics.csv", reports)
    (out / "metrics.json").write_text(json.dumps(reports_to_json(reports), indent=2, sort_keys=True) + "\n")
    sys.stdout.write(format_reports(reports) + "\n")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    """Sweep bandwidth or interval length and write one row per (policy, value)."""
    out = _output_dir(cfg)
    pool = _test_pool(cfg)
    seed = derive_seed(cfg.seed, "channel")
    policies = _policies(args, cfg)
    if args.axis == "bandwidth":
        reports = bandwidth_sweep(policies, cfg.eval.bandwidths_hz, pool, cfg, cfg.eval.episodes, seed, cfg.jobs)
    else:
        reports = slots_sweep(policies, cfg.eval.slots_list, pool, cfg, cfg.eval.episodes, seed, cfg.jobs)
    write_reports(out / f"sweep_{args.axis}.csv", reports)
    sys.stdout.write(format_reports(reports) + "\n")
    return EXIT_OK


def cmd_case_study(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    """Trace one forced-occlusion scenario and dump every ego map."""
    scenario = case_study_config(cfg.scenario)
    bandwidth = cfg.eval.case_study_bandwidth_hz
    if bandwidth != cfg.channel.bandwidth_hz:
        logger.info(
            "case study runs at eval.case_study_bandwidth_hz = %.0f Hz instead of channel.bandwidth_hz = %.0f Hz",
            bandwidth,
            cfg.channel.bandwidth_hz,
        )
    cfg = cfg.evolve(scenario=scenario, channel=replace(cfg.channel, bandwidth_hz=bandwidth))
    out = _output_dir(cfg)
    frame = prepare_frame(generate_scenario(scenario, args.scenario_seed))
    agent = _load_agent(cfg, args.checkpoint, scenario.n_collaborators)
    name = args.policy or ("ddqn" if agent is not None else "nearest")
    if name == "ddqn" and agent is None:
        raise ConfigError("policy 'ddqn' requires --checkpoint")
    (policy,) = build_policies([name], cfg, agent)
    trace = case_study(frame, policy, cfg, derive_seed(cfg.seed, "channel", args.scenario_seed))
    path = trace.write(out / "case_study")
    logger.info("case study of %s: decisions %s -> %s", name, trace.decisions, path)
    return EXIT_OK


def collect_observation_traces(cfg: ExperimentConfig, n_collaborators: int, episodes: int) -> List[ObservationTrace]:
    """Roll round-robin episodes and keep the ego map history of each."""
    scenario = replace(cfg.scenario, n_collaborators=n_collaborators)
    run_cfg = cfg.evolve(scenario=scenario)
    pool = build_pool(scenario, derive_seed(cfg.seed, "scenario", n_collaborators), min(episodes, cfg.eval.test_frames), name="observations")
    factory = EpisodeFactory(run_cfg, pool, derive_seed(cfg.seed, "channel", n_collaborators), name="observations")
    traces = []
    for k in range(episodes):
        env = factory(k)
        run_episode(env, RoundRobinPolicy(), episode=k)
        traces.append(ObservationTrace(ego_maps=np.stack(env.ego_maps), gt=env.gt, n_collaborators=n_collaborators))
    return traces


def cmd_validate_observations(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    """Write true-to-false rates per collaborator count and violation rates per threshold."""
    out = _output_dir(cfg)
    zeta = cfg.env.loss.zeta
    rows = []
    pooled: List[ObservationTrace] = []
    for n in OBSERVATION_COLLABORATORS:
        traces = collect_observation_traces(cfg, n, cfg.eval.episodes)
        report = measure_observations(traces, zeta)
        rows.append(("true_to_false", f"N={n}", report.true_to_false_prob, report.true_to_false_prob_positive))
        pooled.extend(traces)
    report = measure_observations(pooled, zeta, XI_GRID)
    for xi in XI_GRID:
        rows.append(("violation", f"xi={xi}", report.violation_prob[xi], report.violation_prob_positive[xi]))
    write_csv(out / "observations.csv", OBSERVATION_HEADER, rows)
    if cfg.env.fusion == "noisy_or" and report.true_to_false_prob_positive > 0:
        logger.warning("true-to-false events on occupied cells under noisy-OR fusion")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (ConfigError, ScenarioError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except CheckpointSchemaError as exc:
        logger.error("checkpoint error: %s", exc)
        return EXIT_SCHEMA
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
