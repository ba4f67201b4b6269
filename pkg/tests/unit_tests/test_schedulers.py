"""Unit tests for the baseline schedulers and the evaluation harness."""

import json
from dataclasses import replace

import numpy as np
import pytest

from v2x_scheduler.context import EnvConfig, ExperimentConfig
from v2x_scheduler.ddqn import DDQNAgent, train
from v2x_scheduler.env import EpisodeFactory, SideInfo
from v2x_scheduler.scenario import build_pool, case_study_config, generate_scenario, prepare_frame
from v2x_scheduler.schedulers import (
    REPORT_HEADER,
    MaxRatePolicy,
    NearestPolicy,
    RoundRobinPolicy,
    TrainedPolicy,
    bandwidth_sweep,
    build_policies,
    case_study,
    evaluate,
    format_reports,
    max_rate_policy,
    nearest_policy,
    reports_to_json,
    round_robin_policy,
    slots_sweep,
    write_reports,
)
from v2x_scheduler.utils import derive_seed


def side_info(distances, rates=None, rsu=None, slot=0) -> SideInfo:
    n = len(distances)
    return SideInfo(
        distances_m=np.asarray(distances, dtype=float),
        slot_start_rates_bps=np.asarray(rates if rates is not None else np.ones(n), dtype=float),
        slot_index=slot,
        is_rsu=np.asarray(rsu if rsu is not None else [False] * n),
        remaining_scores=np.zeros(n),
    )


@pytest.fixture
def pool(tiny_config):
    return build_pool(tiny_config.scenario, seed=17, size=3, name="test")


@pytest.fixture
def slots10(tiny_config):
    return tiny_config.evolve(env=replace(tiny_config.env, t_slots=10))


class TestBaselines:
    """Tests for the three baseline rules."""

    def test_nearest(self):
        """Test the nearest rule and its tie-break."""
        assert nearest_policy([30.0, 10.0, 20.0, 40.0]) == 1
        assert nearest_policy([5.0, 5.0, 5.0]) == 0

    def test_nearest_matches_sort_oracle(self, rng):
        """Test the nearest rule against a sort on random sets."""
        for _ in range(200):
            d = np.round(rng.uniform(1.0, 50.0, size=int(rng.integers(1, 8))), 0)
            expected = sorted(range(len(d)), key=lambda i: (d[i], i))[0]
            assert nearest_policy(d) == expected

    def test_nearest_skips_rsu(self):
        """Test the roadside unit is excluded unless asked for."""
        info = side_info([20.0, 5.0], rsu=[False, True])
        assert NearestPolicy().select(None, info) == 0
        assert NearestPolicy(include_rsu=True).select(None, info) == 1

    def test_round_robin(self):
        """Test links take turns in index order."""
        assert round_robin_policy(0, 4) == 0
        assert round_robin_policy(4, 4) == 0
        grants = np.bincount([round_robin_policy(t, 4) for t in range(16)], minlength=4)
        assert grants.tolist() == [4, 4, 4, 4]

    def test_max_rate(self):
        """Test the max-rate rule and its tie-break."""
        assert max_rate_policy([1e6, 5e6, 2e6, 3e6]) == 1
        assert max_rate_policy([2.0, 2.0, 2.0]) == 0

    def test_max_rate_matches_sort_oracle(self, rng):
        """Test the max-rate rule against a sort on random draws."""
        for _ in range(200):
            rates = rng.exponential(5e6, size=int(rng.integers(1, 8)))
            expected = sorted(range(len(rates)), key=lambda i: (-rates[i], i))[0]
            assert max_rate_policy(rates) == expected

    def test_empty_inputs(self):
        """Test empty link sets are rejected."""
        with pytest.raises(ValueError):
            nearest_policy([])
        with pytest.raises(ValueError):
            max_rate_policy([])
        with pytest.raises(ValueError):
            round_robin_policy(0, 0)

    def test_build_policies(self, tiny_config):
        """Test policies are built by name and ddqn needs an agent."""
        names = [p.name for p in build_policies(["rr", "nearest", "max_rate"], tiny_config)]
        assert names == ["rr", "nearest", "max_rate"]
        with pytest.raises(ValueError):
            build_policies(["ddqn"], tiny_config)
        agent = DDQNAgent.create(12, 3)
        assert isinstance(build_policies(["ddqn"], tiny_config, agent)[0], TrainedPolicy)


class TestEvaluate:
    """Tests for paired evaluation."""

    def test_same_seed_same_report(self, pool, tiny_config):
        """Test evaluating twice with one seed gives identical means."""
        a = evaluate(RoundRobinPolicy(), pool, 3, seed=5, cfg=tiny_config)
        b = evaluate(RoundRobinPolicy(), pool, 3, seed=5, cfg=tiny_config)
        assert a.means == b.means
        assert a.f1_ci == b.f1_ci
        assert a.episodes == 3

    def test_zero_bandwidth_equalizes_policies(self, pool, tiny_config):
        """Test with no bandwidth every policy ends with the same perception metrics."""
        cfg = tiny_config.evolve(channel=replace(tiny_config.channel, bandwidth_hz=0.0))
        reports = [evaluate(p, pool, 3, seed=2, cfg=cfg) for p in (NearestPolicy(), RoundRobinPolicy(), MaxRatePolicy())]
        for key in ("f1", "precision", "recall", "final_l_cls"):
            assert len({r.means[key] for r in reports}) == 1
        assert all(r.means["mean_rate_mbps"] == 0.0 for r in reports)

    def test_max_rate_beats_round_robin_on_rate(self, pool, slots10):
        """Test max-rate scheduling yields a higher mean rate than round robin."""
        reports = bandwidth_sweep([RoundRobinPolicy(), MaxRatePolicy()], (200e3, 600e3), pool, slots10, 20, seed=8)
        by_w = {}
        for r in reports:
            by_w.setdefault(r.bandwidth_hz, {})[r.policy] = r.means["mean_rate_mbps"]
        for rates in by_w.values():
            assert rates["rr"] < rates["max_rate"]

    def test_rate_grows_with_bandwidth(self, pool, tiny_config):
        """Test every policy's mean rate grows with bandwidth on the paired pool."""
        policies = [NearestPolicy(), RoundRobinPolicy(), MaxRatePolicy()]
        reports = bandwidth_sweep(policies, (200e3, 400e3, 600e3), pool, tiny_config, 3, seed=1)
        assert len(reports) == 9
        for policy in ("nearest", "rr", "max_rate"):
            rates = [r.means["mean_rate_mbps"] for r in reports if r.policy == policy]
            assert rates == sorted(rates)
            assert rates[0] < rates[-1]

    def test_slots_sweep(self, pool, tiny_config):
        """Test one report per policy and interval length."""
        reports = slots_sweep([RoundRobinPolicy()], (2, 5), pool, tiny_config, 2, seed=1)
        assert [r.t_slots for r in reports] == [2, 5]

    def test_parallel_matches_serial(self, pool, tiny_config):
        """Test worker processes do not change the results."""
        serial = evaluate(MaxRatePolicy(), pool, 4, seed=3, cfg=tiny_config, jobs=1)
        parallel = evaluate(MaxRatePolicy(), pool, 4, seed=3, cfg=tiny_config, jobs=2)
        assert serial.means == parallel.means

    def test_empty_pool(self, tiny_config):
        """Test an empty pool is rejected."""
        with pytest.raises(ValueError):
            evaluate(RoundRobinPolicy(), [], 1, seed=0, cfg=tiny_config)

    def test_report_outputs(self, pool, tiny_config, tmp_path):
        """Test reports render as CSV, JSON and a table."""
        reports = [evaluate(RoundRobinPolicy(), pool, 2, seed=0, cfg=tiny_config)]
        lines = write_reports(tmp_path / "metrics.csv", reports).read_text().splitlines()
        assert lines[0].split(",") == list(REPORT_HEADER)
        assert len(lines) == 2
        data = json.loads(json.dumps(reports_to_json(reports)))
        assert data[0]["policy"] == "rr"
        assert "per_episode" not in data[0]
        assert "rr" in format_reports(reports)


class TestCaseStudy:
    """Tests for the fixed-scenario rollout record."""

    @pytest.fixture
    def frame(self, tiny_scenario):
        return prepare_frame(generate_scenario(case_study_config(tiny_scenario), seed=12))

    def test_trace_shape(self, frame, tiny_config, tmp_path):
        """Test one row per slot, T + 1 map dumps and valid decisions."""
        trace = case_study(frame, RoundRobinPolicy(), tiny_config, seed=1)
        t_slots = tiny_config.env.t_slots
        n = frame.world.n_collaborators
        assert len(trace.rows) == t_slots
        assert len(trace.ego_maps) == t_slots + 1
        assert set(trace.decisions) <= set(range(n))
        assert all(len(row["rates_mbps"]) == n for row in trace.rows)

        trace.write(tmp_path)
        data = json.loads((tmp_path / "trace.json").read_text())
        assert len(data["rows"]) == t_slots
        assert len(list((tmp_path / "maps").glob("ego_t*.csv"))) == t_slots + 1
        assert (tmp_path / "gt.pgm").exists()

    def test_max_rate_picks_fastest_link(self, frame, tiny_config):
        """Test every recorded decision of max-rate is the fastest slot-start link."""
        trace = case_study(frame, MaxRatePolicy(), tiny_config, seed=2)
        for row in trace.rows:
            assert row["action"] == int(np.argmax(row["rates_mbps"]))

    def test_scheduled_scores_never_grow(self, frame, tiny_config):
        """Test the remaining score of a scheduled link does not increase."""
        cfg = tiny_config.evolve(env=EnvConfig(t_slots=8))
        trace = case_study(frame, RoundRobinPolicy(), cfg, seed=3)
        for before, after in zip(trace.rows, trace.rows[1:]):
            j = before["action"]
            assert after["remaining_scores"][j] <= before["remaining_scores"][j] + 1e-12


@pytest.fixture(scope="module")
def default_config() -> ExperimentConfig:
    return ExperimentConfig(seed=0).validate()


@pytest.fixture(scope="module")
def test_pool(default_config):
    return build_pool(
        default_config.scenario, derive_seed(default_config.seed, "scenario"), default_config.eval.test_frames, name="test"
    )


@pytest.fixture(scope="module")
def trained_agent(default_config) -> DDQNAgent:
    """Scheduler trained on the default forced-occlusion pool."""
    cfg = default_config
    pool = build_pool(cfg.scenario, derive_seed(cfg.seed, "scenario"), cfg.train.train_frames, name="train")
    result = train(
        EpisodeFactory(cfg, pool, derive_seed(cfg.seed, "channel"), name="train"),
        cfg.train,
        episodes=6000,
        seed=derive_seed(cfg.seed, "agent"),
    )
    return result.agent


@pytest.mark.slow
class TestPolicyOrdering:
    """Ordinal comparisons of the policies on 500 paired test episodes."""

    @pytest.fixture(scope="class")
    def reports(self, default_config, test_pool, trained_agent):
        policies = build_policies(["nearest", "rr", "max_rate", "ddqn"], default_config, trained_agent)
        seed = derive_seed(default_config.seed, "channel")
        return {p.name: evaluate(p, test_pool, 500, seed, default_config) for p in policies}

    def test_scenario_family_forces_occlusion(self, default_config):
        """Test the default pool is the forced-occlusion family."""
        assert default_config.scenario.force_occlusion

    def test_max_rate_has_highest_rate(self, reports):
        """Test Max Rate attains the highest mean rate of every policy."""
        rates = {name: r.means["mean_rate_mbps"] for name, r in reports.items()}
        assert max(rates, key=rates.get) == "max_rate"

    def test_round_robin_has_lowest_rate(self, reports):
        """Test round robin attains the lowest mean rate of every policy."""
        rates = {name: r.means["mean_rate_mbps"] for name, r in reports.items()}
        assert min(rates, key=rates.get) == "rr"

    def test_trained_policy_f1(self, reports):
        """Test the trained scheduler stays within 0.01 F1 of every baseline and beats Nearest by 0.02."""
        f1 = {name: r.means["f1"] for name, r in reports.items()}
        for name in ("nearest", "rr", "max_rate"):
            assert f1["ddqn"] >= f1[name] - 0.01
        assert f1["ddqn"] >= f1["nearest"] + 0.02


@pytest.mark.slow
class TestUtilityConsistency:
    """Episode utility tracks the classification loss it removes."""

    @pytest.mark.parametrize("bandwidth_hz", [200e3, 300e3])
    @pytest.mark.parametrize("name", ["nearest", "rr", "max_rate"])
    def test_spearman_above_half(self, default_config, test_pool, name, bandwidth_hz):
        """Test Spearman(utility sum, loss drop) exceeds 0.5 over 200 episodes."""
        cfg = default_config.evolve(channel=replace(default_config.channel, bandwidth_hz=bandwidth_hz))
        (policy,) = build_policies([name], cfg)
        report = evaluate(policy, test_pool, 200, derive_seed(cfg.seed, "channel"), cfg)
        assert report.spearman_utility_dl_cls > 0.5


@pytest.mark.slow
class TestTrainedCaseStudy:
    """The trained scheduler on a fixed forced-occlusion scenario."""

    @pytest.mark.parametrize("scenario_seed", [0, 1, 2])
    def test_first_decision_has_remaining_score(self, default_config, trained_agent, scenario_seed):
        """Test the first scheduled link still holds untransmitted confidence."""
        scenario = case_study_config(default_config.scenario)
        cfg = default_config.evolve(
            scenario=scenario,
            channel=replace(default_config.channel, bandwidth_hz=default_config.eval.case_study_bandwidth_hz),
        )
        frame = prepare_frame(generate_scenario(scenario, scenario_seed))
        trace = case_study(frame, TrainedPolicy.from_agent(trained_agent), cfg, seed=scenario_seed)
        first = trace.rows[0]
        assert max(first["remaining_scores"]) > 0
        assert first["remaining_scores"][first["action"]] > 0
