"""
Tests for the latency-spike case study, evaluation and ablation comparison.
"""

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from src.core.schema import Verdict
from src.core.env import SlicingEnv
from src.core.scenario import (
    find_detection, find_resolution, summarize, percentile, run_spike_case_study,
    evaluate, compare_ablation, seed_metrics, trace_frame, write_report, sla_verdicts
)
from src.agents.controller import SliceController
from src.agents.policy import MultiAgentPolicy


def test_detection_and_resolution_helpers():
    latency = pd.Series([0.5, 0.6, 2.0, 3.0, 0.9, 0.8, 1.5, 0.7, 0.6, 0.5, 0.4], index=range(11))
    assert find_detection(latency, 1.0) == 2
    assert find_detection(latency, 1.0, start=4) == 6
    assert find_detection(latency, 5.0) is None
    assert find_resolution(latency, 1.0, detection=2, sustain=2) == 4
    assert find_resolution(latency, 1.0, detection=2, sustain=3) == 7
    assert find_resolution(latency, 1.0, detection=2, sustain=6) is None


def test_summarize():
    single = summarize([0.4])
    assert single.mean == single.ci_low == single.ci_high == 0.4
    values = [1.0, 2.0, 4.0]
    summary = summarize(values)
    half = stats.t.ppf(0.975, 2) * np.std(values, ddof=1) / np.sqrt(3)
    assert summary.mean == pytest.approx(7.0 / 3.0)
    assert summary.half_width == pytest.approx(half)
    assert percentile([], 99) == 0.0


def test_case_study_without_spike_is_vacuous(small_config, policy):
    config = small_config.model_copy(deep=True)
    config.scenario.spikes = []
    report, trajectory = run_spike_case_study(config, policy, seed=3)
    assert report.detection_tick is None
    assert report.resolution_tick is None
    assert "no URLLC latency violation detected" in report.notes
    assert report.attention_trace == []
    assert len(trajectory) == config.scenario.horizon


def test_case_study_report_shape(small_config, policy, tmp_path):
    report, trajectory = run_spike_case_study(small_config, policy, seed=3)
    assert report.verdict in (Verdict.PASSED, Verdict.FAILED)
    assert set(report.allocation_table) == {"URLLC", "eMBB", "mMTC"}
    assert [v.metric for v in report.sla_verdicts][0] == "URLLC latency"
    assert report.reference_context["manual_troubleshooting_min"] > 0
    if report.detection_tick is not None:
        assert report.detection_tick >= small_config.scenario.spikes[0].trigger_tick
        assert report.attention_trace[0]["stage"] == "detect"
    path = write_report(report, tmp_path / "report.json")
    assert path.read_text().startswith("{")


def test_case_study_deterministic(small_config):
    config = small_config.model_copy(deep=True)
    config.scenario.decision_p99_ms = 1e9
    dumps = []
    for _ in range(2):
        policy = MultiAgentPolicy(small_config.policy, seed=6)
        report, _ = run_spike_case_study(config, policy, seed=9)
        dump = report.model_dump(mode="json", exclude={"decision_wall_ms", "decision_wall_p99_ms"})
        dump["sla_verdicts"] = dump["sla_verdicts"][:-1]
        dumps.append(dump)
    assert dumps[0] == dumps[1]


def test_resolution_past_budget_fails_the_table(small_config):
    scen = small_config.scenario.model_copy(update={"resolution_budget_ticks": 5})
    within = sla_verdicts(scen, 1.0, 0.6, detection=12, resolution=17, continuity=1.0, mmtc_ues=40, walls=[2.0] * 50)
    assert all(v.passed for v in within)

    late = sla_verdicts(scen, 1.0, 0.6, detection=12, resolution=18, continuity=1.0, mmtc_ues=40, walls=[2.0] * 50)
    assert [v.metric for v in late if not v.passed] == ["Resolution"]
    assert late[1].achieved == "6 ticks"

    unresolved = sla_verdicts(scen, 1.0, 0.6, detection=12, resolution=None, continuity=1.0, mmtc_ues=40, walls=[])
    assert unresolved[1].achieved == "unresolved" and not unresolved[1].passed


def test_slow_decisions_fail_the_table(small_config):
    walls = [1.0] * 99 + [80.0] * 2
    verdicts = sla_verdicts(small_config.scenario, 1.0, 0.6, detection=None, resolution=None,
                            continuity=1.0, mmtc_ues=40, walls=walls)
    assert verdicts[-1].metric == "Decision time (p99)"
    assert not verdicts[-1].passed
    assert all(v.passed for v in verdicts[:-1])


def test_case_study_fails_when_decisions_exceed_bound(small_config, policy):
    config = small_config.model_copy(deep=True)
    config.scenario.decision_p99_ms = 1e-6
    report, _ = run_spike_case_study(config, policy, seed=3)
    assert report.verdict == Verdict.FAILED
    assert not report.sla_verdicts[-1].passed
    assert any(note.startswith("decision time p99") for note in report.notes)


def test_resolution_budget_is_enforced_end_to_end(small_config, policy):
    config = small_config.model_copy(deep=True)
    config.scenario.resolution_budget_ticks = 0
    config.scenario.decision_p99_ms = 1e9
    report, _ = run_spike_case_study(config, policy, seed=3)
    if report.detection_tick is not None:
        assert report.verdict == Verdict.FAILED
        assert not report.sla_verdicts[1].passed


def test_single_seed_evaluation(small_config, policy):
    summary = evaluate(small_config, policy, [3])
    assert summary.seeds == [3]
    for name, metric in summary.aggregate.items():
        assert metric.mean == summary.per_seed[0][name]
        assert metric.ci_low == metric.ci_high


def test_evaluate_needs_seeds(small_config, policy):
    with pytest.raises(ValueError):
        evaluate(small_config, policy, [])


def test_violation_rates_recompute_from_trace(small_config, policy):
    env = SlicingEnv(small_config.sim, seed=4)
    trajectory = SliceController(env, policy, small_config, render=False).run_loop(20)
    metrics = seed_metrics(trajectory, small_config)
    frame = trace_frame(trajectory)
    for s in small_config.sim.slices:
        latencies = frame.loc[frame["slice"] == s.slice_id.value, "latency_ms"].to_numpy()
        expected = float(np.mean(latencies > s.targets.latency_target_ms))
        assert metrics[f"violation_rate_{s.slice_id.value}"] == pytest.approx(expected, abs=1e-12)
    assert metrics["mean_u_total"] == pytest.approx(frame["u_total"].mean())


def test_ablation_against_itself_has_zero_deltas(small_config, policy):
    comparison = compare_ablation(small_config, policy, policy, [3, 5])
    assert comparison.deltas["u_total"] == [0.0, 0.0]
    assert comparison.deltas["E"] == [0.0, 0.0]
    assert comparison.sign_counts["u_total"]["zero"] == 2
    assert comparison.mean_deltas["u_total"] == 0.0
