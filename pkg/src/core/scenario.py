"""
Scenarios for SliceSim
Latency-spike case study, multi-seed evaluation and the explainability ablation comparison.
"""

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from src.core.schema import (
    SliceSimConfig, SliceType, SLICE_ORDER, RESOURCE_ORDER, CaseStudyReport, SlaVerdict, Verdict,
    MetricSummary, EvaluationSummary, AblationComparison, ScenarioConfig
)
from src.core.config import config_hash, thread_cap
from src.core.env import SlicingEnv
from src.agents.policy import MultiAgentPolicy
from src.agents.controller import SliceController, Trajectory
from src.utils.event_log import EventLog, EventType


logger = logging.getLogger("SliceSim.Scenario")

# Reported alongside the case study, never asserted
REFERENCE_CONTEXT = {"manual_troubleshooting_min": 11.5, "reference_resolution_min": 0.8}

STAGES = ("detect", "diagnose", "act", "recover")


# =============================================================================
# HELPERS
# =============================================================================

def trace_frame(trajectory: Trajectory) -> pd.DataFrame:
    return pd.DataFrame(trajectory.trace_rows)


def slice_series(frame: pd.DataFrame, slice_id: SliceType, column: str) -> pd.Series:
    part = frame[frame["slice"] == slice_id.value]
    return pd.Series(part[column].to_numpy(), index=part["tick"].to_numpy())


def find_detection(latency: pd.Series, target: float, start: int = 0) -> Optional[int]:
    """First tick at or after start whose latency exceeds the target."""
    hits = latency[(latency.index >= start) & (latency > target)]
    return int(hits.index[0]) if len(hits) else None


def find_resolution(latency: pd.Series, target: float, detection: int, sustain: int) -> Optional[int]:
    """First tick after detection starting a run of sustain ticks within target."""
    ok = (latency <= target).to_numpy()
    ticks = latency.index.to_numpy()
    run = 0
    for i in range(len(ticks)):
        if ticks[i] <= detection:
            continue
        run = run + 1 if ok[i] else 0
        if run >= sustain:
            return int(ticks[i - sustain + 1])
    return None


def percentile(values: Sequence[float], q: float) -> float:
    return float(np.percentile(values, q)) if len(values) else 0.0


def summarize(values: Sequence[float], confidence: float = 0.95) -> MetricSummary:
    """Mean with a Student-t confidence interval; a single value has zero width."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2 or arr.std(ddof=1) == 0:
        return MetricSummary(mean=mean, ci_low=mean, ci_high=mean, values=arr.tolist())
    half = float(stats.t.ppf(0.5 + confidence / 2.0, arr.size - 1) * arr.std(ddof=1) / np.sqrt(arr.size))
    return MetricSummary(mean=mean, ci_low=mean - half, ci_high=mean + half, values=arr.tolist())


# =============================================================================
# CASE STUDY
# =============================================================================

def sla_verdicts(
    scen: ScenarioConfig,
    latency_target_ms: float,
    urllc_after_ms: float,
    detection: Optional[int],
    resolution: Optional[int],
    continuity: float,
    mmtc_ues: int,
    walls: Sequence[float],
) -> List[SlaVerdict]:
    """Metric table for one case study; the run passes only when every row does."""
    resolution_ticks = (resolution - detection) if detection is not None and resolution is not None else None
    if detection is None:
        achieved = "not detected"
    else:
        achieved = f"{resolution_ticks} ticks" if resolution_ticks is not None else "unresolved"
    p99 = percentile(walls, 99)
    return [
        SlaVerdict(metric="URLLC latency", target=f"<= {latency_target_ms:g} ms",
                   achieved=f"{urllc_after_ms:.3f} ms", passed=bool(urllc_after_ms <= latency_target_ms)),
        SlaVerdict(metric="Resolution", target=f"<= {scen.resolution_budget_ticks} ticks", achieved=achieved,
                   passed=detection is None or (resolution_ticks is not None
                                                and resolution_ticks <= scen.resolution_budget_ticks)),
        SlaVerdict(metric="Service continuity (eMBB)", target=f"> {scen.continuity_threshold:.0%}",
                   achieved=f"{continuity:.1%}", passed=continuity > scen.continuity_threshold),
        SlaVerdict(metric="mMTC connectivity", target="> 0 active UEs",
                   achieved=f"{mmtc_ues} UEs", passed=mmtc_ues > 0),
        SlaVerdict(metric="Decision time (p99)", target=f"< {scen.decision_p99_ms:g} ms",
                   achieved=f"{p99:.2f} ms", passed=p99 < scen.decision_p99_ms),
    ]


def run_spike_case_study(
    config: SliceSimConfig,
    policy: MultiAgentPolicy,
    seed: int,
    event_log: Optional[EventLog] = None,
) -> Tuple[CaseStudyReport, Trajectory]:
    """
    Inject the configured spike and follow URLLC through detect, diagnose, act and recover.

    The report is FAILED, with the full trajectory still returned, when
    URLLC latency is not restored within the horizon.
    """
    scen = config.scenario
    env = SlicingEnv(config.sim, seed=seed, spikes=scen.spikes)
    controller = SliceController(env, policy, config, greedy=True, event_log=event_log)
    trajectory = controller.run_loop(scen.horizon)
    frame = trace_frame(trajectory)

    urllc = SliceType.URLLC
    embb = SliceType.EMBB
    targets = {s.slice_id: s.targets for s in config.sim.slices}
    latency = slice_series(frame, urllc, "latency_ms")
    trigger = min((ev.trigger_tick for ev in scen.spikes), default=None)
    notes: List[str] = []

    detection = find_detection(latency, targets[urllc].latency_target_ms, start=trigger or 0) if trigger is not None else None
    resolution = None
    if detection is None:
        notes.append("no URLLC latency violation detected")
    else:
        resolution = find_resolution(latency, targets[urllc].latency_target_ms, detection, scen.sustain_ticks)
        if resolution is None:
            notes.append(f"URLLC latency not restored within {scen.horizon} ticks")

    ticks = frame["tick"].unique()
    last_tick = int(ticks[-1]) if len(ticks) else 0
    before_tick = max(0, (trigger if trigger is not None else last_tick) - 1)
    if resolution is not None:
        after_tick = min(last_tick, resolution + scen.sustain_ticks - 1)
    else:
        after_tick = last_tick

    allocation_table, qos_table = _before_after_tables(frame, before_tick, after_tick)

    post = frame[(frame["slice"] == embb.value) & (frame["tick"] >= (trigger or 0))]
    continuity = float((post["latency_ms"] <= targets[embb].latency_target_ms).mean()) if len(post) else 1.0
    urllc_after = qos_table.get(urllc.value, {}).get("latency_ms_after", float("nan"))
    resolution_ticks = (resolution - detection) if resolution is not None else None

    walls = trajectory.decision_wall_ms
    mmtc_ues = env.active_ues()[SLICE_ORDER.index(SliceType.MMTC)]
    verdicts = sla_verdicts(scen, targets[urllc].latency_target_ms, urllc_after, detection, resolution,
                            continuity, mmtc_ues, walls)
    if resolution_ticks is not None and resolution_ticks > scen.resolution_budget_ticks:
        notes.append(f"URLLC resolved after {resolution_ticks} ticks, budget {scen.resolution_budget_ticks}")
    if not verdicts[-1].passed:
        notes.append(f"decision time p99 {percentile(walls, 99):.2f} ms over {scen.decision_p99_ms:g} ms")
    passed = all(v.passed for v in verdicts)
    attention_trace, ranking = _attention_trace(trajectory, detection, resolution)

    report = CaseStudyReport(
        verdict=Verdict.PASSED if passed else Verdict.FAILED,
        seed=seed,
        config_hash=config_hash(config),
        detection_tick=detection,
        resolution_tick=resolution,
        resolution_ticks=resolution_ticks,
        decision_wall_ms=float(np.mean(walls)) if walls else 0.0,
        decision_wall_p99_ms=percentile(walls, 99),
        allocation_table=allocation_table,
        qos_table=qos_table,
        attention_trace=attention_trace,
        counterfactual_ranking=ranking,
        sla_verdicts=verdicts,
        reference_context=dict(REFERENCE_CONTEXT),
        notes=notes,
    )
    level = logging.INFO if passed else logging.WARNING
    logger.log(level, f"🎯 Case study seed {seed}: {report.verdict.value} "
                      f"(detected {detection}, resolved {resolution})")
    if event_log is not None:
        event_log.log(EventType.SCENARIO, f"Case study {report.verdict.value}", "; ".join(notes) or "ok",
                      tick=resolution, data={"detection_tick": detection, "resolution_tick": resolution})
    return report, trajectory


def _before_after_tables(
    frame: pd.DataFrame, before_tick: int, after_tick: int
) -> Tuple[Dict[str, Dict[str, float]], Dict[str, Dict[str, float]]]:
    allocation: Dict[str, Dict[str, float]] = {}
    qos: Dict[str, Dict[str, float]] = {}
    for slice_id in SLICE_ORDER:
        part = frame[frame["slice"] == slice_id.value].set_index("tick")
        if before_tick not in part.index or after_tick not in part.index:
            continue
        before, after = part.loc[before_tick], part.loc[after_tick]
        allocation[slice_id.value] = {
            f"{r.value}_{when}": float(row[f"{r.value}_share"])
            for r in RESOURCE_ORDER for when, row in (("before", before), ("after", after))
        }
        qos[slice_id.value] = {
            f"{col}_{when}": float(row[col])
            for col in ("latency_ms", "reliability", "throughput_mbps", "latency_success_rate")
            for when, row in (("before", before), ("after", after))
        }
    return allocation, qos


def _attention_trace(
    trajectory: Trajectory, detection: Optional[int], resolution: Optional[int]
) -> Tuple[List[Dict[str, object]], List[Tuple[str, float]]]:
    """Explanation excerpts for the detect, diagnose, act and recover stages."""
    if detection is None or not trajectory.explanations:
        return [], []
    by_tick = {e.tick: e for e in trajectory.explanations}
    act_tick = next(
        (e.tick for e in trajectory.explanations
         if e.tick > detection and e.selected_action not in (None, "no-op")),
        detection + 1,
    )
    stage_ticks = {
        "detect": detection,
        "diagnose": detection + 1,
        "act": act_tick,
        "recover": resolution,
    }
    excerpts = []
    for stage in STAGES:
        tick = stage_ticks[stage]
        if tick is None or tick not in by_tick:
            continue
        record = by_tick[tick]
        meta = trajectory.meta_weights[tick - trajectory.transitions[0].tick]
        excerpts.append({
            "stage": stage,
            "tick": tick,
            "summary": record.summary,
            "primary_cause": record.primary_cause,
            "confidence": record.confidence,
            "meta": [float(w) for w in meta[SLICE_ORDER.index(record.lead_slice)]],
            "attention_sha256": record.attention_sha256,
        })
    act = by_tick.get(act_tick)
    return excerpts, (list(act.counterfactual_ranking) if act else [])


# =============================================================================
# EVALUATION
# =============================================================================

def seed_metrics(trajectory: Trajectory, config: SliceSimConfig) -> Dict[str, float]:
    """Per-seed statistics, all recomputable from the trace rows and wall times."""
    frame = trace_frame(trajectory)
    metrics = {
        "mean_u_total": float(frame["u_total"].mean()),
        "mean_E": float(frame["E"].mean()),
        "mean_reward": float(frame["reward"].mean()),
        "decision_ms_p99": percentile(trajectory.decision_wall_ms, 99),
    }
    for s in config.sim.slices:
        part = frame[frame["slice"] == s.slice_id.value]
        metrics[f"violation_rate_{s.slice_id.value}"] = float((part["latency_ms"] > s.targets.latency_target_ms).mean())
    return metrics


def _evaluate_seed(config: SliceSimConfig, policy: MultiAgentPolicy, seed: int, horizon: int) -> Trajectory:
    env = SlicingEnv(config.sim, seed=seed)
    controller = SliceController(env, policy, config, greedy=True, render=False)
    return controller.run_loop(horizon)


def evaluate(
    config: SliceSimConfig,
    policy: MultiAgentPolicy,
    seeds: Sequence[int],
    horizon: Optional[int] = None,
) -> EvaluationSummary:
    """Greedy full-schedule runs per seed, reduced in seed order with 95% t intervals."""
    if not seeds:
        raise ValueError("evaluate needs at least one seed")
    horizon = config.scenario.eval_horizon if horizon is None else horizon
    snapshots = [copy.deepcopy(policy) for _ in seeds]
    with ThreadPoolExecutor(max_workers=min(len(seeds), thread_cap(len(seeds)))) as pool:
        trajectories = list(pool.map(lambda args: _evaluate_seed(config, args[0], args[1], horizon),
                                     zip(snapshots, seeds)))
    per_seed = [seed_metrics(t, config) for t in trajectories]
    aggregate = {name: summarize([m[name] for m in per_seed]) for name in per_seed[0]}
    return EvaluationSummary(seeds=list(seeds), per_seed=per_seed, aggregate=aggregate)


def compare_ablation(
    config: SliceSimConfig,
    full: MultiAgentPolicy,
    ablation: MultiAgentPolicy,
    seeds: Sequence[int],
    horizon: Optional[int] = None,
) -> AblationComparison:
    """Paired full-minus-ablation deltas on U_total, E and spike resolution ticks."""
    full_eval = evaluate(config, full, seeds, horizon)
    ablation_eval = evaluate(config, ablation, seeds, horizon)
    deltas: Dict[str, List[Optional[float]]] = {"u_total": [], "E": [], "resolution_ticks": []}
    for i, seed in enumerate(seeds):
        deltas["u_total"].append(full_eval.per_seed[i]["mean_u_total"] - ablation_eval.per_seed[i]["mean_u_total"])
        deltas["E"].append(full_eval.per_seed[i]["mean_E"] - ablation_eval.per_seed[i]["mean_E"])
        full_report, _ = run_spike_case_study(config, full, seed)
        ablation_report, _ = run_spike_case_study(config, ablation, seed)
        if full_report.resolution_ticks is None or ablation_report.resolution_ticks is None:
            deltas["resolution_ticks"].append(None)
        else:
            deltas["resolution_ticks"].append(float(full_report.resolution_ticks - ablation_report.resolution_ticks))

    mean_deltas: Dict[str, Optional[float]] = {}
    sign_counts: Dict[str, Dict[str, int]] = {}
    for name, values in deltas.items():
        known = [v for v in values if v is not None]
        mean_deltas[name] = float(np.mean(known)) if known else None
        sign_counts[name] = {
            "positive": sum(1 for v in known if v > 0),
            "negative": sum(1 for v in known if v < 0),
            "zero": sum(1 for v in known if v == 0),
            "missing": len(values) - len(known),
        }
    return AblationComparison(seeds=list(seeds), deltas=deltas, mean_deltas=mean_deltas, sign_counts=sign_counts)


def write_report(report: CaseStudyReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2))
    return path
