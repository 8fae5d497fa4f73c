"""
Three-phase allocation controller for SliceSim
Runs the reactive, inter-slice and predictive control loops around one policy.
"""

import time
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.core.schema import (
    SliceSimConfig, PhaseSchedule, Phase, SLICE_ORDER, RESOURCE_ORDER,
    ExplanationRecord, UtilityBreakdown
)
from src.core.env import SlicingEnv, StepResult, feature_index
from src.core.utility import utility_breakdown, state_utility, gini, slice_violation_score
from src.agents.policy import MultiAgentPolicy, JointDecision
from src.agents.explain import ExplainabilityTracker, ExplainScore, render_explanation
from src.utils.event_log import EventLog, EventType


logger = logging.getLogger("SliceSim.Controller")


# =============================================================================
# REWARD
# =============================================================================

@dataclass
class RewardParts:
    """r_t = utility + explainability - penalty."""
    utility: float
    explainability: float
    penalty: float

    @property
    def total(self) -> float:
        return self.utility + self.explainability - self.penalty


def reward(u_total: float, e: float, w_xrl: float) -> float:
    return u_total + w_xrl * e


def shaped_reward(u_total: float, e: float, w_xrl: float, clamp_events: int, clamp_penalty: float) -> RewardParts:
    """Reward with the soft penalty for projected-share clamp events."""
    return RewardParts(utility=u_total, explainability=w_xrl * e, penalty=clamp_penalty * clamp_events)


# =============================================================================
# TRAJECTORY
# =============================================================================

@dataclass
class Transition:
    """One decision tick as stored for training."""
    tick: int
    raw_obs: np.ndarray
    x: np.ndarray
    history: np.ndarray
    actions: np.ndarray
    masks: np.ndarray
    phi: np.ndarray
    logp: float
    value: float
    reward: float
    parts: RewardParts
    done: bool
    e_faithfulness: float


@dataclass
class Trajectory:
    transitions: List[Transition] = field(default_factory=list)
    trace_rows: List[Dict[str, object]] = field(default_factory=list)
    explanations: List[ExplanationRecord] = field(default_factory=list)
    decision_wall_ms: List[float] = field(default_factory=list)
    meta_weights: List[np.ndarray] = field(default_factory=list)
    bootstrap_value: float = 0.0

    def __len__(self) -> int:
        return len(self.transitions)

    def extend(self, other: "Trajectory") -> None:
        self.transitions.extend(other.transitions)
        self.trace_rows.extend(other.trace_rows)
        self.explanations.extend(other.explanations)
        self.decision_wall_ms.extend(other.decision_wall_ms)
        self.meta_weights.extend(other.meta_weights)
        self.bootstrap_value = other.bootstrap_value


@dataclass
class TradeDecision:
    recipient: int
    donor: int
    amount: float
    u_keep: float
    u_trade: float
    accepted: bool
    attention: float = 0.0


# =============================================================================
# CONTROLLER
# =============================================================================

class SliceController:
    """
    Maps one policy onto the 10/50/100 ms control loops.

    The policy runs exactly one forward pass per tick; the inter-slice and
    predictive phases reuse that pass's attention and never call it again.
    """

    def __init__(
        self,
        env: SlicingEnv,
        policy: MultiAgentPolicy,
        config: SliceSimConfig,
        schedule: Optional[PhaseSchedule] = None,
        rng: Optional[np.random.Generator] = None,
        greedy: bool = True,
        event_log: Optional[EventLog] = None,
        render: bool = True,
        phase_hook: Optional[Callable[[int, Phase], None]] = None,
    ):
        self.env = env
        self.policy = policy
        self.config = config
        self.schedule = schedule or config.controller.schedule
        self.rng = rng
        self.greedy = greedy
        self.event_log = event_log
        self.render = render
        self.phase_hook = phase_hook
        self.tracker = ExplainabilityTracker(config.explain)
        self.targets = config.sim.targets()
        self.reset_history()

    def reset_history(self) -> None:
        self.history: deque = deque(maxlen=self.policy.config.history_window)
        self.tracker.reset()

    def reset(self, seed: Optional[int] = None) -> None:
        self.env.reset(seed)
        self.reset_history()

    def utility_fn(self, state: np.ndarray) -> float:
        return state_utility(state, self.targets, self.config.utility)

    # =========================================================================
    # MAIN LOOP
    # =========================================================================

    def run_loop(self, horizon: int) -> Trajectory:
        """Run the phase schedule for horizon ticks (stops early at episode end)."""
        trajectory = Trajectory()
        for _ in range(horizon):
            if self.env.done:
                break
            self.step(trajectory)
        trajectory.bootstrap_value = self.bootstrap_value()
        return trajectory

    def bootstrap_value(self) -> float:
        if self.env.done:
            return 0.0
        x = self.policy.normalizer.normalize(self.env.observation)
        value, _ = self.policy.critic.forward(x)
        return value

    def _history_window(self, x: np.ndarray) -> np.ndarray:
        self.history.append(x)
        window = self.policy.empty_history()
        recent = np.asarray(self.history)
        window[-len(recent):] = recent
        return window

    def step(self, trajectory: Trajectory) -> StepResult:
        """Decide, act and record one tick."""
        env = self.env
        tick = env.tick
        raw_obs = env.observation.copy()
        previous = env.last_result
        shares = env.shares.copy()
        phases = self.schedule.due(tick)
        notes: List[str] = []

        started = time.perf_counter()
        x = self.policy.normalizer.normalize(raw_obs)
        history = self._history_window(x)
        decision = self.policy.act(raw_obs, history, shares, rng=self.rng, greedy=self.greedy)
        clamp_events = 0
        for phase in phases:
            if self.phase_hook is not None:
                self.phase_hook(tick, phase)
            if phase == Phase.REACTIVE:
                shares, clamp_events = self.reactive_phase(shares, decision)
            elif phase == Phase.INTER_SLICE:
                shares, note = self.inter_slice_phase(shares, previous, decision)
                notes.append(note)
            elif phase == Phase.PREDICTIVE:
                shares, note = self.predictive_phase(shares, decision, tick)
                notes.append(note)
        wall_ms = (time.perf_counter() - started) * 1000.0

        alloc = env.allocation_from_shares(shares)
        result = env.step(alloc)
        breakdown = self._breakdown(result)
        score = self.tracker.score(raw_obs, decision.joint_attention, self.utility_fn)
        parts = shaped_reward(
            breakdown.u_total, score.value, self.config.utility.w_xrl,
            clamp_events, self.config.train.clamp_penalty,
        )

        trajectory.transitions.append(Transition(
            tick=tick, raw_obs=raw_obs, x=decision.x, history=decision.history,
            actions=decision.actions, masks=np.stack([a.mask for a in decision.agents]),
            phi=np.stack([a.phi for a in decision.agents]), logp=decision.logp, value=decision.value,
            reward=parts.total, parts=parts, done=result.done, e_faithfulness=score.faithfulness,
        ))
        trajectory.meta_weights.append(np.stack([a.bundle.meta for a in decision.agents]))
        trajectory.trace_rows.extend(
            self._trace_rows(tick, phases, result, breakdown, score, parts, clamp_events, decision)
        )
        if self.render:
            started = time.perf_counter()
            trajectory.explanations.append(self._explain(raw_obs, decision, result, notes))
            wall_ms += (time.perf_counter() - started) * 1000.0
        trajectory.decision_wall_ms.append(wall_ms)
        return result

    # =========================================================================
    # PHASES
    # =========================================================================

    def reactive_phase(self, shares: np.ndarray, decision: JointDecision) -> Tuple[np.ndarray, int]:
        """Execute the policy's masked action, projected to the budgets."""
        return self.policy.apply(shares, decision)

    def inter_slice_phase(
        self, shares: np.ndarray, previous: StepResult, decision: JointDecision
    ) -> Tuple[np.ndarray, str]:
        """
        Move power and PRB share toward the most violated slice.

        The donor is the slice the recipient's cross-slice head attends to
        most among those with spare share. The trade is applied only when a
        one-tick lookahead on an expected-arrival clone strictly improves U_total.
        """
        trade = self.propose_trade(shares, previous, decision)
        if trade is None:
            return shares, "inter-slice: all slices satisfied, no trade"
        traded = self._traded_shares(shares, trade)
        try:
            trade.u_keep = self.lookahead_utility(shares)
            trade.u_trade = self.lookahead_utility(traded)
        except Exception as e:
            logger.warning(f"⚠️ Lookahead failed, keeping allocation: {e}")
            return shares, f"inter-slice: lookahead failed ({e})"
        trade.accepted = trade.u_trade > trade.u_keep
        recipient = SLICE_ORDER[trade.recipient].value
        donor = SLICE_ORDER[trade.donor].value
        verdict = "accepted" if trade.accepted else "rejected"
        message = (
            f"{donor} -> {recipient} {trade.amount * 100:.1f}% power/PRB {verdict} "
            f"(U_total {trade.u_keep:.4f} -> {trade.u_trade:.4f})"
        )
        logger.debug(f"🤝 Trade {message}")
        if self.event_log is not None:
            self.event_log.log(
                EventType.TRADE, f"Trade {verdict}", message, tick=self.env.tick, slice_id=recipient,
                data={"donor": donor, "recipient": recipient, "amount": trade.amount,
                      "u_keep": trade.u_keep, "u_trade": trade.u_trade, "accepted": trade.accepted},
            )
        return (traded if trade.accepted else shares), f"inter-slice: {message}"

    def propose_trade(
        self, shares: np.ndarray, previous: StepResult, decision: JointDecision
    ) -> Optional[TradeDecision]:
        scores = [
            slice_violation_score(q, t, self.config.utility) for q, t in zip(previous.achieved, self.targets)
        ]
        recipient = int(np.argmax(scores))
        if scores[recipient] <= 0.0:
            return None
        floor = self.policy.config.share_floor
        step = self.config.controller.trade_step
        headroom = min(1.0 - shares[recipient][0], 1.0 - shares[recipient][1])
        attention = decision.agents[recipient].bundle.cross_slice[recipient]

        candidates = []
        for donor in range(len(SLICE_ORDER)):
            if donor == recipient or scores[donor] >= scores[recipient]:
                continue
            amount = min(step, shares[donor][0] - floor, shares[donor][1] - floor, headroom)
            if amount > 0:
                candidates.append((float(attention[donor]), -scores[donor], donor, float(amount)))
        if not candidates:
            return None
        weight, _, donor, amount = max(candidates)
        return TradeDecision(recipient=recipient, donor=donor, amount=amount, u_keep=0.0, u_trade=0.0,
                             accepted=False, attention=weight)

    @staticmethod
    def _traded_shares(shares: np.ndarray, trade: TradeDecision) -> np.ndarray:
        traded = shares.copy()
        for r in (0, 1):
            traded[trade.donor][r] -= trade.amount
            traded[trade.recipient][r] += trade.amount
        return traded

    def lookahead_utility(self, shares: np.ndarray) -> float:
        twin = self.env.clone(expected_arrivals=True)
        result = twin.step(twin.allocation_from_shares(shares))
        return utility_breakdown(
            result.achieved, self.targets, result.utilization,
            [result.allocation.vectors(n) for n in range(len(SLICE_ORDER))], self.config.utility,
        ).u_total

    def forecast_score(self, decision: JointDecision, n: int) -> Tuple[float, float, float]:
        """
        Attention-weighted demand score for slice n.

        The forecast feature is read twice, once now and once through the
        temporal head over the history window, and scaled by how much of the
        semantic head sits on it relative to a uniform spread.
        """
        idx = feature_index(n, "predicted_demand")
        bundle = decision.agents[n].bundle
        relevance = min(1.0, len(bundle.semantic) * float(bundle.semantic[idx]))
        attended = float(bundle.temporal @ decision.history[:, idx])
        score = relevance * 0.5 * (float(decision.x[idx]) + attended)
        return score, relevance, attended

    def predictive_phase(self, shares: np.ndarray, decision: JointDecision, tick: int) -> Tuple[np.ndarray, str]:
        """Pre-allocate PRB and compute for slices whose attended demand score is high."""
        cfg = self.config.controller
        delta = cfg.predictive_delta
        shares = shares.copy()
        fired = []
        for n, slice_id in enumerate(SLICE_ORDER):
            score, relevance, attended = self.forecast_score(decision, n)
            if score <= cfg.predictive_threshold:
                continue
            applied = []
            for r in (1, 2):
                if shares[n][r] + delta <= 1.0 and shares[:, r].sum() + delta <= 1.0:
                    shares[n][r] += delta
                    applied.append(RESOURCE_ORDER[r].value)
            temporal = decision.agents[n].bundle.temporal
            peak = len(temporal) - 1 - int(np.argmax(temporal))
            rationale = (
                f"{slice_id.value} forecast score {score:.2f} "
                f"(semantic relevance {relevance:.2f}, attended demand {attended:.2f}, "
                f"temporal peak {peak} ticks ago); +{delta * 100:.0f}% "
                + ("/".join(applied) if applied else "blocked by budget")
            )
            fired.append(rationale)
            logger.debug(f"🔮 {rationale}")
            if self.event_log is not None:
                self.event_log.log(EventType.PREDICTIVE, "Pre-allocation", rationale, tick=tick,
                                   slice_id=slice_id.value,
                                   data={"score": score, "relevance": relevance, "attended": attended,
                                         "applied": applied})
        if not fired:
            return shares, "predictive: no surge forecast"
        return shares, "predictive: " + "; ".join(fired)

    # =========================================================================
    # RECORDS
    # =========================================================================

    def _breakdown(self, result: StepResult) -> UtilityBreakdown:
        return utility_breakdown(
            result.achieved, self.targets, result.utilization,
            [result.allocation.vectors(n) for n in range(len(SLICE_ORDER))], self.config.utility,
        )

    def _trace_rows(
        self,
        tick: int,
        phases: List[Phase],
        result: StepResult,
        breakdown: UtilityBreakdown,
        score: ExplainScore,
        parts: RewardParts,
        clamp_events: int,
        decision: JointDecision,
    ) -> List[Dict[str, object]]:
        rows = []
        shares = result.allocation.shares(self.env.budgets)
        phase_label = "+".join(p.value for p in phases)
        for n, slice_id in enumerate(SLICE_ORDER):
            qos = result.achieved[n]
            su = breakdown.slices[n]
            power, prb, compute = result.allocation.vectors(n)
            rows.append({
                "tick": tick, "slice": slice_id.value, "phase": phase_label,
                "power_share": shares[n][0], "prb_share": shares[n][1], "compute_share": shares[n][2],
                "latency_ms": qos.latency_ms, "reliability": qos.reliability,
                "throughput_mbps": qos.throughput_mbps, "power_used_w": qos.power_used_w,
                "power_per_device_mw": qos.power_per_device_mw,
                "latency_success_rate": qos.latency_success_rate,
                "queue": self.env.slices[n].queue,
                "spike_active": int(result.info.spike_active[slice_id.value]),
                "util_power": result.utilization[n][0], "util_prb": result.utilization[n][1],
                "util_compute": result.utilization[n][2],
                "gini_power": gini(power), "gini_prb": gini(prb), "gini_compute": gini(compute),
                "u_latency": su.u_latency, "u_reliability": su.u_reliability,
                "u_throughput": su.u_throughput, "u_power": su.u_power,
                "u_qos": su.u_qos, "u_eff": su.u_eff, "u_fair": su.u_fair, "u_slice": su.u_slice,
                "u_total": breakdown.u_total, "E": score.value, "e_sparsity": score.sparsity,
                "e_consistency": score.consistency, "e_faithfulness": score.faithfulness,
                "penalty": parts.penalty, "clamp_events": clamp_events, "reward": parts.total,
                "attention_sha256": decision.attention_sha256,
            })
        return rows

    def _explain(
        self, raw_obs: np.ndarray, decision: JointDecision, result: StepResult, notes: List[str]
    ) -> ExplanationRecord:
        ratios = [raw_obs[feature_index(n, "latency_ratio")] for n in range(len(SLICE_ORDER))]
        lead = int(np.argmax(ratios))
        agent = decision.agents[lead]
        return render_explanation(
            agent.bundle, result.info, SLICE_ORDER[lead], decision.joint_attention, self.config.explain,
            agent.bundle.candidate_labels, selected_action=agent.label, phase_notes=notes,
        )
