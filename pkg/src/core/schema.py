"""
Schema definitions for SliceSim
Pydantic models for configuration documents, QoS records and reports.
"""

import math
from enum import Enum
from typing import Optional, List, Dict, Tuple
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# =============================================================================
# ENUMS
# =============================================================================

class SliceType(str, Enum):
    """Slice classes served by the RAN."""
    URLLC = "URLLC"
    EMBB = "eMBB"
    MMTC = "mMTC"


# Fixed slice ordering used by every vector in the system
SLICE_ORDER: Tuple[SliceType, ...] = (SliceType.URLLC, SliceType.EMBB, SliceType.MMTC)


class Resource(str, Enum):
    """Shared resources split between slices."""
    POWER = "power"
    PRB = "prb"
    COMPUTE = "compute"


RESOURCE_ORDER: Tuple[Resource, ...] = (Resource.POWER, Resource.PRB, Resource.COMPUTE)


class SpikeMechanism(str, Enum):
    """How an injected anomaly perturbs the target slice."""
    BUFFER_SURGE = "buffer_surge"
    INTERFERENCE_SURGE = "interference_surge"
    GAIN_DROP = "gain_drop"


class Phase(str, Enum):
    """Control-loop phases of the allocation controller."""
    REACTIVE = "reactive"
    INTER_SLICE = "inter_slice"
    PREDICTIVE = "predictive"


class Verdict(str, Enum):
    """Outcome of a scenario or a replay verification."""
    PASSED = "PASSED"
    FAILED = "FAILED"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# =============================================================================
# QOS MODELS
# =============================================================================

class QosTargets(_Strict):
    """Per-slice SLA targets."""
    latency_target_ms: float = Field(..., gt=0, description="Latency target in ms")
    reliability_target: float = Field(..., gt=0, le=1, description="Packet success probability target")
    throughput_target_mbps: float = Field(..., gt=0, description="Throughput target in Mbps")
    power_target_mw: Optional[float] = Field(default=None, gt=0, description="Per-device power target in mW")


class QosAchieved(BaseModel):
    """Measured QoS of one slice for one tick."""
    latency_ms: float = Field(..., ge=0)
    reliability: float = Field(..., ge=0, le=1)
    throughput_mbps: float = Field(..., ge=0)
    power_used_w: float = Field(default=0.0, ge=0, description="Slice transmit power plus circuit power")
    power_per_device_mw: float = Field(default=0.0, ge=0)
    latency_success_rate: Optional[float] = Field(
        default=None, ge=0, le=1,
        description="Windowed fraction of packets meeting the latency target"
    )


class SliceState(BaseModel):
    """Observable state of one slice."""
    slice_id: SliceType
    active_ues: int = Field(default=1, ge=0)
    arrival_rate: float = Field(default=0.0, ge=0, description="Packet arrival rate (packets/s)")
    queue_occupancy: float = Field(default=0.0, ge=0, le=1)
    mean_snr: float = Field(default=0.0, ge=0, description="Linear SNR")
    shares: Tuple[float, float, float] = Field(default=(0.0, 0.0, 0.0))

    @field_validator("shares")
    @classmethod
    def _shares_in_range(cls, v):
        if any(s < 0 or s > 1 for s in v):
            raise ValueError("shares must lie in [0, 1]")
        return v


# =============================================================================
# SIMULATOR CONFIGURATION
# =============================================================================

class LinkParams(_Strict):
    """PRB-level link abstraction parameters."""
    noise_density_w: float = Field(default=0.01, gt=0, description="Noise power per PRB (W)")
    channel_gains: Tuple[float, float, float] = Field(default=(0.93, 1.75, 0.40))
    packet_bits: int = Field(default=12000, ge=1)
    service_rate: float = Field(default=6667.0, gt=0, description="Packets/s per compute unit")
    circuit_power_w: float = Field(default=0.5, gt=0)
    prb_bandwidth_hz: float = Field(default=360e3, gt=0)

    @field_validator("channel_gains")
    @classmethod
    def _gains_positive(cls, v):
        if any(g <= 0 for g in v):
            raise ValueError("channel gains must be strictly positive")
        return v


class Budgets(_Strict):
    """Global resource budgets (constraints C1-C3)."""
    power_total_w: float = Field(default=40.0, gt=0)
    prb_total: float = Field(default=100.0, gt=0)
    compute_total: float = Field(default=1.0, gt=0)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.power_total_w, self.prb_total, self.compute_total)


class SpikeEvent(_Strict):
    """A scheduled anomaly."""
    trigger_tick: int = Field(..., ge=0)
    target_slice: SliceType
    mechanism: SpikeMechanism
    magnitude: float = Field(..., gt=0)
    duration_ticks: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_magnitude(self):
        if self.mechanism == SpikeMechanism.GAIN_DROP:
            if not 0 < self.magnitude < 1:
                raise ValueError("gain_drop magnitude must lie in (0, 1)")
        elif self.magnitude <= 1:
            raise ValueError(f"{self.mechanism.value} magnitude must exceed 1")
        return self

    def is_active(self, tick: int) -> bool:
        return self.trigger_tick <= tick < self.trigger_tick + self.duration_ticks


class RecurringSurge(_Strict):
    """Periodic load surge (e.g. a daily eMBB peak)."""
    target_slice: SliceType
    period_ticks: int = Field(..., ge=1)
    offset_ticks: int = Field(default=0, ge=0)
    duration_ticks: int = Field(default=1, ge=1)
    multiplier: float = Field(default=2.0, gt=0)

    def is_active(self, tick: int) -> bool:
        return (tick - self.offset_ticks) % self.period_ticks < self.duration_ticks and tick >= self.offset_ticks


class SliceConfig(_Strict):
    """Traffic and SLA definition of one slice."""
    slice_id: SliceType
    targets: QosTargets
    initial_shares: Tuple[float, float, float] = Field(..., description="(power, prb, compute) shares")
    base_ues: int = Field(default=10, ge=1)
    ue_arrival_rate_per_s: float = Field(default=0.0, ge=0)
    mean_session_s: float = Field(default=60.0, gt=0)
    per_ue_packet_rate: float = Field(..., ge=0, description="Packets/s per active UE")
    diurnal_amplitude: float = Field(default=0.1, ge=0, lt=1)
    queue_capacity: float = Field(default=2000.0, gt=0, description="Queue capacity in packets")


def _default_slices() -> List[SliceConfig]:
    return [
        SliceConfig(
            slice_id=SliceType.URLLC,
            targets=QosTargets(latency_target_ms=1.0, reliability_target=0.99999, throughput_target_mbps=50.0),
            initial_shares=(0.25, 0.30, 0.30),
            base_ues=10, ue_arrival_rate_per_s=1.0, mean_session_s=10.0,
            per_ue_packet_rate=200.0, diurnal_amplitude=0.05, queue_capacity=200.0,
        ),
        SliceConfig(
            slice_id=SliceType.EMBB,
            targets=QosTargets(latency_target_ms=30.0, reliability_target=0.99, throughput_target_mbps=100.0),
            initial_shares=(0.45, 0.50, 0.40),
            base_ues=20, ue_arrival_rate_per_s=2.0, mean_session_s=10.0,
            per_ue_packet_rate=300.0, diurnal_amplitude=0.2, queue_capacity=2000.0,
        ),
        SliceConfig(
            slice_id=SliceType.MMTC,
            targets=QosTargets(
                latency_target_ms=1000.0, reliability_target=0.99,
                throughput_target_mbps=0.001, power_target_mw=100.0,
            ),
            initial_shares=(0.20, 0.15, 0.20),
            base_ues=100, ue_arrival_rate_per_s=10.0, mean_session_s=10.0,
            per_ue_packet_rate=0.5, diurnal_amplitude=0.1, queue_capacity=2000.0,
        ),
    ]


class SimConfig(_Strict):
    """Environment configuration."""
    tick_ms: float = Field(default=10.0, gt=0)
    episode_ticks: int = Field(default=1000, ge=1)
    budgets: Budgets = Field(default_factory=Budgets)
    link: LinkParams = Field(default_factory=LinkParams)
    slices: List[SliceConfig] = Field(default_factory=_default_slices)
    spikes: List[SpikeEvent] = Field(default_factory=list)
    recurring_surges: List[RecurringSurge] = Field(default_factory=list)
    gain_jitter_db: float = Field(default=1.0, ge=0)
    c4_window_ticks: int = Field(default=100, ge=1)
    day_ticks: int = Field(default=1000, ge=1, description="Period of the diurnal load cycle")
    equal_split_weight: float = Field(default=0.7, ge=0, le=1, description="Blend of equal vs demand split across UEs")
    demand_ewma: float = Field(default=0.1, gt=0, le=1)
    latency_clamp_factor: float = Field(default=10.0, gt=1)

    @model_validator(mode="after")
    def _check_slices(self):
        ids = tuple(s.slice_id for s in self.slices)
        if ids != SLICE_ORDER:
            raise ValueError(f"slices must be listed in order {[s.value for s in SLICE_ORDER]}")
        for r in range(3):
            if sum(s.initial_shares[r] for s in self.slices) > 1 + 1e-9:
                raise ValueError(f"initial {RESOURCE_ORDER[r].value} shares exceed the budget")
        for s in self.slices:
            if s.slice_id == SliceType.MMTC and s.targets.power_target_mw is None:
                raise ValueError("mMTC requires a power target")
        return self

    @property
    def tick_s(self) -> float:
        return self.tick_ms / 1000.0

    def targets(self) -> List[QosTargets]:
        return [s.targets for s in self.slices]


# =============================================================================
# CONSTRAINTS & STEP INFO
# =============================================================================

class ConstraintStatus(BaseModel):
    """Status of one constraint (C1-C5) for one scope."""
    name: str
    scope: str = Field(default="global", description="'global' or a slice id")
    satisfied: bool
    slack: float = Field(..., description="Budget minus usage; negative when violated")
    slack_fraction: Optional[float] = Field(default=None)


class FeasibilityReport(BaseModel):
    """Per-constraint booleans and slack."""
    constraints: List[ConstraintStatus] = Field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return all(c.satisfied for c in self.constraints)

    def violated(self, names: Optional[List[str]] = None) -> List[ConstraintStatus]:
        return [c for c in self.constraints if not c.satisfied and (names is None or c.name in names)]

    def get(self, name: str, scope: str = "global") -> Optional[ConstraintStatus]:
        for c in self.constraints:
            if c.name == name and c.scope == scope:
                return c
        return None


class InfoRecord(BaseModel):
    """Side information emitted by one environment step."""
    tick: int
    spike_active: Dict[str, bool] = Field(default_factory=dict)
    active_events: List[str] = Field(default_factory=list)
    feasibility: FeasibilityReport = Field(default_factory=FeasibilityReport)
    arrivals: List[int] = Field(default_factory=list)
    served: List[float] = Field(default_factory=list)
    dropped: List[float] = Field(default_factory=list)
    utilization: List[Tuple[float, float, float]] = Field(default_factory=list)
    violation_flags: Dict[str, bool] = Field(default_factory=dict)


# =============================================================================
# UTILITY MODELS
# =============================================================================

class UtilityWeights(_Strict):
    """Weights and penalty rates of the slice and total utility."""
    slice_weights: Tuple[float, float, float] = Field(default=(0.5, 0.3, 0.2))
    slice_mix: Tuple[Tuple[float, float, float], ...] = Field(
        default=((0.6, 0.2, 0.2), (0.6, 0.2, 0.2), (0.6, 0.2, 0.2)),
        description="Per-slice (alpha, beta, gamma)"
    )
    lambda_latency: float = Field(default=2.0, ge=0, description="Per ms")
    lambda_reliability: float = Field(default=100.0, ge=0)
    lambda_throughput: float = Field(default=5.0, ge=0)
    lambda_power: float = Field(default=1.0, ge=0, description="Per mW")
    w_xrl: float = Field(default=0.1, ge=0)

    @model_validator(mode="after")
    def _check_sums(self):
        if abs(sum(self.slice_weights) - 1.0) > 1e-9 or any(w < 0 for w in self.slice_weights):
            raise ValueError("slice weights must be nonnegative and sum to 1")
        if len(self.slice_mix) != 3:
            raise ValueError("slice_mix needs one (alpha, beta, gamma) per slice")
        for mix in self.slice_mix:
            if abs(sum(mix) - 1.0) > 1e-9 or any(m < 0 for m in mix):
                raise ValueError("alpha + beta + gamma must equal 1 per slice")
        return self

    @property
    def penalty_rates(self) -> Tuple[float, float, float, float]:
        return (self.lambda_latency, self.lambda_reliability, self.lambda_throughput, self.lambda_power)


class SliceUtility(BaseModel):
    """Utility components of one slice."""
    slice_id: SliceType
    u_latency: float = Field(..., ge=0, le=1)
    u_reliability: float = Field(..., ge=0, le=1)
    u_throughput: float = Field(..., ge=0, le=1)
    u_power: float = Field(..., ge=0, le=1)
    u_qos: float = Field(..., ge=0, le=1)
    u_eff: float = Field(..., ge=0, le=1)
    u_fair: float = Field(..., ge=0, le=1)
    u_slice: float = Field(..., ge=0, le=1)


class UtilityBreakdown(BaseModel):
    """Per-slice breakdown plus the weighted total."""
    slices: List[SliceUtility]
    u_total: float = Field(..., ge=0, le=1)


# =============================================================================
# EXPLANATION MODELS
# =============================================================================

class ExplainWeights(_Strict):
    """Weights of sparsity, consistency and faithfulness."""
    eta: Tuple[float, float, float] = Field(default=(0.3, 0.3, 0.4))

    @field_validator("eta")
    @classmethod
    def _eta_simplex(cls, v):
        if any(x < 0 for x in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("eta must be nonnegative and sum to 1")
        return v


class ExplainConfig(_Strict):
    weights: ExplainWeights = Field(default_factory=ExplainWeights)
    epsilon: float = Field(default=0.1, gt=0)
    replay_window: int = Field(default=512, ge=2)
    top_k: int = Field(default=3, ge=1)
    fd_scale: float = Field(default=1e-4, gt=0)
    dominance_ratio: float = Field(default=3.0, gt=1, description="Peak over uniform needed to name a cause")


class ExplanationRecord(BaseModel):
    """Human-readable explanation of one decision tick."""
    tick: int
    lead_slice: SliceType
    top_features: List[Tuple[str, float]]
    primary_cause: Optional[str] = None
    dominant_edge: Optional[Tuple[str, str, float]] = None
    temporal_pattern: bool = False
    temporal_peak_offset: Optional[int] = None
    counterfactual_ranking: List[Tuple[str, float]] = Field(default_factory=list)
    selected_action: Optional[str] = None
    confidence: float = Field(..., ge=0, le=1)
    confidence_level: str
    summary: str
    phase_notes: List[str] = Field(default_factory=list)
    attention: List[List[float]] = Field(default_factory=list, description="Joint fused attention, one row per agent")
    attention_sha256: str


# =============================================================================
# LEARNING & CONTROL CONFIGURATION
# =============================================================================

class PolicyConfig(_Strict):
    hidden_size: int = Field(default=64, ge=1)
    history_window: int = Field(default=8, ge=1)
    key_dim: int = Field(default=16, ge=1)
    n_candidates: int = Field(default=5, ge=2)
    deltas: Tuple[float, ...] = Field(default=(-0.10, -0.05, 0.0, 0.05, 0.10))
    share_floor: float = Field(default=0.05, ge=0, lt=1)
    confidence_gate: float = Field(default=0.2, ge=0, le=1)
    init_scale: float = Field(default=0.1, gt=0)

    @field_validator("deltas")
    @classmethod
    def _has_noop(cls, v):
        if 0.0 not in v:
            raise ValueError("deltas must contain the no-op 0.0")
        if list(v) != sorted(v):
            raise ValueError("deltas must be sorted")
        return v


class TrainConfig(_Strict):
    """PPO hyperparameters."""
    gamma: float = Field(default=0.99, gt=0, le=1)
    lambda_gae: float = Field(default=0.95, gt=0, le=1)
    clip_eps: float = Field(default=0.2, gt=0, le=0.5)
    learning_rate: float = Field(default=3e-4, ge=0)
    epochs: int = Field(default=4, ge=1)
    minibatch_size: int = Field(default=256, ge=1)
    alpha_xrl: float = Field(default=0.5, ge=0)
    beta: Tuple[float, float, float] = Field(default=(0.3, 0.3, 0.4))
    rollout_length: int = Field(default=2048, ge=0)
    iterations: int = Field(default=200, ge=0)
    n_envs: int = Field(default=4, ge=1)
    value_coef: float = Field(default=0.5, ge=0)
    entropy_coef: float = Field(default=0.01, ge=0)
    cf_coef: float = Field(default=0.1, ge=0)
    max_grad_norm: float = Field(default=0.5, gt=0)
    clamp_penalty: float = Field(default=0.05, ge=0)
    nan_snapshot_path: str = Field(default="nan_snapshot.json")

    @field_validator("beta")
    @classmethod
    def _beta_nonneg(cls, v):
        if any(b < 0 for b in v):
            raise ValueError("beta weights must be nonnegative")
        return v


class PhaseSchedule(_Strict):
    """Tick periods of the three control phases."""
    reactive_every: int = Field(default=1, ge=1)
    inter_slice_every: int = Field(default=5, ge=1)
    predictive_every: int = Field(default=10, ge=1)
    inter_slice_enabled: bool = True
    predictive_enabled: bool = True

    @model_validator(mode="after")
    def _reactive_divides(self):
        if self.inter_slice_every % self.reactive_every or self.predictive_every % self.reactive_every:
            raise ValueError("reactive period must divide the other periods")
        return self

    @classmethod
    def reactive_only(cls) -> "PhaseSchedule":
        return cls(inter_slice_enabled=False, predictive_enabled=False)

    def due(self, tick: int) -> List[Phase]:
        """Phases due at a tick, in execution order."""
        phases = []
        if tick % self.reactive_every == 0:
            phases.append(Phase.REACTIVE)
        if self.inter_slice_enabled and tick % self.inter_slice_every == 0:
            phases.append(Phase.INTER_SLICE)
        if self.predictive_enabled and tick % self.predictive_every == 0:
            phases.append(Phase.PREDICTIVE)
        return phases


class ControllerConfig(_Strict):
    schedule: PhaseSchedule = Field(default_factory=PhaseSchedule)
    predictive_threshold: float = Field(default=1.5, description="Trigger on the attention-weighted standardized demand score")
    predictive_delta: float = Field(default=0.05, gt=0, le=0.05, description="Pre-allocation step, at most +5%")
    trade_step: float = Field(default=0.05, gt=0, le=0.5)


def _default_case_study_spikes() -> List[SpikeEvent]:
    return [
        SpikeEvent(trigger_tick=200, target_slice=SliceType.URLLC,
                   mechanism=SpikeMechanism.BUFFER_SURGE, magnitude=2.0, duration_ticks=5),
        SpikeEvent(trigger_tick=200, target_slice=SliceType.URLLC,
                   mechanism=SpikeMechanism.INTERFERENCE_SURGE, magnitude=3.0, duration_ticks=50),
    ]


class ScenarioConfig(_Strict):
    spikes: List[SpikeEvent] = Field(default_factory=_default_case_study_spikes)
    horizon: int = Field(default=400, ge=1)
    sustain_ticks: int = Field(default=10, ge=1)
    resolution_budget_ticks: int = Field(default=5, ge=0, description="Reactive ticks allowed from detection to resolution")
    decision_p99_ms: float = Field(default=25.0, gt=0, description="Bound on the p99 per-tick decision time")
    continuity_threshold: float = Field(default=0.95, ge=0, le=1)
    n_eval_seeds: int = Field(default=5, ge=1)
    eval_horizon: int = Field(default=1000, ge=1)


class SliceSimConfig(_Strict):
    """Top-level configuration document."""
    seed: int = Field(default=7, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [7])
    sim: SimConfig = Field(default_factory=SimConfig)
    utility: UtilityWeights = Field(default_factory=UtilityWeights)
    explain: ExplainConfig = Field(default_factory=ExplainConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)


# =============================================================================
# REPORTS
# =============================================================================

class SlaVerdict(BaseModel):
    """One row of the emergency-response metric table."""
    metric: str
    target: str
    achieved: str
    passed: bool


class CaseStudyReport(BaseModel):
    """Result of the latency-spike case study."""
    verdict: Verdict
    seed: int
    config_hash: str
    detection_tick: Optional[int] = None
    resolution_tick: Optional[int] = None
    resolution_ticks: Optional[int] = None
    decision_wall_ms: float = 0.0
    decision_wall_p99_ms: float = 0.0
    allocation_table: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    qos_table: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    attention_trace: List[Dict[str, object]] = Field(default_factory=list)
    counterfactual_ranking: List[Tuple[str, float]] = Field(default_factory=list)
    sla_verdicts: List[SlaVerdict] = Field(default_factory=list)
    reference_context: Dict[str, float] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _ordered_ticks(self):
        if self.detection_tick is not None and self.resolution_tick is not None:
            if self.resolution_tick < self.detection_tick:
                raise ValueError("resolution_tick precedes detection_tick")
        return self


class MetricSummary(BaseModel):
    """Mean and 95% confidence interval of one evaluation metric."""
    mean: float
    ci_low: float
    ci_high: float
    values: List[float]

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2.0 if math.isfinite(self.ci_high) else math.inf


class EvaluationSummary(BaseModel):
    """Per-seed and aggregate evaluation statistics."""
    seeds: List[int]
    per_seed: List[Dict[str, float]]
    aggregate: Dict[str, MetricSummary]


class AblationComparison(BaseModel):
    """Paired comparison of the full model against the plain MAPPO ablation."""
    seeds: List[int]
    deltas: Dict[str, List[Optional[float]]]
    mean_deltas: Dict[str, Optional[float]]
    sign_counts: Dict[str, Dict[str, int]]


class RunManifest(BaseModel):
    """Written first in every output directory."""
    command: str
    config_hash: str
    seeds: List[int]
    code_version: str
    checkpoint: Optional[str] = None
    ablation: bool = False
