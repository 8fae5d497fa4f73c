"""
Slicing Environment for SliceSim
Discrete-time RAN slicing simulator: arrivals, channels, queues, constraints and spikes.
"""

import copy
import math
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.schema import (
    SimConfig, QosTargets, QosAchieved, SliceState, SpikeEvent,
    SpikeMechanism, SliceType, SLICE_ORDER, Budgets,
    ConstraintStatus, FeasibilityReport, InfoRecord
)
from src.core.link_model import (
    sample_arrivals, snr, achieved_throughput, achieved_latency,
    achieved_reliability, clamp_latency
)
from src.core.errors import ConstraintViolationError


# =============================================================================
# LOGGING SETUP
# =============================================================================

logger = logging.getLogger("SliceSim.Env")


# =============================================================================
# GLOBAL STATE LAYOUT
# =============================================================================

# Per-slice features, in observation order
SLICE_FEATURES: Tuple[str, ...] = (
    "queue_occupancy",
    "offered_load",
    "mean_snr",
    "power_headroom",
    "prb_headroom",
    "compute_headroom",
    "predicted_demand",
    "latency_ratio",
    "throughput_ratio",
    "reliability_margin",
    "spike_flag",
    "time_of_day_sin",
)

# RIC context features appended after the three slice blocks
CONTEXT_FEATURES: Tuple[str, ...] = (
    "power_utilization",
    "prb_utilization",
    "compute_utilization",
    "time_of_day_cos",
)

FEATURES_PER_SLICE = len(SLICE_FEATURES)
STATE_DIM = FEATURES_PER_SLICE * len(SLICE_ORDER) + len(CONTEXT_FEATURES)

FEATURE_NAMES: Tuple[str, ...] = tuple(
    f"{s.value}.{f}" for s in SLICE_ORDER for f in SLICE_FEATURES
) + tuple(f"ctx.{f}" for f in CONTEXT_FEATURES)

# A GlobalState is a raw float64 vector of length STATE_DIM laid out as FEATURE_NAMES
GlobalState = np.ndarray

LATENCY_RATIO_CAP = 10.0
THROUGHPUT_RATIO_CAP = 3.0
FORECAST_HORIZON_TICKS = 10


def feature_index(slice_idx: int, name: str) -> int:
    """Position of a per-slice feature in the GlobalState vector."""
    return slice_idx * FEATURES_PER_SLICE + SLICE_FEATURES.index(name)


def context_index(name: str) -> int:
    return FEATURES_PER_SLICE * len(SLICE_ORDER) + CONTEXT_FEATURES.index(name)


# =============================================================================
# ALLOCATION
# =============================================================================

@dataclass
class Allocation:
    """Per-slice, per-UE power (W), PRB and compute assignments."""
    power: List[np.ndarray]
    prb: List[np.ndarray]
    compute: List[np.ndarray]

    def vectors(self, slice_idx: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.power[slice_idx], self.prb[slice_idx], self.compute[slice_idx]

    def totals(self) -> np.ndarray:
        """(slice, resource) matrix of summed assignments."""
        return np.array([
            [float(np.sum(self.power[n])), float(np.sum(self.prb[n])), float(np.sum(self.compute[n]))]
            for n in range(len(self.power))
        ])

    def shares(self, budgets: Budgets) -> np.ndarray:
        return self.totals() / np.asarray(budgets.as_tuple())

    @classmethod
    def zeros(cls, ues: Sequence[int]) -> "Allocation":
        return cls(
            power=[np.zeros(u) for u in ues],
            prb=[np.zeros(u) for u in ues],
            compute=[np.zeros(u) for u in ues],
        )


def project_shares(shares: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Clip shares to [0, 1] and scale any resource column exceeding the budget.

    Returns:
        (projected shares, number of clamp events)
    """
    shares = np.asarray(shares, dtype=np.float64)
    clipped = np.clip(shares, 0.0, 1.0)
    events = int(np.count_nonzero(clipped != shares))
    column_sums = clipped.sum(axis=0)
    for r, total in enumerate(column_sums):
        if total > 1.0:
            clipped[:, r] = clipped[:, r] / total
            events += 1
    return clipped, events


def check_constraints(
    alloc: Allocation,
    achieved: Sequence[QosAchieved],
    targets: Sequence[QosTargets],
    budgets: Budgets,
    tolerance: float = 1e-9,
) -> FeasibilityReport:
    """
    Evaluate C1-C5. Never raises; every constraint gets a boolean and a slack.

    C4 uses the windowed latency success rate when available, otherwise the
    point latency of the tick.
    """
    report = FeasibilityReport()
    totals = alloc.totals().sum(axis=0)
    for r, (name, budget) in enumerate(zip(("C1", "C2", "C3"), budgets.as_tuple())):
        slack = budget - totals[r]
        report.constraints.append(ConstraintStatus(
            name=name, scope="global", satisfied=slack >= -tolerance * budget,
            slack=float(slack), slack_fraction=float(slack / budget),
        ))
    for n, (qos, tgt) in enumerate(zip(achieved, targets)):
        scope = SLICE_ORDER[n].value
        rate = qos.latency_success_rate
        if rate is None:
            rate = 1.0 if qos.latency_ms <= tgt.latency_target_ms else 0.0
        report.constraints.append(ConstraintStatus(
            name="C4", scope=scope, satisfied=rate >= tgt.reliability_target,
            slack=float(rate - tgt.reliability_target),
        ))
        report.constraints.append(ConstraintStatus(
            name="C5", scope=scope, satisfied=qos.throughput_mbps >= tgt.throughput_target_mbps,
            slack=float(qos.throughput_mbps - tgt.throughput_target_mbps),
        ))
    return report


# =============================================================================
# STEP RESULT
# =============================================================================

@dataclass
class StepResult:
    observation: GlobalState
    achieved: List[QosAchieved]
    info: InfoRecord
    allocation: Allocation
    utilization: np.ndarray
    done: bool = False


@dataclass
class _SliceRuntime:
    """Mutable per-slice simulation state."""
    demand_weights: np.ndarray
    queue: float = 0.0
    load_ewma: float = 1.0
    prev_ewma: float = 1.0
    last_arrivals: float = 0.0
    last_snr: float = 0.0
    latency_window: deque = field(default_factory=deque)
    load_history: deque = field(default_factory=deque)


# =============================================================================
# SLICING ENVIRONMENT
# =============================================================================

class SlicingEnv:
    """
    Owns the simulated cell: per-slice UE populations, queues and channels.

    One instance belongs to exactly one worker; all randomness comes from the
    generator seeded in reset().
    """

    def __init__(self, config: SimConfig, seed: int = 0, spikes: Optional[List[SpikeEvent]] = None):
        self.config = config
        self.budgets = config.budgets
        self.link = config.link
        self.spikes: List[SpikeEvent] = list(config.spikes if spikes is None else spikes)
        self.expected_mode = False
        self.reset(seed)
        logger.info(
            f"🌍 SlicingEnv initialized: {len(SLICE_ORDER)} slices, "
            f"{len(self.spikes)} scheduled spikes, seed {seed}"
        )

    # =========================================================================
    # LIFECYCLE
    # =========================================================================

    def reset(self, seed: Optional[int] = None) -> GlobalState:
        """Reinitialize populations, queues, shares and the RNG stream."""
        if seed is not None:
            self.seed = seed
        self.rng = np.random.default_rng(self.seed)
        self.tick = 0
        self.shares = np.array([s.initial_shares for s in self.config.slices], dtype=np.float64)
        self.slices: List[_SliceRuntime] = [
            _SliceRuntime(demand_weights=self._draw_weights(s.base_ues)) for s in self.config.slices
        ]
        self._interference_refs: Dict[int, float] = {}
        self._active_spikes: set = set()
        alloc = self.allocation_from_shares(self.shares)
        result = self._evaluate(alloc, arrivals=[0.0] * len(SLICE_ORDER), advance=False)
        self.last_result = result
        return result.observation

    def clone(self, expected_arrivals: bool = True) -> "SlicingEnv":
        """Independent copy; with expected_arrivals the next steps use means instead of draws."""
        twin = copy.deepcopy(self)
        twin.expected_mode = expected_arrivals
        return twin

    @property
    def done(self) -> bool:
        return self.tick >= self.config.episode_ticks

    @property
    def observation(self) -> GlobalState:
        return self.last_result.observation

    def active_ues(self) -> List[int]:
        return [len(s.demand_weights) for s in self.slices]

    def slice_states(self) -> List[SliceState]:
        states = []
        for n, (cfg, rt) in enumerate(zip(self.config.slices, self.slices)):
            states.append(SliceState(
                slice_id=cfg.slice_id,
                active_ues=len(rt.demand_weights),
                arrival_rate=self._arrival_rate(n, self.tick) / self.config.tick_s,
                queue_occupancy=min(1.0, rt.queue / cfg.queue_capacity),
                mean_snr=rt.last_snr,
                shares=tuple(float(x) for x in self.shares[n]),
            ))
        return states

    # =========================================================================
    # ALLOCATION HELPERS
    # =========================================================================

    def allocation_from_shares(self, shares: np.ndarray) -> Allocation:
        """
        Split slice-level shares across UEs.

        Power is split equally; PRBs and compute blend an equal split with a
        demand-proportional split.
        """
        shares = np.asarray(shares, dtype=np.float64)
        budgets = np.asarray(self.budgets.as_tuple())
        lam = self.config.equal_split_weight
        power, prb, compute = [], [], []
        for n, rt in enumerate(self.slices):
            ues = len(rt.demand_weights)
            equal = np.full(ues, 1.0 / ues)
            blended = lam * equal + (1.0 - lam) * rt.demand_weights / rt.demand_weights.sum()
            totals = shares[n] * budgets
            power.append(totals[0] * equal)
            prb.append(totals[1] * blended)
            compute.append(totals[2] * blended)
        return Allocation(power=power, prb=prb, compute=compute)

    # =========================================================================
    # STEP
    # =========================================================================

    def step(self, alloc: Allocation) -> StepResult:
        """
        Advance one tick under a feasible allocation.

        Raises:
            ConstraintViolationError: when the allocation breaks C1, C2 or C3.
        """
        budget_report = check_constraints(alloc, [], [], self.budgets)
        broken = budget_report.violated(["C1", "C2", "C3"])
        if broken:
            names = ", ".join(c.name for c in broken)
            raise ConstraintViolationError(f"infeasible allocation at tick {self.tick}: {names}", budget_report)
        if any(len(v) != u for v, u in zip(alloc.power, self.active_ues())):
            raise ValueError("allocation vectors must match the active UE counts")
        if any(np.any(v < 0) for n in range(len(SLICE_ORDER)) for v in alloc.vectors(n)):
            raise ValueError("allocation entries must be nonnegative")

        self._update_spike_log()
        arrivals = []
        for n in range(len(SLICE_ORDER)):
            rate = self._arrival_rate(n, self.tick)
            arrivals.append(rate if self.expected_mode else float(sample_arrivals(rate, self.rng)))
        result = self._evaluate(alloc, arrivals, advance=True)
        self.shares = alloc.shares(self.budgets)
        self.last_result = result
        return result

    def _evaluate(self, alloc: Allocation, arrivals: List[float], advance: bool) -> StepResult:
        link = self.link
        tick = self.tick
        tick_s = self.config.tick_s
        totals = alloc.totals()
        ceiling = self.config.latency_clamp_factor * max(s.targets.latency_target_ms for s in self.config.slices)
        achieved: List[QosAchieved] = []
        served_all, dropped_all, util_all = [], [], []
        spike_flags = {s.value: False for s in SLICE_ORDER}

        for n, (cfg, rt) in enumerate(zip(self.config.slices, self.slices)):
            p_n, b_n, c_n = totals[n]
            gain = link.channel_gains[n]
            if advance and not self.expected_mode and self.config.gain_jitter_db > 0:
                gain *= 10 ** (self.rng.normal(0.0, self.config.gain_jitter_db) / 10.0)
            interference = 0.0
            for i, ev in enumerate(self.spikes):
                if ev.target_slice != cfg.slice_id or not ev.is_active(tick):
                    continue
                spike_flags[cfg.slice_id.value] = True
                if ev.mechanism == SpikeMechanism.GAIN_DROP:
                    gain *= ev.magnitude
                elif ev.mechanism == SpikeMechanism.INTERFERENCE_SURGE:
                    embb_power = totals[SLICE_ORDER.index(SliceType.EMBB)][0]
                    ref = self._interference_refs.setdefault(i, embb_power)
                    coupling = embb_power / ref if ref > 0 else 1.0
                    interference += (ev.magnitude - 1.0) * link.noise_density_w * b_n * coupling

            snr_n = snr(b_n, p_n, gain, link.noise_density_w, interference)
            t_mbps = achieved_throughput(b_n, p_n, gain, link.noise_density_w, link.prb_bandwidth_hz, interference)
            t_bps = t_mbps * 1e6

            backlog_before = rt.queue
            demand = backlog_before + arrivals[n]
            capacity = t_bps * tick_s / link.packet_bits
            served = min(demand, capacity)
            queue = demand - served
            dropped = max(0.0, queue - cfg.queue_capacity)
            queue = min(queue, cfg.queue_capacity)

            latency = achieved_latency(link.packet_bits, t_bps, c_n, link.service_rate)
            if t_bps > 0 and math.isfinite(latency):
                latency += queue * link.packet_bits / t_bps * 1000.0
            latency = clamp_latency(latency, ceiling)
            reliability = achieved_reliability(snr_n, link.packet_bits)

            if capacity > 0:
                rho = min(1.0, demand / capacity)
            else:
                rho = 1.0 if demand > 0 else 0.0
            compute_need = demand / tick_s / link.service_rate
            util_c = min(1.0, compute_need / c_n) if c_n > 0 else 1.0
            util_all.append((rho, rho, util_c))

            window = rt.latency_window
            met = latency <= cfg.targets.latency_target_ms
            if advance:
                window.append((served, met))
                while len(window) > self.config.c4_window_ticks:
                    window.popleft()
            served_sum = sum(s for s, _ in window)
            if served_sum > 0:
                success = sum(s for s, m in window if m) / served_sum
            else:
                success = 1.0 if met else 0.0

            ues = len(rt.demand_weights)
            power_used = p_n + link.circuit_power_w
            achieved.append(QosAchieved(
                latency_ms=latency,
                reliability=min(1.0, max(0.0, reliability)),
                throughput_mbps=t_mbps,
                power_used_w=power_used,
                power_per_device_mw=power_used / ues * 1000.0,
                latency_success_rate=success,
            ))
            served_all.append(served)
            dropped_all.append(dropped)

            if advance:
                rt.queue = queue
                rt.last_snr = snr_n
                rt.last_arrivals = arrivals[n]
                self._update_forecast(n, arrivals[n])

        if advance:
            if not self.expected_mode:
                self._churn_ues()
            self.tick += 1

        utilization = np.array(util_all)
        feasibility = check_constraints(alloc, achieved, self.config.targets(), self.budgets)
        info = InfoRecord(
            tick=tick,
            spike_active=spike_flags,
            active_events=[
                f"{ev.mechanism.value}:{ev.target_slice.value}" for ev in self.spikes if ev.is_active(tick)
            ],
            feasibility=feasibility,
            arrivals=[int(round(a)) for a in arrivals],
            served=served_all,
            dropped=dropped_all,
            utilization=[tuple(u) for u in utilization],
            violation_flags={
                SLICE_ORDER[n].value: achieved[n].latency_ms > cfg.targets.latency_target_ms
                for n, cfg in enumerate(self.config.slices)
            },
        )
        observation = self._build_observation(alloc, achieved, utilization, spike_flags)
        return StepResult(
            observation=observation, achieved=achieved, info=info, allocation=alloc,
            utilization=utilization, done=self.done,
        )

    # =========================================================================
    # TRAFFIC
    # =========================================================================

    def _arrival_rate(self, n: int, tick: int) -> float:
        """Expected packet arrivals during one tick for slice n."""
        cfg = self.config.slices[n]
        ues = len(self.slices[n].demand_weights)
        phase = 2.0 * math.pi * tick / self.config.day_ticks
        rate = cfg.per_ue_packet_rate * ues * (1.0 + cfg.diurnal_amplitude * math.sin(phase))
        for surge in self.config.recurring_surges:
            if surge.target_slice == cfg.slice_id and surge.is_active(tick):
                rate *= surge.multiplier
        for ev in self.spikes:
            if ev.target_slice == cfg.slice_id and ev.mechanism == SpikeMechanism.BUFFER_SURGE and ev.is_active(tick):
                rate *= ev.magnitude
        return rate * self.config.tick_s

    def _base_rate(self, n: int) -> float:
        cfg = self.config.slices[n]
        return cfg.per_ue_packet_rate * cfg.base_ues * self.config.tick_s

    def _update_forecast(self, n: int, arrivals: float) -> None:
        rt = self.slices[n]
        base = self._base_rate(n)
        ratio = arrivals / base if base > 0 else 0.0
        rt.prev_ewma = rt.load_ewma
        rt.load_ewma = (1.0 - self.config.demand_ewma) * rt.load_ewma + self.config.demand_ewma * ratio
        rt.load_history.append(ratio)
        while len(rt.load_history) > self.config.day_ticks:
            rt.load_history.popleft()

    def _predicted_demand(self, n: int) -> float:
        """EWMA trend forecast, raised by the seasonal value one day earlier when known."""
        rt = self.slices[n]
        trend = rt.load_ewma + FORECAST_HORIZON_TICKS * (rt.load_ewma - rt.prev_ewma)
        history = rt.load_history
        if len(history) >= self.config.day_ticks:
            seasonal = history[FORECAST_HORIZON_TICKS - 1] if FORECAST_HORIZON_TICKS <= len(history) else history[-1]
            trend = max(trend, seasonal)
        return trend - 1.0

    def _draw_weights(self, count: int) -> np.ndarray:
        return self.rng.lognormal(mean=0.0, sigma=0.5, size=count)

    def _churn_ues(self) -> None:
        """Poisson session arrivals and binomial departures; every slice keeps at least one UE."""
        tick_s = self.config.tick_s
        for cfg, rt in zip(self.config.slices, self.slices):
            ues = len(rt.demand_weights)
            leave = int(self.rng.binomial(ues, min(1.0, tick_s / cfg.mean_session_s)))
            join = int(self.rng.poisson(cfg.ue_arrival_rate_per_s * tick_s))
            if leave:
                keep = np.sort(self.rng.choice(ues, size=ues - min(leave, ues - 1), replace=False))
                rt.demand_weights = rt.demand_weights[keep]
            if join:
                rt.demand_weights = np.concatenate([rt.demand_weights, self._draw_weights(join)])

    def _update_spike_log(self) -> None:
        for i, ev in enumerate(self.spikes):
            active = ev.is_active(self.tick)
            if active and i not in self._active_spikes:
                self._active_spikes.add(i)
                logger.info(
                    f"🌪️ Spike started at tick {self.tick}: {ev.mechanism.value} on "
                    f"{ev.target_slice.value} (x{ev.magnitude:.2f}, {ev.duration_ticks} ticks)"
                )
            elif not active and i in self._active_spikes:
                self._active_spikes.discard(i)
                self._interference_refs.pop(i, None)
                logger.info(f"✅ Spike ended at tick {self.tick}: {ev.mechanism.value} on {ev.target_slice.value}")

    # =========================================================================
    # OBSERVATION
    # =========================================================================

    def _build_observation(
        self,
        alloc: Allocation,
        achieved: List[QosAchieved],
        utilization: np.ndarray,
        spike_flags: Dict[str, bool],
    ) -> GlobalState:
        obs = np.zeros(STATE_DIM)
        phase = 2.0 * math.pi * self.tick / self.config.day_ticks
        for n, (cfg, rt) in enumerate(zip(self.config.slices, self.slices)):
            tgt = cfg.targets
            qos = achieved[n]
            base = self._base_rate(n)
            snr_db = 10.0 * math.log10(rt.last_snr + 1e-12)
            margin = (qos.reliability - tgt.reliability_target) / (1.0 - tgt.reliability_target + 1e-12)
            values = {
                "queue_occupancy": min(1.0, rt.queue / cfg.queue_capacity),
                "offered_load": rt.last_arrivals / base if base > 0 else 0.0,
                "mean_snr": float(np.clip((snr_db - 10.0) / 10.0, -3.0, 3.0)),
                "power_headroom": 1.0 - utilization[n][0],
                "prb_headroom": 1.0 - utilization[n][1],
                "compute_headroom": 1.0 - utilization[n][2],
                "predicted_demand": self._predicted_demand(n),
                "latency_ratio": min(qos.latency_ms / tgt.latency_target_ms, LATENCY_RATIO_CAP),
                "throughput_ratio": min(qos.throughput_mbps / tgt.throughput_target_mbps, THROUGHPUT_RATIO_CAP),
                "reliability_margin": float(np.clip(margin, -3.0, 1.0)),
                "spike_flag": 1.0 if spike_flags[cfg.slice_id.value] else 0.0,
                "time_of_day_sin": math.sin(phase),
            }
            for name, value in values.items():
                obs[feature_index(n, name)] = value
        shares = alloc.shares(self.budgets).sum(axis=0)
        obs[context_index("power_utilization")] = shares[0]
        obs[context_index("prb_utilization")] = shares[1]
        obs[context_index("compute_utilization")] = shares[2]
        obs[context_index("time_of_day_cos")] = math.cos(phase)
        return obs
