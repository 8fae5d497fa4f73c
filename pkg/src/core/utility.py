"""
Utility mathematics for SliceSim
Violation terms, QoS satisfaction, efficiency, Gini fairness, slice and total utility.
"""

import math
import logging
from typing import List, Sequence, Tuple

import numpy as np

from src.core.schema import (
    QosAchieved, QosTargets, UtilityWeights, SliceUtility, UtilityBreakdown, SLICE_ORDER
)
from src.core.env import feature_index


logger = logging.getLogger("SliceSim.Utility")


Violations = Tuple[float, float, float, float]


# =============================================================================
# QOS SATISFACTION
# =============================================================================

def violation_terms(achieved: QosAchieved, targets: QosTargets) -> Violations:
    """(v_L in ms, v_R, v_T normalized by target, v_P in mW per device)."""
    v_latency = max(0.0, achieved.latency_ms - targets.latency_target_ms)
    v_reliability = max(0.0, targets.reliability_target - achieved.reliability)
    v_throughput = max(0.0, targets.throughput_target_mbps - achieved.throughput_mbps) / targets.throughput_target_mbps
    if targets.power_target_mw is None:
        v_power = 0.0
    else:
        v_power = max(0.0, achieved.power_per_device_mw - targets.power_target_mw)
    return (v_latency, v_reliability, v_throughput, v_power)


def satisfaction_terms(violations: Sequence[float], rates: Sequence[float]) -> Tuple[float, ...]:
    """Per-metric min(1, exp(-lambda * v))."""
    terms = []
    for v, lam in zip(violations, rates):
        if v < 0:
            raise ValueError(f"violations must be nonnegative, got {v}")
        terms.append(min(1.0, math.exp(-lam * v)) if math.isfinite(v) else 0.0)
    return tuple(terms)


def qos_utility(violations: Sequence[float], rates: Sequence[float]) -> float:
    return float(np.prod(satisfaction_terms(violations, rates)))


# =============================================================================
# EFFICIENCY AND FAIRNESS
# =============================================================================

def efficiency_utility(used: Sequence[float], budget: Sequence[float]) -> float:
    """
    1 minus the mean utilization over (power, PRB, compute).

    A zero budget component counts as fully used.
    """
    ratios = []
    for u, b in zip(used, budget):
        if b <= 0:
            logger.debug("zero slice budget component; utilization taken as 1")
            ratios.append(1.0)
        else:
            ratios.append(min(1.0, max(0.0, u / b)))
    return 1.0 - float(np.mean(ratios))


def gini(x: Sequence[float]) -> float:
    """Gini coefficient sum|x_i - x_j| / (2 n^2 mean); all-zero vectors give 0."""
    values = np.asarray(x, dtype=np.float64)
    if values.size == 0:
        raise ValueError("gini needs at least one value")
    if np.any(values < 0):
        raise ValueError("gini is defined for nonnegative vectors")
    n = values.size
    mean = values.mean()
    if n == 1 or mean == 0:
        return 0.0
    # sorted form of the pairwise sum
    ordered = np.sort(values)
    index = np.arange(1, n + 1)
    pairwise = 2.0 * np.sum((2 * index - n - 1) * ordered)
    return float(pairwise / (2.0 * n * n * mean))


def fairness_utility(power: Sequence[float], prb: Sequence[float], compute: Sequence[float]) -> float:
    return float(np.mean([1.0 - gini(power), 1.0 - gini(prb), 1.0 - gini(compute)]))


# =============================================================================
# COMPOSITES
# =============================================================================

def slice_utility(u_qos: float, u_eff: float, u_fair: float, alpha: float, beta: float, gamma: float) -> float:
    return alpha * u_qos + beta * u_eff + gamma * u_fair


def total_utility(slice_utilities: Sequence[float], weights: Sequence[float]) -> float:
    return float(sum(w * u for w, u in zip(weights, slice_utilities)))


def utility_breakdown(
    achieved: Sequence[QosAchieved],
    targets: Sequence[QosTargets],
    utilization: np.ndarray,
    ue_vectors: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    weights: UtilityWeights,
) -> UtilityBreakdown:
    """
    Full per-slice breakdown for one tick.

    Args:
        utilization: (slice, resource) consumption over the slice's own allocation
        ue_vectors: per slice, the per-UE (power, prb, compute) vectors
    """
    slices: List[SliceUtility] = []
    for n, (qos, tgt) in enumerate(zip(achieved, targets)):
        terms = satisfaction_terms(violation_terms(qos, tgt), weights.penalty_rates)
        u_qos = float(np.prod(terms))
        u_eff = efficiency_utility(utilization[n], (1.0, 1.0, 1.0))
        u_fair = fairness_utility(*ue_vectors[n])
        alpha, beta, gamma = weights.slice_mix[n]
        u_n = slice_utility(u_qos, u_eff, u_fair, alpha, beta, gamma)
        slices.append(SliceUtility(
            slice_id=SLICE_ORDER[n],
            u_latency=terms[0], u_reliability=terms[1], u_throughput=terms[2], u_power=terms[3],
            u_qos=u_qos, u_eff=u_eff, u_fair=u_fair, u_slice=min(1.0, max(0.0, u_n)),
        ))
    u_total = total_utility([s.u_slice for s in slices], weights.slice_weights)
    return UtilityBreakdown(slices=slices, u_total=min(1.0, max(0.0, u_total)))


def state_utility(
    state: np.ndarray,
    targets: Sequence[QosTargets],
    weights: UtilityWeights,
) -> float:
    """
    U_total estimated from a raw GlobalState vector.

    Latency, reliability and throughput come from the ratio and margin
    features, efficiency from the headroom features. Power and fairness are
    not observable in the state and enter as fully satisfied.
    Used as the side-effect-free utility function for faithfulness.
    """
    state = np.asarray(state, dtype=np.float64)
    rates = weights.penalty_rates
    slice_values = []
    for n, tgt in enumerate(targets):
        latency_ratio = state[feature_index(n, "latency_ratio")]
        throughput_ratio = state[feature_index(n, "throughput_ratio")]
        margin = state[feature_index(n, "reliability_margin")]
        v_latency = max(0.0, latency_ratio - 1.0) * tgt.latency_target_ms
        v_reliability = max(0.0, -margin) * (1.0 - tgt.reliability_target)
        v_throughput = max(0.0, 1.0 - throughput_ratio)
        u_qos = qos_utility((v_latency, v_reliability, v_throughput, 0.0), rates)
        headroom = [state[feature_index(n, f)] for f in ("power_headroom", "prb_headroom", "compute_headroom")]
        u_eff = efficiency_utility([1.0 - h for h in headroom], (1.0, 1.0, 1.0))
        alpha, beta, gamma = weights.slice_mix[n]
        slice_values.append(slice_utility(u_qos, u_eff, 1.0, alpha, beta, gamma))
    return total_utility(slice_values, weights.slice_weights)


def slice_violation_score(achieved: QosAchieved, targets: QosTargets, weights: UtilityWeights) -> float:
    """Scalar severity 1 - U_qos used to rank slices for inter-slice trades."""
    return 1.0 - qos_utility(violation_terms(achieved, targets), weights.penalty_rates)
