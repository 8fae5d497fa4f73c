"""
Tests for the utility mathematics.
"""

import itertools
import math

import numpy as np
import pytest

from src.core.schema import QosAchieved, QosTargets, UtilityWeights
from src.core.env import STATE_DIM, feature_index
from src.core.utility import (
    violation_terms, satisfaction_terms, qos_utility, efficiency_utility, gini,
    fairness_utility, slice_utility, total_utility, utility_breakdown, state_utility
)


URLLC_TARGETS = QosTargets(latency_target_ms=1.0, reliability_target=0.99999, throughput_target_mbps=50.0)


def test_violation_terms_from_latency_overshoot():
    achieved = QosAchieved(latency_ms=1.15, reliability=0.999995, throughput_mbps=60.0)
    v = violation_terms(achieved, URLLC_TARGETS)
    assert v[0] == pytest.approx(0.15, abs=1e-12)
    assert v[1:] == (0.0, 0.0, 0.0)


def test_violation_terms_all_met_and_throughput_cap():
    met = QosAchieved(latency_ms=0.5, reliability=1.0, throughput_mbps=80.0)
    assert violation_terms(met, URLLC_TARGETS) == (0.0, 0.0, 0.0, 0.0)
    starved = QosAchieved(latency_ms=0.5, reliability=1.0, throughput_mbps=0.0)
    assert violation_terms(starved, URLLC_TARGETS)[2] == 1.0


def test_power_violation_only_with_target():
    targets = QosTargets(latency_target_ms=1000.0, reliability_target=0.99,
                         throughput_target_mbps=0.001, power_target_mw=100.0)
    achieved = QosAchieved(latency_ms=1.0, reliability=1.0, throughput_mbps=1.0, power_per_device_mw=130.0)
    assert violation_terms(achieved, targets)[3] == pytest.approx(30.0)
    assert violation_terms(achieved, URLLC_TARGETS)[3] == 0.0


def test_qos_utility_examples():
    rates = UtilityWeights().penalty_rates
    assert qos_utility((0.0, 0.0, 0.0, 0.0), rates) == 1.0
    assert qos_utility((0.15, 0.0, 0.0, 0.0), rates) == pytest.approx(math.exp(-0.3), abs=1e-12)
    assert qos_utility((math.inf, 0.0, 0.0, 0.0), rates) == 0.0


def test_satisfaction_rejects_negative_violation():
    with pytest.raises(ValueError):
        satisfaction_terms((-0.1, 0.0, 0.0, 0.0), (1.0, 1.0, 1.0, 1.0))


def test_efficiency_utility():
    assert efficiency_utility((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)) == 1.0
    assert efficiency_utility((1.0, 1.0, 1.0), (1.0, 1.0, 1.0)) == 0.0
    assert efficiency_utility((0.3, 0.6, 0.9), (1.0, 1.0, 1.0)) == pytest.approx(0.4, abs=1e-12)
    # zero budget counts as fully used
    assert efficiency_utility((0.0, 0.0, 0.0), (0.0, 1.0, 1.0)) == pytest.approx(2.0 / 3.0)


# =============================================================================
# GINI AND FAIRNESS
# =============================================================================

def brute_force_gini(x):
    n = len(x)
    total = sum(abs(a - b) for a, b in itertools.product(x, x))
    return total / (2.0 * n * n * np.mean(x))


def test_gini_examples():
    assert gini([3.0, 3.0, 3.0]) == 0.0
    assert gini([1.0, 0.0]) == pytest.approx(0.5, abs=1e-15)
    assert gini([5.0]) == 0.0
    assert gini([0.0, 0.0, 0.0]) == 0.0


def test_gini_matches_pairwise_sum():
    x = np.random.default_rng(5).uniform(0.0, 10.0, size=6)
    assert gini(x) == pytest.approx(brute_force_gini(x), abs=1e-12)


def test_gini_ignores_order_and_scale():
    rng = np.random.default_rng(9)
    for _ in range(10):
        x = rng.uniform(0.0, 5.0, size=7)
        base = gini(x)
        assert gini(rng.permutation(x)) == pytest.approx(base, abs=1e-12)
        for c in (0.01, 3.0, 250.0):
            assert gini(c * x) == pytest.approx(base, abs=1e-12)


def test_gini_errors():
    with pytest.raises(ValueError):
        gini([])
    with pytest.raises(ValueError):
        gini([1.0, -1.0])


def test_fairness_utility():
    assert fairness_utility([2.0, 2.0], [1.0, 1.0], [4.0, 4.0]) == 1.0
    assert fairness_utility([1.0, 0.0], [1.0, 1.0], [1.0, 1.0]) == pytest.approx(5.0 / 6.0, abs=1e-12)
    assert fairness_utility([3.0], [2.0], [1.0]) == 1.0


# =============================================================================
# COMPOSITES
# =============================================================================

def test_slice_and_total_utility():
    assert slice_utility(0.7, 0.1, 0.2, 1.0, 0.0, 0.0) == 0.7
    assert slice_utility(1.0, 1.0, 1.0, 0.6, 0.2, 0.2) == pytest.approx(1.0)
    assert slice_utility(0.8, 0.5, 0.9, 0.6, 0.2, 0.2) == pytest.approx(0.76, abs=1e-12)
    assert total_utility((1.0, 0.5, 0.0), (0.5, 0.3, 0.2)) == pytest.approx(0.65)


def test_breakdown_is_bounded_and_consistent():
    weights = UtilityWeights()
    targets = [URLLC_TARGETS] * 3
    achieved = [QosAchieved(latency_ms=1.15, reliability=1.0, throughput_mbps=60.0)] * 3
    utilization = np.array([[0.3, 0.6, 0.9]] * 3)
    vectors = [(np.ones(2), np.array([1.0, 0.0]), np.ones(2))] * 3
    breakdown = utility_breakdown(achieved, targets, utilization, vectors, weights)
    expected_slice = 0.6 * math.exp(-0.3) + 0.2 * 0.4 + 0.2 * (5.0 / 6.0)
    for s in breakdown.slices:
        assert s.u_slice == pytest.approx(expected_slice, abs=1e-12)
    assert breakdown.u_total == pytest.approx(expected_slice, abs=1e-12)


def test_state_utility_of_ideal_state():
    weights = UtilityWeights()
    state = np.zeros(STATE_DIM)
    for n in range(3):
        state[feature_index(n, "latency_ratio")] = 0.5
        state[feature_index(n, "throughput_ratio")] = 1.5
        state[feature_index(n, "reliability_margin")] = 0.5
        for f in ("power_headroom", "prb_headroom", "compute_headroom"):
            state[feature_index(n, f)] = 1.0
    assert state_utility(state, [URLLC_TARGETS] * 3, weights) == pytest.approx(1.0, abs=1e-12)
