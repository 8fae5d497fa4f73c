"""
Tests for the PRB-level link relations.
"""

import math

import numpy as np
import pytest
from scipy import integrate

from src.core.link_model import (
    sample_arrivals, snr, achieved_throughput, achieved_latency,
    q_function, achieved_reliability, clamp_latency
)


# =============================================================================
# ARRIVALS
# =============================================================================

def test_zero_rate_never_arrives():
    rng = np.random.default_rng(0)
    assert all(sample_arrivals(0.0, rng) == 0 for _ in range(1000))


def test_poisson_mean_within_three_sigma():
    rng = np.random.default_rng(42)
    draws = np.array([sample_arrivals(4.0, rng) for _ in range(100_000)])
    sigma = 2.0 / math.sqrt(100_000)
    assert abs(draws.mean() - 4.0) < 3 * sigma


def test_arrivals_deterministic_for_seed():
    rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
    seq_a = [sample_arrivals(4.0, rng_a) for _ in range(200)]
    seq_b = [sample_arrivals(4.0, rng_b) for _ in range(200)]
    assert seq_a == seq_b


def test_negative_rate_rejected():
    with pytest.raises(ValueError):
        sample_arrivals(-1.0, np.random.default_rng(0))


# =============================================================================
# THROUGHPUT
# =============================================================================

def test_unit_snr_gives_one_prb_unit():
    # p*g/(N0*b) = 1 with one PRB of 1 MHz -> log2(2) = 1 Mbps
    assert achieved_throughput(1.0, 0.5, 2.0, 1.0, prb_bandwidth_hz=1e6) == pytest.approx(1.0, abs=1e-15)


def test_zero_power_or_prb_gives_zero():
    assert achieved_throughput(10.0, 0.0, 1.0, 0.01) == 0.0
    assert achieved_throughput(0.0, 1.0, 1.0, 0.01) == 0.0
    assert snr(0.0, 1.0, 1.0, 0.01) == 0.0


def test_throughput_formula():
    expected = 10.0 * math.log2(1.0 + 10.0) * 0.36
    assert achieved_throughput(10.0, 1.0, 1.0, 0.01) == pytest.approx(expected, rel=1e-12)


def test_interference_lowers_throughput():
    clean = achieved_throughput(10.0, 1.0, 1.0, 0.01)
    noisy = achieved_throughput(10.0, 1.0, 1.0, 0.01, interference=0.2)
    assert noisy < clean


def test_throughput_monotone_in_power():
    values = [achieved_throughput(10.0, p, 1.0, 0.01) for p in (0.1, 0.5, 1.0, 5.0, 20.0)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_throughput_monotone_in_prbs():
    for gain in (0.4, 0.93, 1.75):
        rates = [achieved_throughput(b, 5.0, gain, 0.01) for b in range(1, 120)]
        assert all(b > a for a, b in zip(rates, rates[1:]))


# =============================================================================
# LATENCY
# =============================================================================

def test_latency_two_term_example():
    # 1e4 bits over 1e7 bit/s plus 1/(1e4 /s)
    assert achieved_latency(1e4, 1e7, 1.0, 1e4) == pytest.approx(1.1, abs=1e-12)


def test_latency_infinite_without_resources():
    assert math.isinf(achieved_latency(1e4, 1e7, 0.0, 1e4))
    assert math.isinf(achieved_latency(1e4, 0.0, 1.0, 1e4))


def test_latency_scales_with_packet_and_rate():
    base = achieved_latency(1e4, 1e7, 1.0, 1e4)
    doubled = achieved_latency(2e4, 2e7, 1.0, 1e4)
    assert doubled == pytest.approx(base, abs=1e-12)


def test_clamp_latency():
    assert clamp_latency(math.inf, 10.0) == 10.0
    assert clamp_latency(12.0, 10.0) == 10.0
    assert clamp_latency(0.98, 10.0) == 0.98


# =============================================================================
# RELIABILITY
# =============================================================================

def test_q_function_reference_points():
    assert q_function(0.0) == pytest.approx(0.5, abs=1e-15)
    tail, _ = integrate.quad(lambda t: math.exp(-t * t / 2.0) / math.sqrt(2.0 * math.pi), 1.0, math.inf)
    assert q_function(1.0) == pytest.approx(tail, abs=1e-6)
    assert q_function(1.0) == pytest.approx(0.158655, abs=1e-6)
    assert q_function(-1.3) == pytest.approx(1.0 - q_function(1.3), abs=1e-15)


def test_reliability_at_zero_snr():
    for bits in (1, 8, 40):
        assert achieved_reliability(0.0, bits) == pytest.approx(2.0 ** -bits, rel=1e-12)


def test_reliability_log_space_oracle():
    expected = math.exp(100 * math.log1p(-q_function(math.sqrt(8.0))))
    assert achieved_reliability(4.0, 100) == pytest.approx(expected, abs=1e-10)


def test_reliability_tends_to_one():
    assert achieved_reliability(1e4, 12000) == pytest.approx(1.0, abs=1e-12)


def test_reliability_rejects_bad_inputs():
    with pytest.raises(ValueError):
        achieved_reliability(-1.0, 10)
    with pytest.raises(ValueError):
        achieved_reliability(1.0, 0)


def test_q_function_is_symmetric_about_half():
    for x in np.linspace(-6.0, 6.0, 49):
        assert q_function(x) + q_function(-x) == pytest.approx(1.0, abs=1e-14)


def test_reliability_falls_with_packet_length():
    for snr_linear in (0.5, 2.0, 8.0):
        values = [achieved_reliability(snr_linear, bits) for bits in (1, 8, 64, 512, 4096, 32768)]
        assert all(b <= a for a, b in zip(values, values[1:]))


def test_reliability_rises_with_snr():
    snrs = np.linspace(0.0, 6.0, 61)
    values = [achieved_reliability(s, 256) for s in snrs]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert values[-1] > values[0]
