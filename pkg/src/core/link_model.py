"""
PRB-level link abstraction
Maps PRBs, power, compute and channel gain to throughput, latency and reliability.
"""

import math

import numpy as np
from scipy.special import erfc, log_ndtr


# =============================================================================
# ARRIVALS
# =============================================================================

def sample_arrivals(rate: float, rng: np.random.Generator) -> int:
    """Poisson packet count for one tick; rate is the mean per tick."""
    if rate < 0:
        raise ValueError(f"arrival rate must be nonnegative, got {rate}")
    if rate == 0:
        return 0
    return int(rng.poisson(rate))


# =============================================================================
# QOS RELATIONS
# =============================================================================

def snr(prb: float, power: float, gain: float, n0: float, interference: float = 0.0) -> float:
    """Linear SNR p*g / (N0*b + I); zero when no PRBs are assigned."""
    if prb <= 0:
        return 0.0
    return power * gain / (n0 * prb + interference)


def achieved_throughput(
    prb: float,
    power: float,
    gain: float,
    n0: float,
    prb_bandwidth_hz: float = 360e3,
    interference: float = 0.0,
) -> float:
    """
    Shannon throughput in Mbps: b * log2(1 + p*g/(N0*b)) scaled by the PRB bandwidth.

    Zero PRBs or zero power give 0.0, which the latency relation turns into +inf.
    """
    if prb <= 0 or power <= 0:
        return 0.0
    ratio = snr(prb, power, gain, n0, interference)
    return prb * math.log2(1.0 + ratio) * prb_bandwidth_hz / 1e6


def achieved_latency(packet_bits: float, throughput_bps: float, compute: float, service_rate: float) -> float:
    """Transmission plus processing delay in ms: L/T + 1/(mu*c)."""
    if throughput_bps <= 0 or compute <= 0:
        return math.inf
    return (packet_bits / throughput_bps + 1.0 / (service_rate * compute)) * 1000.0


def q_function(x: float) -> float:
    """Gaussian tail probability Q(x) = 0.5*erfc(x/sqrt(2))."""
    return float(0.5 * erfc(x / math.sqrt(2.0)))


def achieved_reliability(snr_linear: float, packet_bits: int) -> float:
    """
    Packet success probability (1 - Q(sqrt(2*SNR)))^L.

    Evaluated as exp(L * log(1 - Q)) where log(1 - Q(x)) = log Phi(x) comes from
    log_ndtr, so neither the tail nor the power underflows for large L.
    """
    if snr_linear < 0:
        raise ValueError("SNR must be nonnegative")
    if packet_bits < 1:
        raise ValueError("packet size must be at least one bit")
    log_success = float(log_ndtr(math.sqrt(2.0 * snr_linear)))
    return math.exp(packet_bits * log_success)


def clamp_latency(latency_ms: float, ceiling_ms: float) -> float:
    """Replace +inf (or anything larger) by the configured ceiling."""
    return ceiling_ms if not math.isfinite(latency_ms) or latency_ms > ceiling_ms else latency_ms
