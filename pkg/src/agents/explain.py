"""
Explainability metrics and explanation rendering for SliceSim
Sparsity, consistency and faithfulness of attention, plus templated explanations.
"""

import hashlib
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np
import networkx as nx

from src.core.schema import (
    ExplainConfig, ExplanationRecord, InfoRecord, SLICE_ORDER, SliceType
)
from src.core.env import FEATURE_NAMES

if TYPE_CHECKING:
    from src.agents.policy import AttentionBundle


logger = logging.getLogger("SliceSim.Explain")

# Human-readable names for state features
FEATURE_LABELS = {
    "queue_occupancy": "buffer",
    "offered_load": "load",
    "mean_snr": "channel quality",
    "power_headroom": "power headroom",
    "prb_headroom": "PRB headroom",
    "compute_headroom": "compute headroom",
    "predicted_demand": "predicted demand",
    "latency_ratio": "latency",
    "throughput_ratio": "throughput",
    "reliability_margin": "reliability",
    "spike_flag": "spike indicator",
    "time_of_day_sin": "time of day",
    "power_utilization": "global power utilization",
    "prb_utilization": "global PRB utilization",
    "compute_utilization": "global compute utilization",
    "time_of_day_cos": "time of day",
}

LOW_CONFIDENCE = 0.2
HIGH_CONFIDENCE = 0.5


class ScoredMetric(NamedTuple):
    """A metric value plus a flag raised when it was defined by convention."""
    value: float
    degenerate: bool = False


def feature_label(index: int) -> str:
    owner, name = FEATURE_NAMES[index].split(".", 1)
    label = FEATURE_LABELS.get(name, name)
    return label if owner == "ctx" else f"{owner} {label}"


def attention_digest(joint: np.ndarray) -> str:
    """sha256 over the row-major float64 bytes of the joint attention."""
    return hashlib.sha256(np.ascontiguousarray(joint, dtype=np.float64).tobytes()).hexdigest()


# =============================================================================
# SPARSITY
# =============================================================================

def entropy(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    nz = a[a > 0]
    return float(-np.sum(nz * np.log(nz)))


def sparsity(a: Sequence[float]) -> float:
    """1 - H(a)/log d: one for one-hot, zero for uniform."""
    a = np.asarray(a, dtype=np.float64)
    if a.size < 2:
        raise ValueError("sparsity needs an attention vector of length at least 2")
    return 1.0 - entropy(a) / np.log(a.size)


def sparsity_grad(a: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """d sparsity / d a, with entries clipped away from log(0)."""
    a = np.asarray(a, dtype=np.float64)
    return (np.log(np.maximum(a, floor)) + 1.0) / np.log(a.size)


# =============================================================================
# CONSISTENCY
# =============================================================================

def standardize(states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    mean = states.mean(axis=0)
    std = states.std(axis=0)
    std[std == 0] = 1.0
    return (states - mean) / std


def epsilon_similar_pairs(states: Sequence[np.ndarray], epsilon: float) -> List[Tuple[int, int]]:
    """Unordered index pairs whose standardized distance over sqrt(d) is at most epsilon."""
    states = np.asarray(states, dtype=np.float64)
    if len(states) < 2:
        return []
    z = standardize(states)
    d = z.shape[1]
    diff = z[:, None, :] - z[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1)) / np.sqrt(d)
    rows, cols = np.nonzero(np.triu(dist <= epsilon, k=1))
    return list(zip(rows.tolist(), cols.tolist()))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def cosine_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """d cos(a, b) / d a."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return np.zeros_like(a)
    c = np.dot(a, b) / (na * nb)
    return b / (na * nb) - c * a / (na * na)


def consistency(attentions: Sequence[np.ndarray], pairs: Sequence[Tuple[int, int]]) -> ScoredMetric:
    """Mean cosine similarity of attentions over similar-state pairs; vacuously 1 without pairs."""
    if not pairs:
        return ScoredMetric(1.0, degenerate=True)
    values = [cosine(attentions[i], attentions[j]) for i, j in pairs]
    return ScoredMetric(float(np.mean(values)))


# =============================================================================
# FAITHFULNESS
# =============================================================================

def finite_difference_gradient(
    utility_fn: Callable[[np.ndarray], float],
    state: np.ndarray,
    scale: float = 1e-4,
) -> np.ndarray:
    """Central differences with per-feature step scale*(1+|s_i|)."""
    state = np.asarray(state, dtype=np.float64)
    grad = np.zeros_like(state)
    for i in range(state.size):
        h = scale * (1.0 + abs(state[i]))
        up = state.copy()
        down = state.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (utility_fn(up) - utility_fn(down)) / (2.0 * h)
    return grad


def pearson(x: np.ndarray, y: np.ndarray) -> ScoredMetric:
    """Pearson correlation; zero with the degenerate flag on zero variance or < 3 distinct y values."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.unique(y).size < 3:
        return ScoredMetric(0.0, degenerate=True)
    xc = x - x.mean()
    yc = y - y.mean()
    nx_, ny_ = np.linalg.norm(xc), np.linalg.norm(yc)
    if nx_ == 0 or ny_ == 0:
        return ScoredMetric(0.0, degenerate=True)
    return ScoredMetric(float(np.clip(np.dot(xc, yc) / (nx_ * ny_), -1.0, 1.0)))


def pearson_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d corr(x, y) / d x; zero where the correlation is degenerate."""
    xc = x - x.mean()
    yc = y - y.mean()
    nx_, ny_ = np.linalg.norm(xc), np.linalg.norm(yc)
    if nx_ == 0 or ny_ == 0:
        return np.zeros_like(x)
    r = np.dot(xc, yc) / (nx_ * ny_)
    return yc / (nx_ * ny_) - r * xc / (nx_ * nx_)


def faithfulness(
    a: Sequence[float],
    state: np.ndarray,
    utility_fn: Callable[[np.ndarray], float],
    scale: float = 1e-4,
    gradient: Optional[np.ndarray] = None,
) -> ScoredMetric:
    """Correlation of attention with |dU/ds| from central finite differences."""
    if gradient is None:
        gradient = finite_difference_gradient(utility_fn, state, scale)
    return pearson(np.asarray(a, dtype=np.float64), np.abs(gradient))


def faith_score(corr: float) -> float:
    """Maps a correlation in [-1, 1] onto the [0, 1] scale E is built from."""
    return (1.0 + corr) / 2.0


def explainability_utility(e_sparse: float, e_cons: float, e_faith: float, eta: Sequence[float]) -> float:
    return float(eta[0] * e_sparse + eta[1] * e_cons + eta[2] * e_faith)


# =============================================================================
# PER-TICK TRACKER
# =============================================================================

@dataclass
class ExplainScore:
    value: float
    sparsity: float
    consistency: float
    faithfulness: float
    flags: List[str] = field(default_factory=list)


class ExplainabilityTracker:
    """
    Computes E once per decision tick.

    Consistency compares the current state with the epsilon-similar states
    kept in a sliding replay window.
    """

    def __init__(self, config: ExplainConfig):
        self.config = config
        self.states: deque = deque(maxlen=config.replay_window)
        self.attentions: deque = deque(maxlen=config.replay_window)

    def reset(self) -> None:
        self.states.clear()
        self.attentions.clear()

    def score(
        self,
        state: np.ndarray,
        attentions: np.ndarray,
        utility_fn: Callable[[np.ndarray], float],
    ) -> ExplainScore:
        """
        Args:
            state: raw GlobalState of the tick
            attentions: (agents, d) fused attention, one row per agent
            utility_fn: side-effect-free U_total over raw states
        """
        flags: List[str] = []
        e_sparse = float(np.mean([sparsity(row) for row in attentions]))

        cons_values = []
        if self.states:
            window = np.vstack([np.asarray(self.states), state[None, :]])
            z = standardize(window)
            dist = np.linalg.norm(z[:-1] - z[-1], axis=1) / np.sqrt(z.shape[1])
            similar = np.nonzero(dist <= self.config.epsilon)[0]
            for j in similar:
                past = self.attentions[j]
                cons_values.extend(cosine(attentions[k], past[k]) for k in range(len(attentions)))
        if cons_values:
            e_cons = float(np.mean(cons_values))
        else:
            e_cons = 1.0
            flags.append("consistency_vacuous")

        gradient = finite_difference_gradient(utility_fn, state, self.config.fd_scale)
        faith = [pearson(row, np.abs(gradient)) for row in attentions]
        if any(f.degenerate for f in faith):
            flags.append("faithfulness_degenerate")
        e_faith = float(np.mean([faith_score(f.value) for f in faith]))

        self.states.append(np.array(state, dtype=np.float64))
        self.attentions.append(np.array(attentions, dtype=np.float64))
        value = explainability_utility(e_sparse, e_cons, e_faith, self.config.weights.eta)
        return ExplainScore(value=value, sparsity=e_sparse, consistency=e_cons, faithfulness=e_faith, flags=flags)


# =============================================================================
# RENDERING
# =============================================================================

def confidence_level(confidence: float) -> str:
    if confidence < LOW_CONFIDENCE:
        return "low"
    if confidence >= HIGH_CONFIDENCE:
        return "high"
    return "medium"


def dominant_edge(cross_slice: np.ndarray) -> Optional[Tuple[str, str, float]]:
    """Strongest off-diagonal cross-slice influence above the uniform level."""
    graph = nx.DiGraph()
    n = cross_slice.shape[0]
    for i in range(n):
        for j in range(n):
            if i != j:
                graph.add_edge(SLICE_ORDER[j].value, SLICE_ORDER[i].value, weight=float(cross_slice[i, j]))
    if graph.number_of_edges() == 0:
        return None
    src, dst, weight = max(graph.edges(data="weight"), key=lambda e: e[2])
    if weight <= 1.0 / n + 1e-9:
        return None
    return (src, dst, weight)


def render_explanation(
    bundle: "AttentionBundle",
    info: InfoRecord,
    lead_slice: SliceType,
    joint_attention: np.ndarray,
    config: ExplainConfig,
    candidate_labels: Sequence[str],
    selected_action: Optional[str] = None,
    phase_notes: Optional[List[str]] = None,
) -> ExplanationRecord:
    """Structured record plus a one-line summary for the lead agent's decision."""
    fused = np.asarray(bundle.fused)
    d = fused.size
    order = np.argsort(-fused, kind="stable")[: config.top_k]
    top = [(feature_label(int(i)), float(fused[i])) for i in order]
    primary = top[0][0] if top[0][1] >= config.dominance_ratio / d else None

    temporal = np.asarray(bundle.temporal)
    w = temporal.size
    peak = int(np.argmax(temporal))
    temporal_flag = bool(w > 1 and temporal[peak] > 2.0 / w)

    cf = np.asarray(bundle.counterfactual)
    ranking = sorted(
        ((label, float(score)) for label, score in zip(candidate_labels, cf)),
        key=lambda item: -item[1],
    )
    edge = dominant_edge(np.asarray(bundle.cross_slice))
    conf = float(bundle.confidence)
    level = confidence_level(conf)

    parts = []
    if primary is None:
        parts.append("no dominant cause")
    else:
        parts.append(f"primary cause: {primary} ({top[0][1]:.2f})")
    if edge is not None:
        parts.append(f"{edge[0]} pressure on {edge[1]} ({edge[2]:.2f})")
    if temporal_flag:
        parts.append(f"pattern from {w - 1 - peak} ticks ago")
    if selected_action is not None:
        parts.append(f"action: {selected_action}")
    rejected = [f"{label} ({score:.2f})" for label, score in ranking if label != selected_action]
    if rejected:
        parts.append("rejected: " + ", ".join(rejected))
    if any(info.spike_active.values()):
        parts.append("spike active")
    parts.append(f"confidence {level} ({conf:.2f})")

    joint = np.asarray(joint_attention, dtype=np.float64)
    return ExplanationRecord(
        tick=info.tick,
        lead_slice=lead_slice,
        top_features=top,
        primary_cause=primary,
        dominant_edge=edge,
        temporal_pattern=temporal_flag,
        temporal_peak_offset=(w - 1 - peak) if temporal_flag else None,
        counterfactual_ranking=ranking,
        selected_action=selected_action,
        confidence=min(1.0, max(0.0, conf)),
        confidence_level=level,
        summary="; ".join(parts),
        phase_notes=list(phase_notes or []),
        attention=joint.tolist(),
        attention_sha256=attention_digest(joint),
    )
