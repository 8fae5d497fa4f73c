"""
Attention-augmented multi-agent policy for SliceSim
One actor per slice with six attention heads, a centralized critic, and safety masks.
"""

import json
import math
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.schema import PolicyConfig, SLICE_ORDER, RESOURCE_ORDER
from src.core.env import STATE_DIM, FEATURES_PER_SLICE, project_shares
from src.core.errors import PolicyNaNError
from src.agents.nn import Params, softmax, softmax_backward, log_softmax, safe_log, init_matrix, RunningNormalizer
from src.agents.explain import attention_digest


logger = logging.getLogger("SliceSim.Policy")

N_AGENTS = len(SLICE_ORDER)
N_FACTORS = len(RESOURCE_ORDER)
HEAD_NAMES = ("semantic", "temporal", "cross_slice", "confidence", "counterfactual", "prior")
CANDIDATE_DIM = N_FACTORS + 1
LOW_CONFIDENCE_CAP = 0.05
MASK_TOLERANCE = 1e-12


# =============================================================================
# ACTION HELPERS
# =============================================================================

def noop_index(deltas: Sequence[float]) -> int:
    return list(deltas).index(0.0)


def describe_action(agent: int, deltas: Sequence[float]) -> str:
    """Readable label for one slice's (power, prb, compute) deltas."""
    changes = [
        f"{r.value} {d * 100:+.0f}%" for r, d in zip(RESOURCE_ORDER, deltas) if d != 0.0
    ]
    if not changes:
        return "no-op"
    return f"{SLICE_ORDER[agent].value} " + ", ".join(changes)


def candidate_features(deltas: Sequence[float]) -> np.ndarray:
    """Counterfactual action descriptor: deltas scaled by 10 plus a no-op indicator."""
    phi = np.zeros(CANDIDATE_DIM)
    phi[:N_FACTORS] = np.asarray(deltas, dtype=np.float64) * 10.0
    phi[N_FACTORS] = 1.0 if all(d == 0.0 for d in deltas) else 0.0
    return phi


def mask_actions(shares: np.ndarray, deltas: Sequence[float], floor: float) -> np.ndarray:
    """
    (agents, factors, deltas) boolean mask.

    A delta is allowed when the slice share stays within [floor, 1] and the
    resource total stays within budget. The no-op is always allowed.
    """
    shares = np.asarray(shares, dtype=np.float64)
    d = np.asarray(deltas, dtype=np.float64)
    totals = shares.sum(axis=0)
    new = shares[:, :, None] + d[None, None, :]
    ok = (new >= floor - MASK_TOLERANCE) & (new <= 1.0 + MASK_TOLERANCE)
    ok &= (totals[None, :, None] + d[None, None, :]) <= 1.0 + MASK_TOLERANCE
    ok[:, :, noop_index(deltas)] = True
    return ok


def confidence_mask(deltas: Sequence[float], confidence: float, gate: float) -> np.ndarray:
    """Per-delta mask tightening the step size when confidence is low."""
    d = np.abs(np.asarray(deltas, dtype=np.float64))
    if confidence >= gate:
        return np.ones(d.size, dtype=bool)
    return d <= LOW_CONFIDENCE_CAP + MASK_TOLERANCE


# =============================================================================
# ATTENTION HEADS
# =============================================================================

def semantic_attention(scores: np.ndarray) -> np.ndarray:
    return softmax(scores)


def temporal_attention(query: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Scaled dot product of the current query against (W, k) history keys."""
    return softmax(keys @ query / math.sqrt(query.size))


def cross_slice_attention(queries: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Row-stochastic (slices, slices) compatibility of slice queries with slice keys."""
    return softmax(queries @ keys.T / math.sqrt(queries.shape[1]))


def confidence_attention(semantic: np.ndarray) -> float:
    """Focus of the semantic head: 1 - H / ln d."""
    return float(1.0 + np.sum(semantic * safe_log(semantic)) / np.log(semantic.size))


def counterfactual_attention(candidates: np.ndarray, scorer: np.ndarray) -> np.ndarray:
    """Softmax over candidate-action scores phi(a) . u."""
    return softmax(candidates @ scorer)


def meta_fuse(meta: np.ndarray, views: np.ndarray) -> np.ndarray:
    """Meta-weighted mix of feature-space head images, renormalized."""
    fused = meta @ views
    return fused / fused.sum()


# =============================================================================
# OUTPUT TYPES
# =============================================================================

@dataclass
class AttentionBundle:
    """Every attention head of one agent from one forward pass."""
    agent: int
    semantic: np.ndarray
    temporal: np.ndarray
    cross_slice: np.ndarray
    confidence: float
    counterfactual: np.ndarray
    meta: np.ndarray
    fused: np.ndarray
    candidate_labels: List[str] = field(default_factory=list)


@dataclass
class ActorCache:
    """Forward intermediates needed by the analytic backward pass."""
    x: np.ndarray
    history: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    logits: np.ndarray
    mask: np.ndarray
    logp: np.ndarray
    probs: np.ndarray
    sem: np.ndarray
    keys: np.ndarray
    query: np.ndarray
    temp: np.ndarray
    proj_temp: np.ndarray
    slice_inputs: np.ndarray
    emb: np.ndarray
    cq: np.ndarray
    ck: np.ndarray
    cross: np.ndarray
    proj_cross: np.ndarray
    conf: float
    conf_prior: np.ndarray
    cf_u: np.ndarray
    phi: np.ndarray
    cf: np.ndarray
    proj_cf: np.ndarray
    prior: np.ndarray
    meta: np.ndarray
    views: np.ndarray
    fused: np.ndarray


@dataclass
class AgentDecision:
    agent: int
    action: np.ndarray
    deltas: np.ndarray
    logp: float
    probs: np.ndarray
    mask: np.ndarray
    phi: np.ndarray
    bundle: AttentionBundle
    label: str


@dataclass
class JointDecision:
    """Output of one policy forward pass for all agents."""
    agents: List[AgentDecision]
    value: float
    x: np.ndarray
    history: np.ndarray
    joint_attention: np.ndarray
    attention_sha256: str

    @property
    def actions(self) -> np.ndarray:
        return np.stack([a.action for a in self.agents])

    @property
    def deltas(self) -> np.ndarray:
        return np.stack([a.deltas for a in self.agents])

    @property
    def logp(self) -> float:
        return float(sum(a.logp for a in self.agents))

    def is_noop(self) -> bool:
        return bool(np.all(self.deltas == 0.0))


# =============================================================================
# ACTOR
# =============================================================================

class ActorNetwork:
    """
    Per-slice actor: tanh trunk, factored action logits and six attention heads.

    The fused attention is a meta-weighted mix of every head mapped to feature
    space through row-stochastic projections.
    """

    def __init__(self, agent: int, config: PolicyConfig, rng: np.random.Generator, state_dim: int = STATE_DIM):
        self.agent = agent
        self.config = config
        self.state_dim = state_dim
        h, k, d = config.hidden_size, config.key_dim, state_dim
        w, n_cand, n_deltas = config.history_window, config.n_candidates, len(config.deltas)
        s = config.init_scale
        self.params: Params = {
            "W1": init_matrix(rng, h, d, 1.0), "b1": np.zeros(h),
            "W2": init_matrix(rng, h, h, 1.0), "b2": np.zeros(h),
            "Wpi": init_matrix(rng, N_FACTORS * n_deltas, h, s), "bpi": np.zeros(N_FACTORS * n_deltas),
            "Ws": init_matrix(rng, d, h, s), "bs": np.zeros(d),
            "Wq": init_matrix(rng, k, h, s), "Wk": init_matrix(rng, k, d, s),
            "We": init_matrix(rng, k, FEATURES_PER_SLICE, s), "be": np.zeros(k),
            "Wcq": init_matrix(rng, k, k, s), "Wck": init_matrix(rng, k, k, s),
            "Wcf": init_matrix(rng, CANDIDATE_DIM, h, s), "bcf": np.zeros(CANDIDATE_DIM),
            "Wm": init_matrix(rng, len(HEAD_NAMES), h, s), "bm": np.zeros(len(HEAD_NAMES)),
            "Tt": init_matrix(rng, w, d, s), "Tc": init_matrix(rng, N_AGENTS, d, s),
            "Tconf": np.zeros(d), "Tcf": init_matrix(rng, n_cand, d, s), "Tprior": np.zeros(d),
        }

    # -------------------------------------------------------------------------
    # forward
    # -------------------------------------------------------------------------

    def forward(
        self,
        x: np.ndarray,
        history: np.ndarray,
        mask: np.ndarray,
        phi: Optional[np.ndarray] = None,
        gate: bool = True,
    ) -> ActorCache:
        """
        Args:
            x: normalized GlobalState
            history: (W, d) normalized states, oldest first, zero padded
            mask: (factors, deltas) budget mask; the confidence gate is added when gate is set
            phi: (K, 4) candidate descriptors; chosen from the action probabilities when None
        """
        p = self.params
        cfg = self.config

        h1 = np.tanh(p["W1"] @ x + p["b1"])
        h2 = np.tanh(p["W2"] @ h1 + p["b2"])

        sem = semantic_attention(p["Ws"] @ h2 + p["bs"])
        conf = confidence_attention(sem)

        if gate:
            mask = mask & confidence_mask(cfg.deltas, conf, cfg.confidence_gate)[None, :]
        logits = (p["Wpi"] @ h2 + p["bpi"]).reshape(N_FACTORS, len(cfg.deltas))
        masked = np.where(mask, logits, -np.inf)
        logp = log_softmax(masked)
        probs = np.where(mask, np.exp(logp), 0.0)

        keys = history @ p["Wk"].T
        query = p["Wq"] @ h2
        temp = temporal_attention(query, keys)
        proj_temp = softmax(p["Tt"])

        slice_inputs = x[: N_AGENTS * FEATURES_PER_SLICE].reshape(N_AGENTS, FEATURES_PER_SLICE)
        emb = np.tanh(slice_inputs @ p["We"].T + p["be"])
        cq = emb @ p["Wcq"]
        ck = emb @ p["Wck"]
        cross = cross_slice_attention(cq, ck)
        proj_cross = softmax(p["Tc"])

        conf_prior = softmax(p["Tconf"])

        if phi is None:
            phi = self._select_candidates(probs)
        cf_u = p["Wcf"] @ h2 + p["bcf"]
        cf = counterfactual_attention(phi, cf_u)
        proj_cf = softmax(p["Tcf"])

        prior = softmax(p["Tprior"])
        meta = softmax(p["Wm"] @ h2 + p["bm"])

        views = np.stack([
            sem,
            temp @ proj_temp,
            cross[self.agent] @ proj_cross,
            conf * sem + (1.0 - conf) * conf_prior,
            cf @ proj_cf,
            prior,
        ])
        fused = meta_fuse(meta, views)

        return ActorCache(
            x=x, history=history, h1=h1, h2=h2, logits=logits, mask=mask, logp=logp, probs=probs,
            sem=sem, keys=keys, query=query, temp=temp, proj_temp=proj_temp,
            slice_inputs=slice_inputs, emb=emb, cq=cq, ck=ck, cross=cross, proj_cross=proj_cross,
            conf=conf, conf_prior=conf_prior, cf_u=cf_u, phi=phi, cf=cf, proj_cf=proj_cf,
            prior=prior, meta=meta, views=views, fused=fused,
        )

    def _select_candidates(self, probs: np.ndarray) -> np.ndarray:
        """No-op plus the most probable other per-slice actions the mask allows, padded with no-ops."""
        deltas = np.asarray(self.config.deltas)
        joint = probs[0][:, None, None] * probs[1][None, :, None] * probs[2][None, None, :]
        flat = joint.ravel().copy()
        z = noop_index(deltas)
        flat[np.ravel_multi_index((z, z, z), joint.shape)] = 0.0
        # masked entries carry exactly zero probability
        order = [idx for idx in np.argsort(-flat, kind="stable") if flat[idx] > 0.0]
        noop = candidate_features(np.zeros(N_FACTORS))
        rows = [noop]
        for idx in order[: self.config.n_candidates - 1]:
            i, j, l = np.unravel_index(idx, joint.shape)
            rows.append(candidate_features(deltas[[i, j, l]]))
        rows.extend([noop] * (self.config.n_candidates - len(rows)))
        return np.stack(rows)

    # -------------------------------------------------------------------------
    # backward
    # -------------------------------------------------------------------------

    def backward(
        self,
        cache: ActorCache,
        grad_logits: Optional[np.ndarray] = None,
        grad_fused: Optional[np.ndarray] = None,
        grad_cf_u: Optional[np.ndarray] = None,
    ) -> Params:
        """Parameter gradients for upstream gradients on logits, fused attention and the action-scoring vector."""
        p = self.params
        c = cache
        k = p["Wq"].shape[0]
        d = self.state_dim
        g: Params = {name: np.zeros_like(v) for name, v in p.items()}
        g_h2 = np.zeros_like(c.h2)

        if grad_logits is not None:
            gl = np.where(c.mask, grad_logits, 0.0).ravel()
            g["Wpi"] += np.outer(gl, c.h2)
            g["bpi"] += gl
            g_h2 += p["Wpi"].T @ gl

        g_u = np.zeros_like(c.cf_u) if grad_cf_u is None else np.array(grad_cf_u, dtype=np.float64)
        g_sem = np.zeros_like(c.sem)

        if grad_fused is not None:
            s = float(c.meta @ c.views.sum(axis=1))
            gf = (grad_fused - np.dot(grad_fused, c.fused)) / s
            g_meta = c.views @ gf
            g_views = np.outer(c.meta, gf)

            g_zm = softmax_backward(c.meta, g_meta)
            g["Wm"] += np.outer(g_zm, c.h2)
            g["bm"] += g_zm
            g_h2 += p["Wm"].T @ g_zm

            # semantic
            g_sem += g_views[0]

            # temporal
            g_temp = c.proj_temp @ g_views[1]
            g["Tt"] += softmax_backward(c.proj_temp, np.outer(c.temp, g_views[1]))
            g_sc = softmax_backward(c.temp, g_temp) / math.sqrt(k)
            g_q = c.keys.T @ g_sc
            g_keys = np.outer(g_sc, c.query)
            g["Wk"] += g_keys.T @ c.history
            g["Wq"] += np.outer(g_q, c.h2)
            g_h2 += p["Wq"].T @ g_q

            # cross-slice, only this agent's row reaches the fused vector
            n = self.agent
            row = c.cross[n]
            g_row = c.proj_cross @ g_views[2]
            g["Tc"] += softmax_backward(c.proj_cross, np.outer(row, g_views[2]))
            g_scores = softmax_backward(row, g_row) / math.sqrt(k)
            g_cq_n = g_scores @ c.ck
            g_ck = np.outer(g_scores, c.cq[n])
            g_emb = np.zeros_like(c.emb)
            g["Wcq"] += np.outer(c.emb[n], g_cq_n)
            g_emb[n] += p["Wcq"] @ g_cq_n
            g["Wck"] += c.emb.T @ g_ck
            g_emb += g_ck @ p["Wck"].T
            g_pre = g_emb * (1.0 - c.emb ** 2)
            g["We"] += g_pre.T @ c.slice_inputs
            g["be"] += g_pre.sum(axis=0)

            # confidence mix
            g_conf = float(np.dot(g_views[3], c.sem - c.conf_prior))
            g_sem += c.conf * g_views[3]
            g["Tconf"] += softmax_backward(c.conf_prior, (1.0 - c.conf) * g_views[3])
            g_sem += g_conf * (safe_log(c.sem) + 1.0) / np.log(d)

            # counterfactual projection
            g_cf = c.proj_cf @ g_views[4]
            g["Tcf"] += softmax_backward(c.proj_cf, np.outer(c.cf, g_views[4]))
            g_u += c.phi.T @ softmax_backward(c.cf, g_cf)

            # prior
            g["Tprior"] += softmax_backward(c.prior, g_views[5])

        if np.any(g_u):
            g["Wcf"] += np.outer(g_u, c.h2)
            g["bcf"] += g_u
            g_h2 += p["Wcf"].T @ g_u

        if np.any(g_sem):
            g_zs = softmax_backward(c.sem, g_sem)
            g["Ws"] += np.outer(g_zs, c.h2)
            g["bs"] += g_zs
            g_h2 += p["Ws"].T @ g_zs

        g_a2 = g_h2 * (1.0 - c.h2 ** 2)
        g["W2"] += np.outer(g_a2, c.h1)
        g["b2"] += g_a2
        g_a1 = (p["W2"].T @ g_a2) * (1.0 - c.h1 ** 2)
        g["W1"] += np.outer(g_a1, c.x)
        g["b1"] += g_a1
        return g

    def bundle(self, cache: ActorCache, labels: Optional[List[str]] = None) -> AttentionBundle:
        return AttentionBundle(
            agent=self.agent, semantic=cache.sem, temporal=cache.temp, cross_slice=cache.cross,
            confidence=cache.conf, counterfactual=cache.cf, meta=cache.meta, fused=cache.fused,
            candidate_labels=list(labels or []),
        )


# =============================================================================
# CRITIC
# =============================================================================

@dataclass
class CriticCache:
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray


class CentralCritic:
    """Value MLP over the full GlobalState."""

    def __init__(self, config: PolicyConfig, rng: np.random.Generator, state_dim: int = STATE_DIM):
        h = config.hidden_size
        self.params: Params = {
            "V1": init_matrix(rng, h, state_dim, 1.0), "c1": np.zeros(h),
            "V2": init_matrix(rng, h, h, 1.0), "c2": np.zeros(h),
            "V3": init_matrix(rng, 1, h, 1.0), "c3": np.zeros(1),
        }

    def forward(self, x: np.ndarray) -> Tuple[float, CriticCache]:
        p = self.params
        h1 = np.tanh(p["V1"] @ x + p["c1"])
        h2 = np.tanh(p["V2"] @ h1 + p["c2"])
        value = float((p["V3"] @ h2 + p["c3"])[0])
        return value, CriticCache(x=x, h1=h1, h2=h2)

    def backward(self, cache: CriticCache, grad_value: float) -> Params:
        p = self.params
        g: Params = {}
        g["V3"] = grad_value * cache.h2[None, :]
        g["c3"] = np.array([grad_value])
        g_a2 = grad_value * p["V3"][0] * (1.0 - cache.h2 ** 2)
        g["V2"] = np.outer(g_a2, cache.h1)
        g["c2"] = g_a2
        g_a1 = (p["V2"].T @ g_a2) * (1.0 - cache.h1 ** 2)
        g["V1"] = np.outer(g_a1, cache.x)
        g["c1"] = g_a1
        return g

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        """dV/dx at x."""
        _, cache = self.forward(x)
        p = self.params
        g_a2 = p["V3"][0] * (1.0 - cache.h2 ** 2)
        g_a1 = (p["V2"].T @ g_a2) * (1.0 - cache.h1 ** 2)
        return p["V1"].T @ g_a1


# =============================================================================
# MULTI-AGENT POLICY
# =============================================================================

class MultiAgentPolicy:
    """
    Three slice actors plus the shared critic and the observation normalizer.

    act() is the only decision entry point and performs exactly one forward
    pass per call; forward_count records the number of calls.
    """

    def __init__(self, config: PolicyConfig, seed: int = 0, nan_snapshot_path: Optional[str] = None):
        self.config = config
        rng = np.random.default_rng(seed)
        self.actors = [ActorNetwork(n, config, rng) for n in range(N_AGENTS)]
        self.critic = CentralCritic(config, rng)
        self.normalizer = RunningNormalizer(STATE_DIM)
        self.forward_count = 0
        self.nan_snapshot_path = nan_snapshot_path

    # -------------------------------------------------------------------------
    # parameters
    # -------------------------------------------------------------------------

    def parameter_groups(self) -> List[Params]:
        return [a.params for a in self.actors] + [self.critic.params]

    def named_parameters(self) -> Dict[str, np.ndarray]:
        named = {}
        for n, actor in enumerate(self.actors):
            for name, value in actor.params.items():
                named[f"actor{n}.{name}"] = value
        for name, value in self.critic.params.items():
            named[f"critic.{name}"] = value
        return named

    def zero_parameters(self) -> None:
        for group in self.parameter_groups():
            for v in group.values():
                v[...] = 0.0

    # -------------------------------------------------------------------------
    # decisions
    # -------------------------------------------------------------------------

    def empty_history(self) -> np.ndarray:
        return np.zeros((self.config.history_window, STATE_DIM))

    def masks(self, shares: np.ndarray) -> np.ndarray:
        return mask_actions(shares, self.config.deltas, self.config.share_floor)

    def act(
        self,
        raw_obs: np.ndarray,
        history: np.ndarray,
        shares: np.ndarray,
        rng: Optional[np.random.Generator] = None,
        greedy: bool = False,
    ) -> JointDecision:
        """
        Single forward pass: action, value and attention for every agent.

        Args:
            raw_obs: raw GlobalState
            history: (W, d) normalized history, oldest first, ending with the current state
            shares: current (slice, resource) shares
            rng: generator for sampling; required unless greedy
        """
        self.forward_count += 1
        x = self.normalizer.normalize(raw_obs)
        masks = self.masks(shares)
        deltas = np.asarray(self.config.deltas)
        agents: List[AgentDecision] = []
        for n, actor in enumerate(self.actors):
            cache = actor.forward(x, history, masks[n])
            if greedy:
                action = np.argmax(cache.probs, axis=1)
            else:
                action = np.array([rng.choice(len(deltas), p=cache.probs[f]) for f in range(N_FACTORS)])
            logp = float(sum(cache.logp[f, action[f]] for f in range(N_FACTORS)))
            chosen = deltas[action]
            labels = [describe_action(n, phi[:N_FACTORS] / 10.0) for phi in cache.phi]
            agents.append(AgentDecision(
                agent=n, action=action, deltas=chosen, logp=logp, probs=cache.probs,
                mask=cache.mask, phi=cache.phi, bundle=actor.bundle(cache, labels),
                label=describe_action(n, chosen),
            ))
        value, _ = self.critic.forward(x)
        joint = np.stack([a.bundle.fused for a in agents])
        decision = JointDecision(
            agents=agents, value=value, x=x, history=history,
            joint_attention=joint, attention_sha256=attention_digest(joint),
        )
        self._check_finite(decision)
        return decision

    def apply(self, shares: np.ndarray, decision: JointDecision) -> Tuple[np.ndarray, int]:
        """New shares after the decision's deltas, projected to the budgets."""
        return project_shares(np.asarray(shares) + decision.deltas)

    def _check_finite(self, decision: JointDecision) -> None:
        values = [decision.value, decision.logp, *decision.joint_attention.ravel()]
        if all(np.isfinite(values)):
            return
        path = self.dump_snapshot()
        raise PolicyNaNError("non-finite policy output", path)

    def dump_snapshot(self) -> Optional[str]:
        if not self.nan_snapshot_path:
            return None
        path = Path(self.nan_snapshot_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {name: value.tolist() for name, value in self.named_parameters().items()}
        path.write_text(json.dumps(payload))
        logger.error(f"💥 Non-finite policy output; parameters dumped to {path}")
        return str(path)
