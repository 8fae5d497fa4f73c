"""
Multi-agent PPO trainer for SliceSim
Rollout collection, advantage estimation and updates on the joint performance and explainability loss.
"""

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.core.schema import SliceSimConfig, PhaseSchedule, SLICE_ORDER
from src.core.config import thread_cap
from src.core.env import SlicingEnv
from src.core.errors import PolicyNaNError, RolloutError
from src.agents.nn import Params, AdamOptimizer, clip_gradients, zeros_like
from src.agents.policy import MultiAgentPolicy, N_AGENTS, N_FACTORS, candidate_features
from src.agents.controller import SliceController, Trajectory
from src.agents.explain import (
    sparsity, sparsity_grad, cosine, cosine_grad, pearson, pearson_grad, epsilon_similar_pairs
)
from src.utils.event_log import EventLog, EventType


logger = logging.getLogger("SliceSim.Trainer")


# =============================================================================
# LOSS PIECES
# =============================================================================

def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    gamma: float,
    lam: float,
    bootstrap: float = 0.0,
    dones: Optional[Sequence[bool]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimates and returns.

    dones[t] marks an episode ending after step t; bootstrap is the value of
    the state following the last step when the batch is truncated.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if dones is None:
        dones = np.zeros(len(rewards), dtype=bool)
    advantages = np.zeros_like(rewards)
    last = 0.0
    for t in reversed(range(len(rewards))):
        next_value = bootstrap if t == len(rewards) - 1 else values[t + 1]
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        advantages[t] = last
    return advantages, advantages + values


def clipped_surrogate(ratio: np.ndarray, advantage: np.ndarray, clip_eps: float) -> np.ndarray:
    """Per-sample -min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return -np.minimum(ratio * advantage, clipped * advantage)


@dataclass
class AttentionLosses:
    sparse: float
    cons: float
    faith: float
    grad_fused: np.ndarray
    pairs: int = 0


def attention_losses(
    fused: np.ndarray,
    states: np.ndarray,
    value_grads: np.ndarray,
    epsilon: float,
    beta: Sequence[float] = (1.0, 1.0, 1.0),
) -> AttentionLosses:
    """
    Complements of the explainability metrics over a batch.

    Args:
        fused: (B, agents, d) fused attention
        states: (B, d) states used to find similar pairs
        value_grads: (B, d) critic input gradients; |dV/ds| is the faithfulness target
        beta: weights applied inside grad_fused

    Returns:
        L_sparse = 1 - mean sparsity, L_cons = 1 - mean cosine over pairs,
        L_faith = mean (1 - corr)/2, and the beta-weighted gradient on fused.
    """
    batch, agents, _ = fused.shape
    count = batch * agents
    grad = np.zeros_like(fused)

    sparse_vals = []
    faith_vals = []
    for i in range(batch):
        target = np.abs(value_grads[i])
        for n in range(agents):
            a = fused[i, n]
            sparse_vals.append(sparsity(a))
            grad[i, n] -= beta[0] * sparsity_grad(a) / count
            corr = pearson(a, target)
            faith_vals.append((1.0 - corr.value) / 2.0)
            if not corr.degenerate:
                grad[i, n] -= beta[2] * pearson_grad(a, target) / (2.0 * count)

    pairs = epsilon_similar_pairs(states, epsilon)
    if pairs:
        cos_vals = []
        scale = beta[1] / (len(pairs) * agents)
        for i, j in pairs:
            for n in range(agents):
                cos_vals.append(cosine(fused[i, n], fused[j, n]))
                grad[i, n] -= scale * cosine_grad(fused[i, n], fused[j, n])
                grad[j, n] -= scale * cosine_grad(fused[j, n], fused[i, n])
        l_cons = 1.0 - float(np.mean(cos_vals))
    else:
        l_cons = 0.0

    return AttentionLosses(
        sparse=1.0 - float(np.mean(sparse_vals)), cons=l_cons, faith=float(np.mean(faith_vals)),
        grad_fused=grad, pairs=len(pairs),
    )


def total_loss(
    l_ppo: float,
    value_loss: float,
    entropy: float,
    attention: Tuple[float, float, float],
    alpha_xrl: float,
    beta: Sequence[float],
    value_coef: float = 0.5,
    entropy_coef: float = 0.01,
    cf_loss: float = 0.0,
    cf_coef: float = 0.0,
) -> float:
    """L_PPO + c_v L_V - c_H H + c_cf L_cf + alpha_xrl (b1 L_sparse + b2 L_cons + b3 L_faith)."""
    loss = l_ppo + value_coef * value_loss - entropy_coef * entropy + cf_coef * cf_loss
    if alpha_xrl > 0:
        loss += alpha_xrl * (beta[0] * attention[0] + beta[1] * attention[1] + beta[2] * attention[2])
    return loss


# =============================================================================
# BATCHES
# =============================================================================

@dataclass
class Batch:
    """Flattened transitions with advantages, in worker-index order."""
    x: np.ndarray
    history: np.ndarray
    actions: np.ndarray
    masks: np.ndarray
    phi: np.ndarray
    old_logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    e_faithfulness: np.ndarray

    def __len__(self) -> int:
        return len(self.old_logp)

    def subset(self, idx: np.ndarray) -> "Batch":
        return Batch(**{name: getattr(self, name)[idx] for name in self.__dataclass_fields__})


def build_batch(trajectories: Sequence[Trajectory], gamma: float, lam: float) -> Batch:
    xs, hs, acts, masks, phis, logps, advs, rets, faiths = [], [], [], [], [], [], [], [], []
    for traj in trajectories:
        if not traj.transitions:
            continue
        t = traj.transitions
        adv, ret = gae(
            [tr.reward for tr in t], [tr.value for tr in t], gamma, lam,
            bootstrap=traj.bootstrap_value, dones=[tr.done for tr in t],
        )
        xs.extend(tr.x for tr in t)
        hs.extend(tr.history for tr in t)
        acts.extend(tr.actions for tr in t)
        masks.extend(tr.masks for tr in t)
        phis.extend(tr.phi for tr in t)
        logps.extend(tr.logp for tr in t)
        faiths.extend(tr.e_faithfulness for tr in t)
        advs.append(adv)
        rets.append(ret)
    if not xs:
        raise ValueError("cannot build a batch from empty trajectories")
    return Batch(
        x=np.asarray(xs), history=np.asarray(hs), actions=np.asarray(acts), masks=np.asarray(masks),
        phi=np.asarray(phis), old_logp=np.asarray(logps), advantages=np.concatenate(advs),
        returns=np.concatenate(rets), e_faithfulness=np.asarray(faiths),
    )


@dataclass
class LossReport:
    total: float
    ppo: float
    value: float
    entropy: float
    cf: float
    sparse: float = 0.0
    cons: float = 0.0
    faith: float = 0.0
    approx_kl: float = 0.0
    clip_fraction: float = 0.0
    critic_faithfulness: float = 0.0


# =============================================================================
# ROLLOUT WORKERS
# =============================================================================

class RolloutWorker:
    """One environment with its own RNG stream and a read-only policy snapshot."""

    def __init__(self, index: int, config: SliceSimConfig, policy: MultiAgentPolicy, seed_seq: np.random.SeedSequence):
        self.index = index
        env_seed, action_seed = seed_seq.spawn(2)
        self.env_seed = int(env_seed.generate_state(1)[0])
        env = SlicingEnv(config.sim, seed=self.env_seed)
        self.controller = SliceController(
            env, policy, config, schedule=PhaseSchedule.reactive_only(),
            rng=np.random.default_rng(action_seed), greedy=False, render=False,
        )
        self.episodes = 0

    def collect(self, policy: MultiAgentPolicy, length: int) -> List[Trajectory]:
        """Run length ticks, splitting at episode ends."""
        self.controller.policy = policy
        pieces: List[Trajectory] = []
        remaining = length
        while remaining > 0:
            if self.controller.env.done:
                self.episodes += 1
                self.controller.reset(self.env_seed + self.episodes)
            piece = self.controller.run_loop(remaining)
            remaining -= len(piece)
            pieces.append(piece)
        return pieces


# =============================================================================
# TRAINER
# =============================================================================

class MAPPOTrainer:
    """
    Owns the policy parameters and the optimizer.

    Workers get deep-copied policy snapshots each iteration; their results
    are reduced in worker-index order.
    """

    def __init__(self, config: SliceSimConfig, policy: Optional[MultiAgentPolicy] = None,
                 event_log: Optional[EventLog] = None):
        self.config = config
        self.train_cfg = config.train
        self.policy = policy or MultiAgentPolicy(
            config.policy, seed=config.seed, nan_snapshot_path=config.train.nan_snapshot_path
        )
        self.event_log = event_log
        self.optimizers = [AdamOptimizer(group, config.train.learning_rate) for group in self.policy.parameter_groups()]
        root = np.random.SeedSequence(config.seed)
        worker_seqs = root.spawn(config.train.n_envs + 1)
        self.rng = np.random.default_rng(worker_seqs[-1])
        self.workers = [
            RolloutWorker(i, config, self.policy, worker_seqs[i]) for i in range(config.train.n_envs)
        ]
        self.metrics: List[Dict[str, float]] = []
        self.iteration = 0

    # =========================================================================
    # COLLECTION
    # =========================================================================

    def collect_rollouts(self, length: Optional[int] = None) -> List[Trajectory]:
        """
        Collect length ticks split evenly over the workers.

        Raises:
            RolloutError: when an environment fails; the completed worker batches are attached.
        """
        length = self.train_cfg.rollout_length if length is None else length
        if length <= 0:
            return []
        n = len(self.workers)
        shares = [length // n + (1 if i < length % n else 0) for i in range(n)]
        snapshots = [copy.deepcopy(self.policy) for _ in self.workers]
        results: List[Optional[List[Trajectory]]] = [None] * n
        errors: Dict[int, Exception] = {}
        with ThreadPoolExecutor(max_workers=min(n, thread_cap(n))) as pool:
            futures = [
                pool.submit(worker.collect, snap, count)
                for worker, snap, count in zip(self.workers, snapshots, shares)
            ]
            for i, future in enumerate(futures):
                try:
                    results[i] = future.result()
                except Exception as e:
                    errors[i] = e
        if errors:
            index, error = min(errors.items())
            partial = {i: sum(len(t) for t in r) for i, r in enumerate(results) if r is not None}
            raise RolloutError(f"worker {index} failed: {error}", partial=partial) from error
        ordered: List[Trajectory] = []
        for r in results:
            ordered.extend(r)
        return ordered

    # =========================================================================
    # LOSS AND GRADIENTS
    # =========================================================================

    def faith_targets(self, batch: Batch) -> np.ndarray:
        return np.stack([self.policy.critic.input_gradient(x) for x in batch.x])

    def loss_and_gradients(
        self, batch: Batch, faith_targets: Optional[np.ndarray] = None, with_grads: bool = True
    ) -> Tuple[LossReport, Optional[List[Params]]]:
        """Minibatch loss and the analytic gradient for every parameter group."""
        cfg = self.train_cfg
        policy = self.policy
        size = len(batch)
        alpha = cfg.alpha_xrl
        use_attention = alpha > 0
        if use_attention and faith_targets is None:
            faith_targets = self.faith_targets(batch)

        caches = []
        new_logp = np.zeros(size)
        entropy = 0.0
        for i in range(size):
            row = []
            for n, actor in enumerate(policy.actors):
                cache = actor.forward(batch.x[i], batch.history[i], batch.masks[i, n], batch.phi[i, n], gate=False)
                row.append(cache)
                new_logp[i] += sum(cache.logp[f, batch.actions[i, n, f]] for f in range(N_FACTORS))
                for f in range(N_FACTORS):
                    p = cache.probs[f][cache.mask[f]]
                    entropy -= float(np.sum(p * np.log(np.where(p > 0, p, 1.0))))
            caches.append(row)
        entropy /= size

        adv = batch.advantages
        ratio = np.exp(new_logp - batch.old_logp)
        l_ppo = float(np.mean(clipped_surrogate(ratio, adv, cfg.clip_eps)))
        clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
        unclipped_active = ratio * adv <= clipped * adv
        g_logp = np.where(unclipped_active, -adv * ratio, 0.0) / size

        values = np.zeros(size)
        critic_caches = []
        for i in range(size):
            values[i], cc = policy.critic.forward(batch.x[i])
            critic_caches.append(cc)
        value_loss = float(np.mean(0.5 * (values - batch.returns) ** 2))

        cf_scores = np.zeros((size, N_AGENTS))
        deltas = np.asarray(policy.config.deltas)
        executed_phi = np.zeros((size, N_AGENTS, N_FACTORS + 1))
        for i in range(size):
            for n in range(N_AGENTS):
                executed_phi[i, n] = candidate_features(deltas[batch.actions[i, n]])
                cf_scores[i, n] = float(executed_phi[i, n] @ caches[i][n].cf_u)
        cf_err = cf_scores - adv[:, None]
        cf_loss = float(np.mean(0.5 * cf_err ** 2))

        attn = None
        if use_attention:
            fused = np.stack([[c.fused for c in row] for row in caches])
            attn = attention_losses(fused, batch.x, faith_targets, self.config.explain.epsilon, cfg.beta)

        loss = total_loss(
            l_ppo, value_loss, entropy,
            (attn.sparse, attn.cons, attn.faith) if attn else (0.0, 0.0, 0.0),
            alpha, cfg.beta, cfg.value_coef, cfg.entropy_coef, cf_loss, cfg.cf_coef,
        )
        report = LossReport(
            total=loss, ppo=l_ppo, value=value_loss, entropy=entropy, cf=cf_loss,
            sparse=attn.sparse if attn else 0.0, cons=attn.cons if attn else 0.0,
            faith=attn.faith if attn else 0.0,
            approx_kl=float(np.mean(batch.old_logp - new_logp)),
            clip_fraction=float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
            critic_faithfulness=(1.0 - attn.faith) if attn else 0.0,
        )
        if not np.isfinite(loss):
            path = policy.dump_snapshot()
            raise PolicyNaNError(f"non-finite loss at iteration {self.iteration}", path)
        if not with_grads:
            return report, None

        grads = [zeros_like(group) for group in policy.parameter_groups()]
        for i in range(size):
            for n, actor in enumerate(policy.actors):
                cache = caches[i][n]
                g_logits = np.zeros_like(cache.probs)
                for f in range(N_FACTORS):
                    p = cache.probs[f]
                    onehot = np.zeros_like(p)
                    onehot[batch.actions[i, n, f]] = 1.0
                    g_logits[f] += g_logp[i] * (onehot - p)
                    logp = np.where(cache.mask[f], cache.logp[f], 0.0)
                    h = -float(np.sum(p * logp))
                    # dH/dz = -p (log p + H)
                    g_logits[f] += cfg.entropy_coef / size * p * (logp + h)
                g_fused = alpha * attn.grad_fused[i, n] if attn else None
                g_u = cfg.cf_coef * cf_err[i, n] / (size * N_AGENTS) * executed_phi[i, n]
                g = actor.backward(cache, g_logits, g_fused, g_u)
                for name, value in g.items():
                    grads[n][name] += value
            g_v = cfg.value_coef * (values[i] - batch.returns[i]) / size
            for name, value in policy.critic.backward(critic_caches[i], g_v).items():
                grads[N_AGENTS][name] += value
        return report, grads

    # =========================================================================
    # UPDATE
    # =========================================================================

    def update(self, batch: Batch) -> Dict[str, float]:
        """epochs x minibatch Adam steps on the total loss."""
        cfg = self.train_cfg
        if len(batch) == 0:
            raise ValueError("update needs a nonempty batch")
        adv = batch.advantages
        if len(batch) > 1 and adv.std() > 0:
            batch = copy.copy(batch)
            batch.advantages = (adv - adv.mean()) / (adv.std() + 1e-8)
        reports: List[LossReport] = []
        norms: List[float] = []
        for _ in range(cfg.epochs):
            order = self.rng.permutation(len(batch))
            for start in range(0, len(batch), cfg.minibatch_size):
                mb = batch.subset(order[start:start + cfg.minibatch_size])
                report, grads = self.loss_and_gradients(mb)
                norms.append(clip_gradients(grads, cfg.max_grad_norm))
                for optimizer, g in zip(self.optimizers, grads):
                    optimizer.step(g)
                reports.append(report)
        metrics = {
            name: float(np.mean([getattr(r, name) for r in reports]))
            for name in ("total", "ppo", "value", "entropy", "cf", "sparse", "cons", "faith",
                         "approx_kl", "clip_fraction", "critic_faithfulness")
        }
        metrics["grad_norm"] = float(np.mean(norms))
        metrics["faith_divergence"] = float(abs(np.mean(batch.e_faithfulness) - metrics["critic_faithfulness"]))
        return metrics

    def train_iteration(self) -> Dict[str, float]:
        trajectories = self.collect_rollouts()
        if not trajectories:
            return {}
        raw = np.asarray([tr.raw_obs for traj in trajectories for tr in traj.transitions])
        batch = build_batch(trajectories, self.train_cfg.gamma, self.train_cfg.lambda_gae)
        metrics = self.update(batch)
        self.policy.normalizer.update(raw)

        rows = [row for traj in trajectories for row in traj.trace_rows]
        frame = pd.DataFrame(rows)
        metrics["iteration"] = self.iteration
        metrics["mean_reward"] = float(np.mean([tr.reward for traj in trajectories for tr in traj.transitions]))
        metrics["mean_u_total"] = float(frame["u_total"].mean())
        metrics["mean_E"] = float(frame["E"].mean())
        targets = {s.slice_id.value: s.targets.latency_target_ms for s in self.config.sim.slices}
        for slice_id in SLICE_ORDER:
            part = frame[frame["slice"] == slice_id.value]
            metrics[f"violation_rate_{slice_id.value}"] = float((part["latency_ms"] > targets[slice_id.value]).mean())
        self.metrics.append(metrics)
        logger.info(
            f"📈 Iteration {self.iteration}: reward {metrics['mean_reward']:.4f}, "
            f"U_total {metrics['mean_u_total']:.4f}, E {metrics['mean_E']:.4f}, KL {metrics['approx_kl']:.5f}"
        )
        if self.event_log is not None:
            self.event_log.log(EventType.TRAINING, f"Iteration {self.iteration}", "update complete",
                               data={k: v for k, v in metrics.items()})
        self.iteration += 1
        return metrics

    def train(self, iterations: Optional[int] = None) -> List[Dict[str, float]]:
        iterations = self.train_cfg.iterations if iterations is None else iterations
        for _ in range(iterations):
            self.train_iteration()
        return self.metrics

    def write_metrics(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.metrics).to_csv(path, index=False, float_format="%.17g")
        return path


def evaluation_rollout(
    config: SliceSimConfig, policy: MultiAgentPolicy, seed: int, horizon: int,
    event_log: Optional[EventLog] = None,
) -> Trajectory:
    """Greedy reactive-only rollout on a fresh environment."""
    env = SlicingEnv(config.sim, seed=seed)
    controller = SliceController(
        env, policy, config, schedule=PhaseSchedule.reactive_only(), greedy=True, event_log=event_log,
    )
    return controller.run_loop(horizon)
