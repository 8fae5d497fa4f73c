"""
Numpy building blocks for the SliceSim networks
Softmax utilities with their backward rules, Adam, gradient clipping and observation scaling.
"""

from typing import Dict, Iterable, Tuple

import numpy as np


Params = Dict[str, np.ndarray]


# =============================================================================
# ACTIVATIONS
# =============================================================================

def softmax(z: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis; -inf entries get exactly zero mass."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax along the last axis."""
    return p * (grad_p - np.sum(p * grad_p, axis=-1, keepdims=True))


def safe_log(p: np.ndarray, floor: float = 1e-300) -> np.ndarray:
    """log with zeros floored, so p * log p vanishes at p = 0."""
    return np.log(np.maximum(p, floor))


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def init_matrix(rng: np.random.Generator, rows: int, cols: int, scale: float) -> np.ndarray:
    """Gaussian init scaled by 1/sqrt(fan_in)."""
    return rng.normal(0.0, scale / np.sqrt(max(cols, 1)), size=(rows, cols))


# =============================================================================
# OPTIMIZATION
# =============================================================================

def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def global_norm(grads: Iterable[Params]) -> float:
    total = 0.0
    for g in grads:
        for v in g.values():
            total += float(np.sum(v * v))
    return float(np.sqrt(total))


def clip_gradients(grads: Iterable[Params], max_norm: float) -> float:
    """Scale every gradient in place so the joint norm is at most max_norm; returns the pre-clip norm."""
    grads = list(grads)
    norm = global_norm(grads)
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for g in grads:
            for v in g.values():
                v *= factor
    return norm


class AdamOptimizer:
    """Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, params: Params, lr: float, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = zeros_like(params)
        self.v = zeros_like(params)
        self.t = 0

    def step(self, grads: Params) -> None:
        if self.lr == 0:
            return
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


# =============================================================================
# OBSERVATION SCALING
# =============================================================================

class RunningNormalizer:
    """
    Welford running mean/variance; normalized values are clipped to [-clip, clip].

    Frozen while rollouts run and updated between iterations.
    """

    def __init__(self, dim: int, clip: float = 3.0):
        self.dim = dim
        self.clip = clip
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        std = np.sqrt(self.m2 / (self.count - 1))
        return np.where(std < 1e-8, 1.0, std)

    def update(self, batch: np.ndarray) -> None:
        for x in np.atleast_2d(batch):
            self.count += 1
            delta = x - self.mean
            self.mean = self.mean + delta / self.count
            self.m2 = self.m2 + delta * (x - self.mean)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((np.asarray(x, dtype=np.float64) - self.mean) / self.std, -self.clip, self.clip)

    def state_dict(self) -> Dict[str, object]:
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self.m2.tolist(), "clip": self.clip}

    def load_state_dict(self, state: Dict[str, object]) -> None:
        self.count = int(state["count"])
        self.mean = np.asarray(state["mean"], dtype=np.float64)
        self.m2 = np.asarray(state["m2"], dtype=np.float64)
        self.clip = float(state.get("clip", self.clip))
        self.dim = self.mean.size
