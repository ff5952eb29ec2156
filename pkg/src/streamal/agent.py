"""Labeling policy: an MLP from a class distribution to P(label | state).

The network is ``C -> 256 -> 512 -> 256 -> 256 -> 1`` with tanh on the
first hidden layer, ReLU on the others and a sigmoid output.  Updates are
plain SGD with weight decay on the score-function (REINFORCE) estimator,
either over a whole episode with discounted returns or over a batch of
one-step bandit transitions.  Policy states are values; every update
returns a new :class:`PolicyState`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

HIDDEN_SIZES = (256, 512, 256, 256)
PROB_CLIP = 1e-7
EXPLOSION_NORM = 1e6


class PolicyDivergedError(RuntimeError):
    """Raised when an update leaves non-finite or exploding parameters."""


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float

    def __post_init__(self):
        if self.action not in (0, 1):
            raise ValueError(f"action must be 0 or 1, got {self.action}")


Trajectory = Sequence[Transition]


@dataclass(frozen=True, eq=False)
class PolicyState:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    lr: float = 0.1
    weight_decay: float = 5e-4
    baseline: float = 0.0
    baseline_decay: float = 0.9

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for wb in zip(self.weights, self.biases) for a in wb])

    def with_params(self, flat: np.ndarray) -> "PolicyState":
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(flat[pos : pos + w.size].reshape(w.shape))
            pos += w.size
            bs.append(flat[pos : pos + b.size].reshape(b.shape))
            pos += b.size
        return replace(self, weights=tuple(ws), biases=tuple(bs))

    def copy(self) -> "PolicyState":
        return replace(
            self,
            weights=tuple(w.copy() for w in self.weights),
            biases=tuple(b.copy() for b in self.biases),
        )


def init_policy(n_classes: int, seed: int, hidden: Sequence[int] = HIDDEN_SIZES, *,
                lr: float = 0.1, weight_decay: float = 5e-4, baseline_decay: float = 0.9,
                scheme: str = "he") -> PolicyState:
    """Random hidden layers and an all-zero output layer.

    The zero output layer makes the untrained policy output exactly 0.5.
    ``scheme="uniform"`` draws every hidden layer from U(+-1/sqrt(fan_in));
    ``scheme="he"`` keeps that for the tanh layer but uses
    U(+-sqrt(6/fan_in)) and zero biases for the ReLU layers, which keeps
    the last hidden features at O(1) scale instead of shrinking ~0.6x per
    layer.
    """
    if scheme not in ("he", "uniform"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    sizes = [n_classes, *hidden]
    ws, bs = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if scheme == "he" and i > 0:
            bound = math.sqrt(6.0 / fan_in)
            ws.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
            bs.append(np.zeros(fan_out))
        else:
            bound = 1.0 / math.sqrt(fan_in)
            ws.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
            bs.append(rng.uniform(-bound, bound, fan_out))
    ws.append(np.zeros((1, sizes[-1])))
    bs.append(np.zeros(1))
    return PolicyState(tuple(ws), tuple(bs), lr, weight_decay, 0.0, baseline_decay)


# ---------------------------------------------------------------------------
# forward / backward


def _check_width(policy: PolicyState, S: np.ndarray) -> None:
    if S.shape[-1] != policy.input_width:
        raise ValueError(
            f"state width {S.shape[-1]} does not match policy input width {policy.input_width}"
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cached(policy: PolicyState, S: np.ndarray):
    acts = [S]
    h = S
    n_layers = len(policy.weights)
    for i, (w, b) in enumerate(zip(policy.weights, policy.biases)):
        z = h @ w.T + b
        if i == n_layers - 1:
            return z[:, 0], acts
        h = np.tanh(z) if i == 0 else np.maximum(z, 0.0)
        acts.append(h)
    raise AssertionError("unreachable")


def logits(policy: PolicyState, S: np.ndarray) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    _check_width(policy, S)
    return _forward_cached(policy, S)[0]


def forward_batch(policy: PolicyState, S: np.ndarray) -> np.ndarray:
    return _sigmoid(logits(policy, S))


def forward(policy: PolicyState, s: np.ndarray) -> float:
    """Probability of choosing to label the sample whose prediction is ``s``."""
    s = np.asarray(s, dtype=np.float64).reshape(1, -1)
    _check_width(policy, s)
    h = s[0]
    last = len(policy.weights) - 1
    for i, (w, b) in enumerate(zip(policy.weights, policy.biases)):
        z = w @ h + b
        if i == last:
            return float(_sigmoid(z)[0])
        h = np.tanh(z) if i == 0 else np.maximum(z, 0.0)
    raise AssertionError("unreachable")


def decide(policy: PolicyState, s: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    """Sample a Bernoulli action; returns ``(action, p)``.  Uses one uniform draw."""
    p = forward(policy, s)
    return int(rng.random() < p), p


def _backward(policy: PolicyState, acts: list[np.ndarray], dz_out: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_i dz_out[i] * logit_i`` w.r.t. the flat parameters."""
    grads_w = [None] * len(policy.weights)
    grads_b = [None] * len(policy.weights)
    delta = dz_out[:, None]
    for i in range(len(policy.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ policy.weights[i]
        a = acts[i]
        if i == 1:
            delta = delta * (1.0 - a * a)
        else:
            delta = delta * (a > 0)
    return np.concatenate([g.ravel() for wb in zip(grads_w, grads_b) for g in wb])


def log_prob(policy: PolicyState, S: np.ndarray, actions: np.ndarray) -> np.ndarray:
    p = np.clip(forward_batch(policy, S), PROB_CLIP, 1 - PROB_CLIP)
    a = np.asarray(actions, dtype=np.float64)
    return a * np.log(p) + (1 - a) * np.log1p(-p)


def score_objective(policy: PolicyState, S, actions, weights) -> float:
    """``sum_t log pi(a_t | s_t) * weights_t``; its gradient drives both updates."""
    return float(np.dot(log_prob(policy, S, actions), np.asarray(weights, dtype=np.float64)))


def score_gradient(policy: PolicyState, S, actions, weights) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    _check_width(policy, S)
    z, acts = _forward_cached(policy, S)
    p = _sigmoid(z)
    a = np.asarray(actions, dtype=np.float64)
    # d/dz log Bernoulli(a; sigmoid(z)) = a - p
    return _backward(policy, acts, (a - p) * np.asarray(weights, dtype=np.float64))


# ---------------------------------------------------------------------------
# updates


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def update_baseline(policy: PolicyState, observed_return: float) -> PolicyState:
    d = policy.baseline_decay
    return replace(policy, baseline=d * policy.baseline + (1 - d) * observed_return)


def _check_finite(flat: np.ndarray) -> None:
    if not np.all(np.isfinite(flat)):
        raise PolicyDivergedError("policy update produced non-finite parameters")
    norm = float(np.linalg.norm(flat))
    if norm > EXPLOSION_NORM:
        raise PolicyDivergedError(f"policy parameter norm exploded to {norm:.3g}")


def _ascent_step(policy: PolicyState, S, actions, targets, scale: float,
                 lr: float | None) -> PolicyState:
    lr = policy.lr if lr is None else lr
    # the baseline in the gradient is the value from before this batch
    advantages = np.asarray(targets, dtype=np.float64) - policy.baseline
    g = scale * score_gradient(policy, S, actions, advantages)
    theta = policy.params()
    theta = theta + lr * (g - policy.weight_decay * theta)
    _check_finite(theta)
    updated = policy.with_params(theta)
    for r in targets:
        updated = update_baseline(updated, float(r))
    return updated


def _stack(transitions: Sequence[Transition]):
    S = np.array([tr.state for tr in transitions], dtype=np.float64)
    a = np.array([tr.action for tr in transitions], dtype=np.float64)
    r = np.array([tr.reward for tr in transitions], dtype=np.float64)
    return S, a, r


def reinforce_update(policy: PolicyState, trajectory: Trajectory, gamma: float = 0.0,
                     lr: float | None = None) -> PolicyState:
    """One episodic step on ``sum_t grad log pi(a_t|s_t) (R_t - b)``."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    S, a, r = _stack(trajectory)
    returns = discounted_returns(r, gamma)
    return _ascent_step(policy, S, a, returns, 1.0, lr)


def cb_update(policy: PolicyState, batch: Sequence[Transition],
              lr: float | None = None) -> PolicyState:
    """Bandit step averaging ``grad log pi(a_k|s_k) (r_k - b)`` over the batch."""
    if len(batch) == 0:
        raise ValueError("empty bandit batch")
    S, a, r = _stack(batch)
    return _ascent_step(policy, S, a, r, 1.0 / len(batch), lr)


# ---------------------------------------------------------------------------
# supervised pretraining


def random_distributions(n: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the probability simplex (normalized exponentials)."""
    e = rng.exponential(size=(n, n_classes))
    return e / e.sum(axis=1, keepdims=True)


def uncertainty_targets(S: np.ndarray, t_unc: float) -> np.ndarray:
    """1 where the top class probability is strictly below ``t_unc``."""
    return (np.max(S, axis=1) < t_unc).astype(np.float64)


@dataclass
class PretrainReport:
    holdout_accuracy: float
    losses: list[float] = field(default_factory=list)


def pretrain(policy: PolicyState, t_unc: float = 0.6, n_samples: int = 5000,
             epochs: int = 12, seed: int = 0, lr: float = 0.05, momentum: float = 0.9,
             batch_size: int = 64, report: PretrainReport | None = None) -> PolicyState:
    """Fit the policy to the rule "label when max probability < t_unc".

    Binary cross-entropy, mini-batch SGD with momentum.  The policy's
    baseline and optimizer settings are carried over unchanged.
    """
    C = policy.input_width
    if not 1.0 / C < t_unc < 1.0:
        raise ValueError(f"t_unc must lie in (1/C, 1) = ({1.0 / C:.3g}, 1), got {t_unc}")
    rng = np.random.default_rng(seed)
    S = random_distributions(n_samples, C, rng)
    y = uncertainty_targets(S, t_unc)

    theta = policy.params()
    velocity = np.zeros_like(theta)
    losses = []
    current = policy
    for _ in range(epochs):
        order = rng.permutation(n_samples)
        total = 0.0
        for start in range(0, n_samples, batch_size):
            idx = order[start : start + batch_size]
            z, acts = _forward_cached(current, S[idx])
            p = _sigmoid(z)
            pc = np.clip(p, PROB_CLIP, 1 - PROB_CLIP)
            total += -float(np.sum(y[idx] * np.log(pc) + (1 - y[idx]) * np.log1p(-pc)))
            g = _backward(current, acts, (p - y[idx]) / len(idx))
            velocity = momentum * velocity - lr * g
            theta = theta + velocity
            current = current.with_params(theta)
        losses.append(total / n_samples)
    _check_finite(theta)

    hold = random_distributions(5000, C, rng)
    acc = float(np.mean((forward_batch(current, hold) > 0.5) == (uncertainty_targets(hold, t_unc) > 0.5)))
    if acc < 0.95:
        log.warning("pretraining reached only %.3f agreement with the threshold rule", acc)
    if report is not None:
        report.holdout_accuracy = acc
        report.losses = losses
    return current


def policy_curve(policy: PolicyState, n_points: int = 101) -> np.ndarray:
    """``(p, pi(label | (p, 1-p)))`` rows for a binary-class policy."""
    if policy.input_width != 2:
        raise ValueError("policy curves are defined for two-class policies")
    p = np.linspace(0.0, 1.0, n_points)
    S = np.column_stack([p, 1.0 - p])
    return np.column_stack([p, forward_batch(policy, S)])
