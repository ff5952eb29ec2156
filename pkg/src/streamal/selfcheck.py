"""Built-in numerical checks, run by ``streamal selfcheck``.

* classifier gradient against central finite differences;
* REINFORCE and bandit update directions against finite differences of the
  score-function objective, on small random policies;
* reward antisymmetry of the label/skip branches on a synthetic walk.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import agent as ag
from . import data, model
from .strategies import relative_gain

FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-7)


def check_classifier_gradient(n_probes: int = 20, seed: int = 0, tol: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        n, d, C = rng.integers(5, 40), rng.integers(1, 5), rng.integers(2, 5)
        X = rng.normal(size=(n, d))
        y = rng.integers(0, C, size=n)
        W = rng.normal(size=(C, d + 1))
        l2 = float(rng.uniform(0, 0.1))
        v = rng.normal(size=W.shape)
        fd = (model.objective(W + FD_STEP * v, X, y, l2) - model.objective(W - FD_STEP * v, X, y, l2)) / (
            2 * FD_STEP
        )
        worst = max(worst, _rel(fd, float(np.sum(model.gradient(W, X, y, l2) * v))))
    return CheckResult("classifier gradient", worst < tol, f"worst relative error {worst:.2e}")


def random_small_policy(rng: np.random.Generator, n_classes: int, hidden=(8, 8, 8, 8)) -> ag.PolicyState:
    """A policy with a random (nonzero) output layer and random baseline."""
    p = ag.init_policy(n_classes, int(rng.integers(2**31)), hidden, scheme="uniform")
    theta = p.params() + rng.normal(scale=0.3, size=p.n_params)
    return replace(p.with_params(theta), lr=1.0, weight_decay=float(rng.uniform(0, 1e-2)),
                   baseline=float(rng.normal(scale=0.1)))


def _update_direction(before: ag.PolicyState, after: ag.PolicyState) -> np.ndarray:
    """Recover the ascent direction ``g`` from ``theta' = theta + lr (g - wd theta)``."""
    theta = before.params()
    return (after.params() - theta) / before.lr + before.weight_decay * theta


def _fd_directional(policy, S, a, weights, scale, v) -> float:
    theta = policy.params()
    f_plus = ag.score_objective(policy.with_params(theta + FD_STEP * v), S, a, weights)
    f_minus = ag.score_objective(policy.with_params(theta - FD_STEP * v), S, a, weights)
    return scale * (f_plus - f_minus) / (2 * FD_STEP)


def _slice_direction(policy: ag.PolicyState, rng: np.random.Generator) -> np.ndarray:
    """Random direction supported on one randomly chosen weight or bias block."""
    sizes = [x.size for wb in zip(policy.weights, policy.biases) for x in wb]
    k = int(rng.integers(len(sizes)))
    v = np.zeros(sum(sizes))
    start = sum(sizes[:k])
    v[start : start + sizes[k]] = rng.normal(size=sizes[k])
    return v


def policy_gradient_probes(n_probes: int = 100, seed: int = 0, hidden=(8, 8, 8, 8)) -> list[float]:
    """Relative errors of update directions; alternates REINFORCE and bandit probes."""
    rng = np.random.default_rng(seed)
    errors = []
    for i in range(n_probes):
        C = int(rng.choice([2, 3, 4]))
        policy = random_small_policy(rng, C, hidden)
        L = int(rng.integers(1, 12))
        S = ag.random_distributions(L, C, rng)
        a = rng.integers(0, 2, size=L)
        r = rng.normal(scale=0.05, size=L)
        steps = [ag.Transition(S[j], int(a[j]), float(r[j])) for j in range(L)]
        if i % 2 == 0:
            gamma = float(rng.uniform(0, 1))
            updated = ag.reinforce_update(policy, steps, gamma)
            weights, scale = ag.discounted_returns(r, gamma) - policy.baseline, 1.0
        else:
            updated = ag.cb_update(policy, steps)
            weights, scale = r - policy.baseline, 1.0 / L
        g = _update_direction(policy, updated)
        v = _slice_direction(policy, rng)
        errors.append(_rel(_fd_directional(policy, S, a, weights, scale, v), float(g @ v)))
    return errors


def check_policy_gradients(n_probes: int = 100, seed: int = 0, tol: float = 1e-3) -> CheckResult:
    errors = np.array(policy_gradient_probes(n_probes, seed))
    bad = int(np.sum(errors >= tol))
    return CheckResult("policy update gradients", bad == 0,
                       f"{n_probes - bad}/{n_probes} probes within {tol:g}, worst {errors.max():.2e}")


def reward_pairs(n_points: int = 50, seed: int = 0) -> list[tuple[float, float]]:
    """``(r_label, r_skip)`` computed in separate training calls from one snapshot.

    The walk labels the first ``n_points`` stream samples; at each one both
    branches are evaluated from the same predecessor classifier.
    """
    ds = data.generate_synthetic(1200, 0.2, seed)
    sp = data.split(ds, data.SplitSpec(0.05, 0.75, 0.10, 0.10), seed)
    cfg = model.TrainConfig(epochs=5, lr=0.5, seed=seed)
    clf = model.train(model.ClassifierState.zeros(2, 2, cfg), sp.initial, epochs=50)
    X, y = sp.initial.X.copy(), sp.initial.y.copy()
    acc_prev = model.accuracy(clf, sp.validation)
    pairs = []
    for i in range(n_points):
        z, yz = sp.stream.X[i], sp.stream.y[i]
        X1, y1 = np.vstack([X, z]), np.append(y, yz)
        labelled = model.train_arrays(model.snapshot(clf), X1, y1)
        counterfactual = model.train_arrays(model.snapshot(clf), X1.copy(), y1.copy())
        r1 = relative_gain(model.accuracy(labelled, sp.validation), acc_prev)
        r0 = -relative_gain(model.accuracy(counterfactual, sp.validation), acc_prev)
        pairs.append((r1, r0))
        clf, X, y = labelled, X1, y1
        acc_prev = model.accuracy(clf, sp.validation)
    return pairs


def check_reward_antisymmetry(n_points: int = 50, seed: int = 0) -> CheckResult:
    pairs = reward_pairs(n_points, seed)
    bad = sum(1 for r1, r0 in pairs if r1 != -r0)
    nonzero = sum(1 for r1, _ in pairs if r1 != 0)
    return CheckResult("reward antisymmetry", bad == 0,
                       f"{n_points - bad}/{n_points} exact ({nonzero} with nonzero reward)")


def run_all(seed: int = 0) -> list[CheckResult]:
    return [
        check_classifier_gradient(seed=seed),
        check_policy_gradients(seed=seed),
        check_reward_antisymmetry(seed=seed),
    ]
