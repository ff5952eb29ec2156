"""Budget controller and stream active-learning strategies.

Every strategy walks the stream once.  For each arriving sample the budget
controller decides whether the sample is blocked, force-labeled
(replenishment) or handed to the strategy's own rule.  Each label
triggers a retrain of the classifier on everything labeled so far and a
test-set evaluation, which produces one learning-curve record.

Strategies:

* ``rnd``     label with probability ``b``
* ``vu``      variable-uncertainty threshold on the top class probability
* ``rmal_al`` learned policy, episodic agent updates after each batch
* ``rmal_hy`` learned policy, per-batch choice of episodic or bandit updates
"""

from __future__ import annotations

import enum
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import agent as ag
from .data import Dataset, Splits
from .model import ClassifierState, accuracy, predict, snapshot, train_arrays

log = logging.getLogger(__name__)

ACC_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# budget


class Gate(str, enum.Enum):
    PASS = "pass"
    FORCED = "forced"
    BLOCK = "block"


@dataclass
class BudgetState:
    """Counters of the budget controller.

    ``b_min_fraction`` is relative to ``b``: replenishment engages when the
    consumption rate ``u/t`` drops below ``b_min_fraction * b`` and stays on
    until the rate is back at ``b``.  ``n_total`` (stream length), when
    known, adds a hard cap ``u <= floor(b * n_total)``.
    """

    b: float
    b_min_fraction: float = 0.8
    n_total: int | None = None
    t: int = 0
    u: int = 0
    replenishing: bool = False

    def __post_init__(self):
        if not 0 < self.b <= 1:
            raise ValueError(f"budget b must lie in (0, 1], got {self.b}")
        if not 0 < self.b_min_fraction < 1:
            raise ValueError(f"b_min_fraction must lie in (0, 1), got {self.b_min_fraction}")

    @property
    def cap(self) -> int | None:
        if self.n_total is None:
            return None
        return math.floor(self.b * self.n_total + 1e-9)


def budget_gate(state: BudgetState) -> Gate:
    """Classify the sample arriving at time ``state.t`` (already counted).

    Updates ``state.replenishing`` as a side effect.
    """
    if state.t < 1:
        raise ValueError("the gate is evaluated after the arriving sample is counted (t >= 1)")
    rate = state.u / state.t
    if rate >= state.b:
        state.replenishing = False
        return Gate.BLOCK
    cap = state.cap
    if cap is not None and state.u >= cap:
        return Gate.BLOCK
    if rate < state.b_min_fraction * state.b:
        state.replenishing = True
    return Gate.FORCED if state.replenishing else Gate.PASS


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class ScheduleConfig:
    """Batch sizes and agent-training episodes per batch; last values repeat.

    ``unit`` says what a batch size counts: ``"labels"`` (labeled samples
    accumulated in the batch) or ``"stream"`` (stream samples seen since
    the batch started).
    """

    batch_sizes: tuple[int, ...] = (1000,)
    episodes: tuple[int, ...] = (50, 20, 10)
    unit: str = "labels"

    def __post_init__(self):
        if not self.batch_sizes or not self.episodes:
            raise ValueError("batch sizes and episode counts must be nonempty")
        if any(t < 1 for t in self.batch_sizes):
            raise ValueError("batch sizes must be positive")
        if any(e < 0 for e in self.episodes):
            raise ValueError("episode counts must be nonnegative")
        if self.unit not in ("labels", "stream"):
            raise ValueError(f"unknown batch unit {self.unit!r}")

    def batch_size(self, k: int) -> int:
        """Batch size of the ``k``-th batch (0-based)."""
        return self.batch_sizes[min(k, len(self.batch_sizes) - 1)]

    def n_episodes(self, k: int) -> int:
        return self.episodes[min(k, len(self.episodes) - 1)]


# ---------------------------------------------------------------------------
# outcome


@dataclass(frozen=True)
class CurvePoint:
    t: int
    u: int
    test_acc: float


@dataclass(frozen=True)
class Decision:
    t: int
    gate: str
    action: int
    pi_prob: float | None
    u: int
    test_acc: float | None  # set only when the sample was labeled


@dataclass
class StrategyOutcome:
    strategy: str
    classifier: ClassifierState
    curve: list[CurvePoint]
    decisions: list[Decision]
    policy: ag.PolicyState | None = None
    policy_curves: list[np.ndarray] = field(default_factory=list)
    agent_updates: int = 0

    @property
    def labels_used(self) -> int:
        return self.curve[-1].u if self.curve else 0

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.classifier.weights).tobytes())
        for c in self.curve:
            h.update(repr((c.t, c.u, c.test_acc)).encode())
        for d in self.decisions:
            h.update(repr((d.t, d.gate, d.action, d.pi_prob, d.u, d.test_acc)).encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# shared stream walk


class LabeledPool:
    """Growing labeled set in preallocated arrays (initial set first)."""

    def __init__(self, initial: Dataset, capacity: int):
        n0 = len(initial)
        self.X = np.empty((n0 + capacity, initial.d))
        self.y = np.empty(n0 + capacity, dtype=np.int64)
        self.X[:n0] = initial.X
        self.y[:n0] = initial.y
        self.n = n0

    def append(self, x: np.ndarray, y: int) -> None:
        self.X[self.n] = x
        self.y[self.n] = y
        self.n += 1

    def arrays(self, stop: int | None = None):
        stop = self.n if stop is None else stop
        return self.X[:stop], self.y[:stop]


@dataclass
class RunContext:
    """State shared by all strategies while walking one stream."""

    classifier: ClassifierState
    pool: LabeledPool
    budget: BudgetState
    test: Dataset
    validation: Dataset | None
    rng: np.random.Generator
    curve: list[CurvePoint] = field(default_factory=list)
    decisions: list[Decision] = field(default_factory=list)

    def label(self, x: np.ndarray, y: int) -> float:
        self.pool.append(x, y)
        self.classifier = train_arrays(self.classifier, *self.pool.arrays())
        self.budget.u += 1
        acc = accuracy(self.classifier, self.test)
        self.curve.append(CurvePoint(self.budget.t, self.budget.u, acc))
        return acc


class Strategy:
    """Base class; subclasses implement :meth:`choose`."""

    name = "base"

    def start(self, ctx: RunContext) -> None:
        pass

    def choose(self, ctx: RunContext, x: np.ndarray, s: np.ndarray) -> tuple[int, float | None]:
        raise NotImplementedError

    def labeled(self, ctx: RunContext, x: np.ndarray, y: int, forced: bool, s: np.ndarray) -> None:
        pass

    def finish(self, ctx: RunContext) -> None:
        pass

    def outcome_extras(self) -> dict:
        return {}


def run_strategy(strategy: Strategy, initial_model: ClassifierState, splits: Splits,
                 b: float, b_min_fraction: float, rng: np.random.Generator) -> StrategyOutcome:
    """Walk ``splits.stream`` once under the budget controller.

    ``initial_model`` must already be trained on ``splits.initial``.
    """
    stream = splits.stream
    budget = BudgetState(b, b_min_fraction, n_total=len(stream))
    ctx = RunContext(
        classifier=initial_model,
        pool=LabeledPool(splits.initial, len(stream)),
        budget=budget,
        test=splits.test,
        validation=splits.validation,
        rng=rng,
    )
    ctx.curve.append(CurvePoint(0, 0, accuracy(initial_model, splits.test)))
    strategy.start(ctx)
    for i in range(len(stream)):
        x, y = stream.X[i], int(stream.y[i])
        budget.t += 1
        gate = budget_gate(budget)
        if gate is Gate.BLOCK:
            ctx.decisions.append(Decision(budget.t, gate.value, 0, None, budget.u, None))
            continue
        s = predict(ctx.classifier, x)
        if gate is Gate.FORCED:
            action, p = 1, None
        else:
            action, p = strategy.choose(ctx, x, s)
        if action:
            acc = ctx.label(x, y)
            strategy.labeled(ctx, x, y, gate is Gate.FORCED, s)
        else:
            acc = None
        ctx.decisions.append(Decision(budget.t, gate.value, action, p, budget.u, acc))
    strategy.finish(ctx)
    return StrategyOutcome(strategy.name, ctx.classifier, ctx.curve, ctx.decisions,
                           **strategy.outcome_extras())


# ---------------------------------------------------------------------------
# baselines


class RandomStrategy(Strategy):
    name = "rnd"

    def start(self, ctx):
        self.prob = ctx.budget.b

    def choose(self, ctx, x, s):
        return int(ctx.rng.random() < self.prob), self.prob


class VariableUncertainty(Strategy):
    """Label when the top class probability is below an adaptive threshold.

    The threshold shrinks by ``(1 - step)`` after each label and grows by
    ``(1 + step)`` after each discard, so the rule keeps asking for the
    currently most uncertain samples at a roughly steady rate.
    """

    name = "vu"

    def __init__(self, theta0: float = 1.0, step: float = 0.01):
        self.theta = theta0
        self.step = step

    def choose(self, ctx, x, s):
        q = float(np.max(s))
        action, self.theta = vu_step(self.theta, q, self.step)
        return action, None


def vu_step(theta: float, q: float, step: float) -> tuple[int, float]:
    if q < theta:
        return 1, theta * (1 - step)
    return 0, theta * (1 + step)


def run_random(splits: Splits, model: ClassifierState, b: float, b_min_fraction: float,
               rng: np.random.Generator) -> StrategyOutcome:
    return run_strategy(RandomStrategy(), model, splits, b, b_min_fraction, rng)


def run_vu(splits: Splits, model: ClassifierState, b: float, b_min_fraction: float,
           rng: np.random.Generator, theta0: float = 1.0, step: float = 0.01) -> StrategyOutcome:
    return run_strategy(VariableUncertainty(theta0, step), model, splits, b, b_min_fraction, rng)


# ---------------------------------------------------------------------------
# agent training on a labeled batch


def relative_gain(acc: float, acc_prev: float) -> float:
    if acc_prev < ACC_FLOOR:
        log.debug("reference accuracy %.3g below floor; reward denominator clamped", acc_prev)
    return (acc - acc_prev) / max(acc_prev, ACC_FLOOR)


def update_agent(policy: ag.PolicyState, proxy_base: ClassifierState, D_X: np.ndarray,
                 D_y: np.ndarray, N_X: np.ndarray, N_y: np.ndarray, episodes: int,
                 validation: Dataset, rng: np.random.Generator, gamma: float = 0.0,
                 lr: float | None = None, trajectories: list | None = None) -> ag.PolicyState:
    """Train the policy by replaying the labeled batch ``N`` on a proxy classifier.

    Each episode restarts from ``proxy_base`` (the classifier that has seen
    ``D`` but none of ``N``), walks a shuffled ``N`` and lets the policy
    choose.  A chosen sample retrains the proxy and is rewarded by the
    relative validation-accuracy gain; a skipped sample is scored by
    training a throwaway copy with it and is rewarded by minus that gain.
    One REINFORCE step follows every episode.  Nothing but the policy is
    modified.
    """
    n_d, n_new = len(D_y), len(N_y)
    if n_new == 0:
        raise ValueError("update_agent needs a nonempty batch")
    acc0 = accuracy(proxy_base, validation)
    buf_X = np.empty((n_d + n_new, D_X.shape[1]))
    buf_y = np.empty(n_d + n_new, dtype=np.int64)
    buf_X[:n_d] = D_X
    buf_y[:n_d] = D_y
    for _ in range(episodes):
        proxy = proxy_base
        acc_prev = acc0
        m = n_d
        steps = []
        for j in rng.permutation(n_new):
            z, yz = N_X[j], N_y[j]
            s = predict(proxy, z)
            a, _ = ag.decide(policy, s, rng)
            # the candidate always sits at position m: both branches train on
            # the same array, so the two rewards are exact negatives
            buf_X[m] = z
            buf_y[m] = yz
            trained = train_arrays(proxy, buf_X[: m + 1], buf_y[: m + 1])
            acc = accuracy(trained, validation)
            gain = relative_gain(acc, acc_prev)
            if a == 1:
                proxy, acc_prev, m = trained, acc, m + 1
                steps.append(ag.Transition(s, 1, gain))
            else:
                steps.append(ag.Transition(s, 0, -gain))
        if trajectories is not None:
            trajectories.append(steps)
        policy = ag.reinforce_update(policy, steps, gamma, lr)
    return policy


# ---------------------------------------------------------------------------
# learned strategies


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.0
    lr: float = 0.1
    cb_lr: float | None = None  # defaults to lr
    cb_batch: int = 1  # m, transitions per bandit update
    record_policy_curves: bool = False


class LearnedStrategy(Strategy):
    """Policy-driven stream walk with batch bookkeeping (``D``, ``N``, proxy).

    ``strict_boundary`` selects when a batch closes: ``len(N) > T`` when true,
    ``len(N) == T`` (i.e. ``>=``) otherwise.  With ``unit="stream"`` the
    count is stream samples since the batch began instead of ``len(N)``.
    """

    def __init__(self, name: str, policy: ag.PolicyState, schedule: ScheduleConfig,
                 config: AgentConfig, strict_boundary: bool):
        self.name = name
        self.policy = policy
        self.schedule = schedule
        self.config = config
        self.strict = strict_boundary
        self.policy_curves: list[np.ndarray] = []
        self.updates = 0

    # batch bookkeeping ------------------------------------------------------

    def start(self, ctx):
        self.k = 0
        self.n_D = ctx.pool.n  # pool[:n_D] is D, pool[n_D:] is N
        self.batch_start_t = 0
        self.proxy = ctx.classifier
        self.acc_prev = accuracy(ctx.classifier, ctx.validation)
        self.cb_buffer: list[ag.Transition] = []
        self._record_curve()

    def _batch_len(self, ctx) -> int:
        if self.schedule.unit == "stream":
            return ctx.budget.t - self.batch_start_t
        return ctx.pool.n - self.n_D

    def _batch_full(self, ctx) -> bool:
        T = self.schedule.batch_size(self.k)
        n = self._batch_len(ctx)
        return n > T if self.strict else n >= T

    def _close_batch(self, ctx) -> None:
        # N merges into D and the proxy snapshot catches up with the classifier
        self.n_D = ctx.pool.n
        self.k += 1
        self.batch_start_t = ctx.budget.t
        self.proxy = ctx.classifier

    def _record_curve(self) -> None:
        if self.config.record_policy_curves and self.policy.input_width == 2:
            self.policy_curves.append(ag.policy_curve(self.policy))

    def _episodic(self, ctx, episodes: int) -> None:
        X, y = ctx.pool.arrays()
        self.policy = update_agent(
            self.policy, self.proxy, X[: self.n_D], y[: self.n_D], X[self.n_D :], y[self.n_D :],
            episodes, ctx.validation, ctx.rng, self.config.gamma, self.config.lr,
        )
        self.updates += 1
        self._record_curve()

    # strategy hooks -------------------------------------------------------------

    def choose(self, ctx, x, s):
        return ag.decide(self.policy, s, ctx.rng)

    def labeled(self, ctx, x, y, forced, s):
        acc = accuracy(ctx.classifier, ctx.validation)
        reward = relative_gain(acc, self.acc_prev)
        self.acc_prev = acc
        episodes = self.schedule.n_episodes(self.k)
        if episodes == 0:
            # bandit updates use only samples the policy itself chose
            if not forced:
                self.cb_buffer.append(ag.Transition(s, 1, reward))
                if len(self.cb_buffer) >= self.config.cb_batch:
                    lr = self.config.cb_lr if self.config.cb_lr is not None else self.config.lr
                    self.policy = ag.cb_update(self.policy, self.cb_buffer, lr)
                    self.cb_buffer = []
                    self.updates += 1
            if self._batch_full(ctx):
                self._close_batch(ctx)
                self._record_curve()
        elif self._batch_full(ctx):
            self._episodic(ctx, episodes)
            self._close_batch(ctx)

    def finish(self, ctx):
        # a partial last batch is only worth an update when it is not tiny
        episodes = self.schedule.n_episodes(self.k)
        pending = ctx.pool.n - self.n_D
        T = self.schedule.batch_size(self.k)
        if episodes > 0 and pending >= 2 and self._batch_len(ctx) >= max(2, T / 4):
            self._episodic(ctx, episodes)

    def outcome_extras(self):
        return {"policy": self.policy, "policy_curves": self.policy_curves,
                "agent_updates": self.updates}


def run_rmal_al(splits: Splits, model: ClassifierState, b: float, b_min_fraction: float,
                policy: ag.PolicyState, batch_size: int, episodes: Sequence[int],
                rng: np.random.Generator, config: AgentConfig = AgentConfig(),
                unit: str = "labels") -> StrategyOutcome:
    """Alternate classifier phases and episodic agent phases every ``batch_size``."""
    schedule = ScheduleConfig((batch_size,), tuple(episodes), unit)
    if any(e == 0 for e in schedule.episodes):
        raise ValueError("rmal_al needs a positive episode count for every batch")
    strat = LearnedStrategy("rmal_al", policy, schedule, config, strict_boundary=False)
    return run_strategy(strat, model, splits, b, b_min_fraction, rng)


def run_rmal_hy(splits: Splits, model: ClassifierState, b: float, b_min_fraction: float,
                policy: ag.PolicyState, schedule: ScheduleConfig, rng: np.random.Generator,
                config: AgentConfig = AgentConfig()) -> StrategyOutcome:
    """Per batch: episodic agent training when ``E_k > 0``, bandit updates otherwise."""
    strat = LearnedStrategy("rmal_hy", policy, schedule, config, strict_boundary=True)
    return run_strategy(strat, model, splits, b, b_min_fraction, rng)
