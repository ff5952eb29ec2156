"""Multinomial logistic regression trained by (mini-)batch gradient descent.

States are values: :func:`train` returns a new :class:`ClassifierState` and
never touches its input, so proxy and counterfactual copies are cheap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset

FULL_BATCH_LIMIT = 2000
MINI_BATCH = 64


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    lr: float = 0.05
    l2: float = 1e-4
    # "warm" continues from the given weights, "scratch" restarts from zeros
    mode: str = "warm"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 penalty must be nonnegative")
        if self.mode not in ("warm", "scratch"):
            raise ValueError(f"unknown training mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class ClassifierState:
    """Weights of shape ``(C, d + 1)``; the last column is the bias."""

    weights: np.ndarray
    config: TrainConfig = TrainConfig()

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] < 1:
            raise ValueError(f"weights must be a (C, d+1) matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("classifier weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, d: int, C: int, config: TrainConfig | None = None) -> "ClassifierState":
        return cls(np.zeros((C, d + 1)), config or TrainConfig())

    @property
    def C(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1] - 1

    def with_config(self, **changes) -> "ClassifierState":
        return ClassifierState(self.weights, replace(self.config, **changes))


def snapshot(state: ClassifierState) -> ClassifierState:
    return ClassifierState(state.weights.copy(), state.config)


def _check_dims(state: ClassifierState, d: int) -> None:
    if d != state.d:
        raise ValueError(f"feature dimension {d} does not match classifier dimension {state.d}")


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def _scores(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ W[:, :-1].T + W[:, -1]


def predict_proba(state: ClassifierState, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_dims(state, X.shape[1])
    return _softmax_rows(_scores(state.weights, X))


def predict(state: ClassifierState, x: np.ndarray) -> np.ndarray:
    """Class distribution for a single feature vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return predict_proba(state, x[None, :])[0]


def accuracy(state: ClassifierState, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    _check_dims(state, data.d)
    # argmax returns the first maximum: ties go to the lowest class index
    pred = np.argmax(_scores(state.weights, data.X), axis=1)
    return float(np.count_nonzero(pred == data.y)) / len(data)


def objective(W: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` (bias excluded)."""
    s = _scores(W, X)
    s = s - s.max(axis=1, keepdims=True)
    logz = np.log(np.exp(s).sum(axis=1))
    ce = np.mean(logz - s[np.arange(len(y)), y])
    return float(ce + 0.5 * l2 * np.sum(W[:, :-1] ** 2))


def gradient(W: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    n = X.shape[0]
    P = _softmax_rows(_scores(W, X))
    P[np.arange(n), y] -= 1.0
    P /= n
    g = np.empty_like(W)
    g[:, :-1] = P.T @ X + l2 * W[:, :-1]
    g[:, -1] = P.sum(axis=0)
    return g


def train_arrays(state: ClassifierState, X: np.ndarray, y: np.ndarray, epochs: int | None = None,
                 loss_trace: list[float] | None = None) -> ClassifierState:
    """Training on raw arrays; :func:`train` is the checked public entry."""
    cfg = state.config
    epochs = cfg.epochs if epochs is None else epochs
    W = np.zeros_like(state.weights) if cfg.mode == "scratch" else state.weights.copy()
    n = X.shape[0]
    if loss_trace is not None:
        loss_trace.append(objective(W, X, y, cfg.l2))
    if n <= FULL_BATCH_LIMIT:
        for _ in range(epochs):
            W -= cfg.lr * gradient(W, X, y, cfg.l2)
            if loss_trace is not None:
                loss_trace.append(objective(W, X, y, cfg.l2))
    else:
        # shuffling depends only on (seed, n) so identical calls agree bitwise
        rng = np.random.default_rng([cfg.seed, n])
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, MINI_BATCH):
                idx = order[start : start + MINI_BATCH]
                W -= cfg.lr * gradient(W, X[idx], y[idx], cfg.l2)
            if loss_trace is not None:
                loss_trace.append(objective(W, X, y, cfg.l2))
    return ClassifierState(W, cfg)


def train(state: ClassifierState, data: Dataset, epochs: int | None = None) -> ClassifierState:
    """Run ``epochs`` (default ``state.config.epochs``) passes over ``data``."""
    epochs = state.config.epochs if epochs is None else epochs
    _check_dims(state, data.d)
    if data.C > state.C:
        raise ValueError(f"dataset has {data.C} classes, classifier has {state.C}")
    if len(data) == 0:
        if epochs:
            raise ValueError("cannot train on an empty dataset")
        return snapshot(state)
    return train_arrays(state, data.X, data.y, epochs)


def save_weights(state: ClassifierState, path: str | Path) -> None:
    """Debug checkpoint: header ``d,C`` then the row-major weight matrix."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", state.d, "C", state.C])
        for row in state.weights:
            w.writerow([repr(float(v)) for v in row])


def load_weights(path: str | Path, config: TrainConfig | None = None) -> ClassifierState:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    d, C = int(rows[0][1]), int(rows[0][3])
    W = np.array([[float(v) for v in r] for r in rows[1:]])
    if W.shape != (C, d + 1):
        raise ValueError(f"checkpoint shape {W.shape} does not match header d={d}, C={C}")
    return ClassifierState(W, config or TrainConfig())
