"""Datasets: synthetic generation, CSV ingestion, splitting and standardization.

A :class:`Dataset` is an immutable pair of arrays (features ``X`` of shape
``(n, d)`` and integer labels ``y`` of shape ``(n,)``) together with the
declared class count ``C``.  The "stream" is simply a dataset consumed in
order, see :func:`iter_stream`.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class DataFormatError(ValueError):
    """Malformed dataset file (empty, ragged, missing label column)."""


class DataParseError(DataFormatError):
    """A cell could not be parsed; ``row`` is the 1-based data row number."""

    def __init__(self, message: str, row: int):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    C: int
    label_names: tuple[str, ...] | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, ndmin=2)
        y = np.array(self.y, dtype=np.int64).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if X.shape[0] == 0:
            X = X.reshape(0, X.shape[1] if X.ndim == 2 else 0)
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if self.C < 1:
            raise ValueError("C must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.C):
            raise ValueError(f"labels must lie in [0, {self.C})")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.C, self.label_names, self.feature_names)

    def with_features(self, X: np.ndarray) -> "Dataset":
        return Dataset(X, self.y, self.C, self.label_names, self.feature_names)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()

    def classes_present(self) -> np.ndarray:
        return np.unique(self.y)


def concat(parts: Sequence[Dataset]) -> Dataset:
    first = parts[0]
    return Dataset(
        np.concatenate([p.X for p in parts]),
        np.concatenate([p.y for p in parts]),
        first.C,
        first.label_names,
        first.feature_names,
    )


def iter_stream(dataset: Dataset) -> Iterator[tuple[np.ndarray, int]]:
    """Yield ``(x, y)`` pairs in stream order."""
    for i in range(len(dataset)):
        yield dataset.X[i], int(dataset.y[i])


# ---------------------------------------------------------------------------
# synthetic data


def _group_sizes(n: int, alpha: float) -> list[int]:
    signal = round((1 - alpha) * n / 2)
    noise = round(alpha * n / 2)
    sizes = [signal, signal, noise]
    sizes.append(n - sum(sizes))
    return sizes


def _exponential(rng: np.random.Generator, size: int) -> np.ndarray:
    # inverse CDF of the unit exponential
    return -np.log1p(-rng.random(size))


def synthetic_arrays(n: int, alpha: float, seed: int, *, allow_noise_free: bool = False):
    """Draw the exponential/uniform mixture.

    Returns ``(X, y, group)`` where ``group`` is 0/1 for the two exponential
    groups and 2/3 for the uniform noise groups (above/below ``x2 = 0``).
    """
    if n < 4:
        raise ValueError(f"n must be at least 4, got {n}")
    if not (0 < alpha < 0.5 or (allow_noise_free and alpha == 0)):
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    rng = np.random.default_rng(seed)
    sizes = _group_sizes(n, alpha)

    g0 = np.column_stack([_exponential(rng, sizes[0]), _exponential(rng, sizes[0])])
    g1 = np.column_stack([_exponential(rng, sizes[1]), -_exponential(rng, sizes[1])])
    g2 = np.column_stack([rng.uniform(0, 3, sizes[2]), rng.uniform(0, 3, sizes[2])])
    g3 = np.column_stack([rng.uniform(0, 3, sizes[3]), rng.uniform(-3, 0, sizes[3])])

    X = np.concatenate([g0, g1, g2, g3])
    group = np.repeat(np.arange(4), sizes)
    y = np.array([0, 1, 1, 0])[group]

    order = rng.permutation(n)
    return X[order], y[order], group[order]


def generate_synthetic(n: int, alpha: float, seed: int) -> Dataset:
    """Two-class, two-feature dataset whose best linear boundary is ``x2 = 0``.

    A fraction ``1 - alpha`` of the points come from exponential densities on
    either side of the boundary; the rest are uniform points on ``[0, 3]``
    boxes carrying the opposite label.  The optimal accuracy is ``1 - alpha``.
    """
    X, y, _ = synthetic_arrays(n, alpha, seed)
    return Dataset(X, y, 2, feature_names=("x1", "x2"))


# ---------------------------------------------------------------------------
# CSV


def load_csv(path: str | Path, label_column: str | int | None = None) -> Dataset:
    """Read a headed CSV file; ``label_column`` defaults to the last column.

    Labels are mapped to ``0..C-1`` in order of first appearance and the
    original values are kept in ``label_names``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataFormatError(f"{path}: header but no data rows")

    if label_column is None:
        li = len(header) - 1
    elif isinstance(label_column, int):
        li = label_column if label_column >= 0 else len(header) + label_column
        if not 0 <= li < len(header):
            raise DataFormatError(f"{path}: label column index {label_column} out of range")
    else:
        if label_column not in header:
            raise DataFormatError(f"{path}: no label column named {label_column!r}")
        li = header.index(label_column)

    mapping: dict[str, int] = {}
    X = np.empty((len(body), len(header) - 1))
    y = np.empty(len(body), dtype=np.int64)
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}: row {r} has {len(row)} fields, header has {len(header)}"
            )
        label = row[li].strip()
        y[r - 1] = mapping.setdefault(label, len(mapping))
        feats = row[:li] + row[li + 1 :]
        for j, cell in enumerate(feats):
            try:
                v = float(cell)
            except ValueError:
                raise DataParseError(
                    f"{path}: row {r}: non-numeric feature value {cell!r}", row=r
                ) from None
            if not math.isfinite(v):
                raise DataParseError(f"{path}: row {r}: non-finite value {cell!r}", row=r)
            X[r - 1, j] = v

    names = tuple(header[:li] + header[li + 1 :])
    return Dataset(X, y, len(mapping), tuple(mapping), names)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    names = dataset.feature_names or tuple(f"x{j + 1}" for j in range(dataset.d))
    labels = dataset.label_names
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "y"])
        for x, yi in zip(dataset.X, dataset.y):
            w.writerow([*(repr(float(v)) for v in x), labels[yi] if labels else int(yi)])


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    initial_fraction: float = 0.05
    stream_fraction: float = 0.75
    validation_fraction: float = 0.10
    test_fraction: float = 0.10

    def __post_init__(self):
        fr = self.fractions
        if not all(0 < f < 1 for f in fr):
            raise ValueError(f"split fractions must lie in (0, 1), got {fr}")
        if abs(sum(fr) - 1) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")

    @property
    def fractions(self) -> tuple[float, float, float, float]:
        return (
            self.initial_fraction,
            self.stream_fraction,
            self.validation_fraction,
            self.test_fraction,
        )


@dataclass(frozen=True, eq=False)
class Splits:
    initial: Dataset
    stream: Dataset
    validation: Dataset
    test: Dataset

    def __iter__(self):
        return iter((self.initial, self.stream, self.validation, self.test))


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int, int]:
    n_init = math.floor(spec.initial_fraction * n + 1e-9)
    n_val = math.floor(spec.validation_fraction * n + 1e-9)
    n_test = math.floor(spec.test_fraction * n + 1e-9)
    return n_init, n - n_init - n_val - n_test, n_val, n_test


def _cover_classes(perm: np.ndarray, y: np.ndarray, bounds: tuple[int, ...]) -> None:
    """Swap examples into the initial block until it holds every class."""
    n_init = bounds[0]
    for c in np.unique(y):
        init_labels = y[perm[:n_init]]
        if np.any(init_labels == c):
            continue
        donors = np.flatnonzero(y[perm[n_init:]] == c) + n_init
        counts = np.bincount(init_labels, minlength=y.max() + 1)
        # replace the last initial example whose class is represented twice or more
        spare = [i for i in range(n_init - 1, -1, -1) if counts[y[perm[i]]] > 1]
        if not spare:
            raise ValueError("initial part too small to contain every class")
        i, j = spare[0], donors[0]
        perm[i], perm[j] = perm[j], perm[i]


def split(dataset: Dataset, spec: SplitSpec, seed: int) -> Splits:
    """Shuffle and cut into (initial, stream, validation, test)."""
    n = len(dataset)
    sizes = split_sizes(n, spec)
    if min(sizes) < 1:
        raise ValueError(f"split of {n} examples leaves an empty part: sizes {sizes}")
    if sizes[0] < len(dataset.classes_present()):
        raise ValueError("initial part is smaller than the number of classes present")
    perm = np.random.default_rng(seed).permutation(n)
    _cover_classes(perm, dataset.y, sizes)
    cuts = np.cumsum(sizes)[:-1]
    parts = np.split(perm, cuts)
    return Splits(*(dataset.subset(p) for p in parts))


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    std_floor: float = field(default=1e-8)

    @classmethod
    def fit(cls, X: np.ndarray, std_floor: float = 1e-8) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            raise ValueError("cannot standardize from an empty dataset")
        return cls(X.mean(axis=0), np.maximum(X.std(axis=0), std_floor), std_floor)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


def standardize(source: Dataset, targets: Sequence[Dataset]) -> tuple[list[Dataset], Standardizer]:
    """Scale ``targets`` with per-feature statistics taken from ``source`` only."""
    stats = Standardizer.fit(source.X)
    return [t.with_features(stats.transform(t.X)) for t in targets], stats
