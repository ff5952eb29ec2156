"""Experiment configuration: an INI file plus ``key=value`` overrides.

The file is read with :mod:`configparser`.  Sections only group keys for
readability: every key name is unique across sections, so an override may
be written either as ``key=value`` or ``section.key=value``.  Lists are
comma separated.  Unknown keys are rejected, and every default that ends up
being used is logged.

Example::

    [data]
    dataset = synthetic
    n = 8000

    [budget]
    b = 0.1

    [strategies]
    strategies = rnd, vu, rmal_hy
"""

from __future__ import annotations

import configparser
import logging
import os
from dataclasses import MISSING, dataclass, field, fields
from pathlib import Path
from typing import Iterable

from .data import SplitSpec

log = logging.getLogger(__name__)

STRATEGIES = ("rnd", "vu", "rmal_al", "rmal_hy")
ALIASES = {"strategy": "strategies"}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def _opt(section: str, kind: str, default=MISSING, doc: str = ""):
    meta = {"section": section, "kind": kind, "doc": doc}
    if default is MISSING:
        return field(metadata=meta)
    return field(default=default, metadata=meta)


@dataclass(frozen=True)
class ExperimentConfig:
    # required keys come first so the dataclass has no default for them
    dataset: str = _opt("data", "str", doc='"synthetic" or a CSV path')
    b: float = _opt("budget", "float", doc="label budget fraction in (0, 1]")
    strategies: tuple[str, ...] = _opt("strategies", "strs", doc="subset of " + ", ".join(STRATEGIES))

    n: int = _opt("data", "int", 8000, "synthetic dataset size (all four parts)")
    alpha: float = _opt("data", "float", 0.2, "synthetic noise fraction")
    label_column: str | None = _opt("data", "str?", None, "CSV label column name or index; last column if empty")
    initial_fraction: float = _opt("data", "float", 0.05)
    stream_fraction: float = _opt("data", "float", 0.75)
    validation_fraction: float = _opt("data", "float", 0.10)
    test_fraction: float = _opt("data", "float", 0.10)
    standardize: bool = _opt("data", "bool", True, "scale features with initial-set statistics")

    b_min_fraction: float = _opt("budget", "float", 0.8, "replenish threshold as a fraction of b")

    vu_theta0: float = _opt("strategies", "float", 1.0)
    vu_step: float = _opt("strategies", "float", 0.01)
    batch_sizes: tuple[int, ...] = _opt("strategies", "ints", (1000,), "batch sizes T_1, T_2, ... (last repeats)")
    batch_unit: str = _opt("strategies", "str", "labels", '"labels" or "stream": what a batch size counts')
    episodes_al: tuple[int, ...] = _opt("strategies", "ints", (50, 20, 10), "rmal_al episodes per batch")
    episodes_hy: tuple[int, ...] = _opt("strategies", "ints", (100, 0), "rmal_hy episodes per batch")

    clf_epochs: int = _opt("classifier", "int", 10, "training passes per retrain")
    clf_lr: float = _opt("classifier", "float", 1.0)
    clf_l2: float = _opt("classifier", "float", 1e-4)
    initial_epochs: int = _opt("classifier", "int", 500, "passes when fitting the initial set")

    agent_lr: float = _opt("agent", "float", 0.1, "episodic (REINFORCE) learning rate")
    cb_lr: float | None = _opt("agent", "float?", 1.0, "bandit learning rate; agent_lr if empty")
    cb_batch: int = _opt("agent", "int", 1, "transitions per bandit update")
    gamma: float = _opt("agent", "float", 0.0, "discount factor")
    weight_decay: float = _opt("agent", "float", 5e-4)
    baseline_decay: float = _opt("agent", "float", 0.9)
    agent_hidden: tuple[int, ...] = _opt("agent", "ints", (256, 512, 256, 256))
    agent_init: str = _opt("agent", "str", "he", '"he" or "uniform"')
    pretrain: str = _opt("agent", "str", "auto", '"yes", "no" or "auto" (only for CSV data)')
    t_unc: float = _opt("agent", "float", 0.6, "pretraining uncertainty threshold")
    pretrain_samples: int = _opt("agent", "int", 5000)
    pretrain_epochs: int = _opt("agent", "int", 12)

    trials: int = _opt("experiment", "int", 20)
    seed: int = _opt("experiment", "int", 0, "base seed; trial i uses seed + i")
    betas: tuple[float, ...] = _opt("experiment", "floats", (0.25, 0.5, 0.75, 1.0))
    workers: int = _opt("experiment", "int", 1, "parallel trial processes")
    out_dir: str | None = _opt("experiment", "str?", None)
    decision_logs: bool = _opt("experiment", "bool", False)
    policy_curves: bool = _opt("experiment", "bool", False)

    def __post_init__(self):
        _validate(self)

    @property
    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.initial_fraction, self.stream_fraction,
                         self.validation_fraction, self.test_fraction)

    @property
    def use_pretraining(self) -> bool:
        if self.pretrain == "auto":
            return self.dataset != "synthetic"
        return self.pretrain == "yes"


FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _check(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {message}", key)


def _validate(c: ExperimentConfig) -> None:
    _check(bool(c.dataset), "dataset", "must not be empty")
    _check(0 < c.b <= 1, "b", f"must lie in (0, 1], got {c.b}")
    _check(0 < c.b_min_fraction < 1, "b_min_fraction", f"must lie in (0, 1), got {c.b_min_fraction}")
    for s in c.strategies:
        _check(s in STRATEGIES, "strategies", f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
    _check(len(set(c.strategies)) == len(c.strategies), "strategies", "duplicate entries")
    _check(c.n >= 4, "n", f"must be at least 4, got {c.n}")
    _check(0 < c.alpha < 0.5, "alpha", f"must lie in (0, 0.5), got {c.alpha}")
    try:
        c.split_spec
    except ValueError as exc:
        raise ConfigError(f"split fractions: {exc}", "initial_fraction") from None
    _check(c.vu_theta0 > 0, "vu_theta0", "must be positive")
    _check(0 < c.vu_step < 1, "vu_step", "must lie in (0, 1)")
    _check(len(c.batch_sizes) > 0 and min(c.batch_sizes) >= 1, "batch_sizes", "need positive integers")
    _check(c.batch_unit in ("labels", "stream"), "batch_unit", f"unknown unit {c.batch_unit!r}")
    _check(len(c.episodes_al) > 0 and min(c.episodes_al) >= 1, "episodes_al", "need positive integers")
    _check(len(c.episodes_hy) > 0 and min(c.episodes_hy) >= 0, "episodes_hy", "need nonnegative integers")
    _check(c.clf_epochs >= 0, "clf_epochs", "must be nonnegative")
    _check(c.clf_lr > 0, "clf_lr", "must be positive")
    _check(c.clf_l2 >= 0, "clf_l2", "must be nonnegative")
    _check(c.initial_epochs >= 0, "initial_epochs", "must be nonnegative")
    _check(c.agent_lr > 0, "agent_lr", "must be positive")
    _check(c.cb_lr is None or c.cb_lr > 0, "cb_lr", "must be positive")
    _check(c.cb_batch >= 1, "cb_batch", "must be at least 1")
    _check(0 <= c.gamma <= 1, "gamma", "must lie in [0, 1]")
    _check(c.weight_decay >= 0, "weight_decay", "must be nonnegative")
    _check(0 <= c.baseline_decay < 1, "baseline_decay", "must lie in [0, 1)")
    _check(len(c.agent_hidden) > 0 and min(c.agent_hidden) >= 1, "agent_hidden", "need positive integers")
    _check(c.agent_init in ("he", "uniform"), "agent_init", f"unknown scheme {c.agent_init!r}")
    _check(c.pretrain in ("yes", "no", "auto"), "pretrain", f"expected yes/no/auto, got {c.pretrain!r}")
    _check(0 < c.t_unc < 1, "t_unc", "must lie in (0, 1)")
    _check(c.pretrain_samples >= 1, "pretrain_samples", "must be positive")
    _check(c.pretrain_epochs >= 0, "pretrain_epochs", "must be nonnegative")
    _check(c.trials >= 1, "trials", f"must be at least 1, got {c.trials}")
    _check(c.seed >= 0, "seed", "must be nonnegative")
    _check(len(c.betas) > 0 and all(0 < x <= 1 for x in c.betas), "betas", "values must lie in (0, 1]")
    _check(c.workers >= 1, "workers", "must be at least 1")


# ---------------------------------------------------------------------------
# parsing

_BOOLS = {"true": True, "yes": True, "on": True, "1": True,
          "false": False, "no": False, "off": False, "0": False}


def _scalar(kind: str, key: str, text: str):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {text!r}", key) from None
    if kind == "bool":
        try:
            return _BOOLS[text.lower()]
        except KeyError:
            raise ConfigError(f"{key}: expected a boolean, got {text!r}", key) from None
    return text


def coerce(key: str, text: str):
    """Convert raw text to the declared type of ``key``."""
    kind = FIELDS[key].metadata["kind"]
    text = text.strip()
    if kind.endswith("?"):
        return None if text == "" else _scalar(kind[:-1], key, text)
    if kind in ("ints", "floats", "strs"):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(_scalar(kind[:-1], key, t) for t in items)
    return _scalar(kind, key, text)


def _canonical(raw_key: str) -> str:
    key = raw_key.strip()
    if "." in key:
        section, _, key = key.partition(".")
        key = ALIASES.get(key, key)
        if key in FIELDS and FIELDS[key].metadata["section"] != section:
            raise ConfigError(f"key {key!r} belongs to section [{FIELDS[key].metadata['section']}]", key)
    key = ALIASES.get(key, key)
    if key not in FIELDS:
        raise ConfigError(f"unknown key {raw_key.strip()!r}", raw_key.strip())
    return key


def read_file(path: str | os.PathLike) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raw: dict[str, str] = {}
    for section in parser.sections():
        for k, v in parser.items(section):
            key = _canonical(f"{section}.{k}")
            if key in raw:
                raise ConfigError(f"{path}: key {key!r} given twice", key)
            raw[key] = v
    return raw


def parse_overrides(overrides: Iterable[str]) -> dict[str, str]:
    raw: dict[str, str] = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        k, _, v = item.partition("=")
        raw[_canonical(k)] = v
    return raw


def build_config(raw: dict[str, str]) -> ExperimentConfig:
    values = {k: coerce(k, v) for k, v in raw.items()}
    for name, f in FIELDS.items():
        if name in values:
            continue
        if f.default is MISSING:
            raise ConfigError(f"missing required key {name!r}", name)
        log.info("default %s = %r", name, f.default)
    return ExperimentConfig(**values)


def parse_config(path: str | os.PathLike | None = None, overrides: Iterable[str] = (),
                 base: dict[str, str] | None = None) -> ExperimentConfig:
    """Load ``path`` (optional), apply overrides (which win), validate.

    ``base`` holds raw values below the file in precedence; commands use it
    to fill keys that do not matter to them.
    """
    raw = {_canonical(k): v for k, v in (base or {}).items()}
    if path is not None:
        raw.update(read_file(path))
    raw.update(parse_overrides(overrides))
    return build_config(raw)


def render(cfg: ExperimentConfig) -> str:
    """The resolved configuration as an INI document (readable by :func:`parse_config`)."""
    sections: dict[str, list[str]] = {}
    for name, f in FIELDS.items():
        v = getattr(cfg, name)
        if v is None:
            text = ""
        elif isinstance(v, tuple):
            text = ", ".join(str(x) for x in v)
        elif isinstance(v, bool):
            text = "true" if v else "false"
        else:
            text = str(v)
        sections.setdefault(f.metadata["section"], []).append(f"{name} = {text}".rstrip())
    return "\n\n".join(f"[{s}]\n" + "\n".join(lines) for s, lines in sections.items()) + "\n"
