"""Multi-trial experiment runner, partial-budget accuracy and CSV reports.

Trials are paired: within trial ``i`` every strategy sees the same splits,
the same stream order and the same decision-RNG seed.  Each trial's seeds
are derived from ``base_seed + i`` and a purpose name, so trials can run
in any order (or in parallel) and still reproduce exactly.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import agent as ag
from . import data
from . import strategies as st
from .config import ExperimentConfig
from .model import ClassifierState, TrainConfig, train

log = logging.getLogger(__name__)

REPORT_HEADER = ("strategy", "b", "beta", "mean_acc", "stderr", "trials")
CURVE_HEADER = ("t", "u", "test_acc")
DECISION_HEADER = ("t", "gate", "action", "pi_prob", "u", "test_acc_if_retrained")

SEED_PURPOSES = ("data", "split", "decisions", "train", "policy", "pretrain")


def sub_seed(base_seed: int, trial: int, purpose: str) -> int:
    """Deterministic 32-bit seed for one (trial, purpose) pair.

    The trial seed is ``base_seed + trial``; it is mixed with a CRC of the
    purpose name through :class:`numpy.random.SeedSequence`.
    """
    if purpose not in SEED_PURPOSES:
        raise KeyError(purpose)
    ss = np.random.SeedSequence([base_seed + trial, zlib.crc32(purpose.encode())])
    return int(ss.generate_state(1)[0])


def trial_seeds(base_seed: int, trial: int) -> dict[str, int]:
    return {p: sub_seed(base_seed, trial, p) for p in SEED_PURPOSES}


# ---------------------------------------------------------------------------
# partial budget accuracy


@dataclass(frozen=True)
class PBA:
    accuracy: float
    t: int
    reached: bool


def pba(curve: Sequence[st.CurvePoint], beta: float, b: float, n_stream: int) -> PBA:
    """Accuracy at the first record with ``u >= beta * b * n_stream``.

    When the curve never gets there the last record is returned with
    ``reached=False``.
    """
    if len(curve) == 0:
        raise ValueError("empty learning curve")
    target = beta * b * n_stream
    for c in curve:
        # tolerance so that e.g. 0.1 * 0.5 * 6000 still matches u == 300
        if c.u >= target - 1e-9:
            return PBA(c.test_acc, c.t, True)
    last = curve[-1]
    return PBA(last.test_acc, last.t, False)


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


@dataclass(frozen=True)
class ReportRow:
    strategy: str
    b: float
    beta: float
    mean_acc: float
    stderr: float
    trials: int


# ---------------------------------------------------------------------------
# trials


@dataclass
class TrialResult:
    trial: int
    seeds: dict[str, int]
    stream_checksum: str
    n_stream: int
    outcomes: dict[str, st.StrategyOutcome] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)


def _load_dataset(cfg: ExperimentConfig, seeds: dict[str, int]) -> data.Dataset:
    if cfg.dataset == "synthetic":
        return data.generate_synthetic(cfg.n, cfg.alpha, seeds["data"])
    return data.load_csv(cfg.dataset, cfg.label_column)


def make_splits(cfg: ExperimentConfig, trial: int, dataset: data.Dataset | None = None) -> data.Splits:
    seeds = trial_seeds(cfg.seed, trial)
    if dataset is None or cfg.dataset == "synthetic":
        dataset = _load_dataset(cfg, seeds)
    splits = data.split(dataset, cfg.split_spec, seeds["split"])
    if cfg.standardize:
        parts, _ = data.standardize(splits.initial, list(splits))
        splits = data.Splits(*parts)
    return splits


def make_policy(cfg: ExperimentConfig, n_classes: int, seeds: dict[str, int]) -> ag.PolicyState:
    policy = ag.init_policy(
        n_classes, seeds["policy"], cfg.agent_hidden, lr=cfg.agent_lr,
        weight_decay=cfg.weight_decay, baseline_decay=cfg.baseline_decay, scheme=cfg.agent_init,
    )
    if cfg.use_pretraining:
        policy = ag.pretrain(
            policy, cfg.t_unc, cfg.pretrain_samples, cfg.pretrain_epochs, seeds["pretrain"]
        )
    return policy


def run_one(cfg: ExperimentConfig, name: str, splits: data.Splits, model: ClassifierState,
            seeds: dict[str, int], policy: ag.PolicyState | None) -> st.StrategyOutcome:
    rng = np.random.default_rng(seeds["decisions"])
    agent_cfg = st.AgentConfig(
        gamma=cfg.gamma, lr=cfg.agent_lr, cb_lr=cfg.cb_lr, cb_batch=cfg.cb_batch,
        record_policy_curves=cfg.policy_curves,
    )
    if name == "rnd":
        return st.run_random(splits, model, cfg.b, cfg.b_min_fraction, rng)
    if name == "vu":
        return st.run_vu(splits, model, cfg.b, cfg.b_min_fraction, rng, cfg.vu_theta0, cfg.vu_step)
    if name == "rmal_al":
        return st.run_rmal_al(splits, model, cfg.b, cfg.b_min_fraction, policy, cfg.batch_sizes[0],
                              cfg.episodes_al, rng, agent_cfg, cfg.batch_unit)
    if name == "rmal_hy":
        schedule = st.ScheduleConfig(tuple(cfg.batch_sizes), tuple(cfg.episodes_hy), cfg.batch_unit)
        return st.run_rmal_hy(splits, model, cfg.b, cfg.b_min_fraction, policy, schedule, rng, agent_cfg)
    raise ValueError(f"unknown strategy {name!r}")


def run_trial(cfg: ExperimentConfig, trial: int, dataset: data.Dataset | None = None) -> TrialResult:
    seeds = trial_seeds(cfg.seed, trial)
    splits = make_splits(cfg, trial, dataset)
    C = max(d.C for d in splits)
    tcfg = TrainConfig(cfg.clf_epochs, cfg.clf_lr, cfg.clf_l2, "warm", seeds["train"])
    model = train(ClassifierState.zeros(splits.initial.d, C, tcfg), splits.initial,
                  epochs=cfg.initial_epochs)
    result = TrialResult(trial, seeds, splits.stream.checksum(), len(splits.stream))
    policy = None
    for name in cfg.strategies:
        if name.startswith("rmal") and policy is None:
            policy = make_policy(cfg, C, seeds)
        try:
            result.outcomes[name] = run_one(cfg, name, splits, model, seeds, policy)
        except ag.PolicyDivergedError as exc:
            log.warning("trial %d, %s excluded: %s", trial, name, exc)
            result.failed[name] = str(exc)
    log.info("trial %d done: %s", trial, ", ".join(
        f"{k}={o.curve[-1].test_acc:.4f}" for k, o in result.outcomes.items()))
    return result


def _run_trial_star(args):
    return run_trial(*args)


def run_trials(cfg: ExperimentConfig) -> list[TrialResult]:
    dataset = None
    if cfg.dataset != "synthetic":
        dataset = data.load_csv(cfg.dataset, cfg.label_column)
    jobs = [(cfg, i, dataset) for i in range(cfg.trials)]
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_trial_star, jobs))
    else:
        results = [run_trial(*j) for j in jobs]
    return sorted(results, key=lambda r: r.trial)


def aggregate(cfg: ExperimentConfig, results: Sequence[TrialResult]) -> list[ReportRow]:
    rows = []
    for name in cfg.strategies:
        for beta in cfg.betas:
            accs = []
            for r in results:
                o = r.outcomes.get(name)
                if o is None:
                    continue
                p = pba(o.curve, beta, cfg.b, r.n_stream)
                if p.reached:
                    accs.append(p.accuracy)
            m, se = mean_stderr(accs)
            rows.append(ReportRow(name, cfg.b, beta, m, se, len(accs)))
    return rows


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_report(rows: Sequence[ReportRow], results: Sequence[TrialResult], out_dir: str | Path,
                 decision_logs: bool = False) -> None:
    """``report.csv``, ``curves/<strategy>_<trial>.csv`` and optional extras."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "report.csv", REPORT_HEADER,
                [(r.strategy, r.b, r.beta, r.mean_acc, r.stderr, r.trials) for r in rows])
    policy_sums: dict[str, dict[int, list[np.ndarray]]] = {}
    for res in results:
        for name, o in res.outcomes.items():
            _write_rows(out / "curves" / f"{name}_{res.trial}.csv", CURVE_HEADER,
                        [(c.t, c.u, c.test_acc) for c in o.curve])
            if decision_logs:
                _write_rows(out / "decisions" / f"{name}_{res.trial}.csv", DECISION_HEADER,
                            [(d.t, d.gate, d.action, d.pi_prob, d.u, d.test_acc)
                             for d in o.decisions])
            for k, curve in enumerate(o.policy_curves):
                policy_sums.setdefault(name, {}).setdefault(k, []).append(curve)
    # policy curves are averaged over the trials that reached each update
    for name, by_batch in policy_sums.items():
        for k, curves in sorted(by_batch.items()):
            mean = np.mean(curves, axis=0)
            _write_rows(out / "policy_curves" / name / f"{k}.csv", ("p", "pi_label"),
                        [(float(p), float(v)) for p, v in mean])


def read_report(path: str | Path) -> list[ReportRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            ReportRow(r["strategy"], float(r["b"]), float(r["beta"]), float(r["mean_acc"]),
                      float(r["stderr"]), int(r["trials"]))
            for r in reader
        ]


def build_id() -> str:
    import subprocess

    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
            cwd=Path(__file__).resolve().parent, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__

    return __version__


@dataclass
class ExperimentResult:
    rows: list[ReportRow]
    trials: list[TrialResult]
    excluded: dict[int, dict[str, str]]


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Run all trials, aggregate PBA and (when ``out_dir`` is set) write files."""
    if cfg.dataset != "synthetic" and not os.path.exists(cfg.dataset):
        raise FileNotFoundError(f"dataset not found: {cfg.dataset}")
    results = run_trials(cfg)
    rows = aggregate(cfg, results)
    excluded = {r.trial: r.failed for r in results if r.failed}
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    if out_dir:
        write_report(rows, results, out_dir, cfg.decision_logs)
        manifest = {
            "build": build_id(),
            "config": asdict(cfg),
            "trials": [
                {"trial": r.trial, "seeds": r.seeds, "stream_checksum": r.stream_checksum,
                 "excluded": r.failed}
                for r in results
            ],
        }
        manifest["config"]["out_dir"] = None
        with (Path(out_dir) / "manifest.json").open("w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return ExperimentResult(rows, results, excluded)
