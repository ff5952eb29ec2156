"""``streamal`` command line.

Subcommands: ``generate-data``, ``run``, ``policy-curve``, ``selfcheck``.
Exit status is 0 on success, 1 for configuration errors and 2 for any
other failure (I/O, malformed data, a diverged policy, failed checks).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from . import agent as ag
from . import data, harness, selfcheck
from .config import ConfigError, ExperimentConfig, parse_config, render

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key (repeatable)")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--trials", type=int, help="shorthand for --set trials=N")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="streamal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", parents=[common], help="write a synthetic dataset as CSV")
    g.add_argument("--n", type=int, help="number of points (default: config n)")
    g.add_argument("--alpha", type=float, help="noise fraction (default: config alpha)")

    sub.add_parser("run", parents=[common], help="run a multi-trial experiment")

    pc = sub.add_parser("policy-curve", parents=[common],
                        help="export pi(label | (p, 1-p)) for a fresh (optionally pretrained) policy")
    pc.add_argument("--points", type=int, default=101)

    sub.add_parser("selfcheck", parents=[common], help="run the numerical self-checks")
    return parser


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    root = logging.getLogger()
    if not root.handlers:
        # one stderr writer for all console diagnostics
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)
    root.setLevel(level)
    # the run banner is always shown
    log.setLevel(min(level, logging.INFO))


def _overrides(args) -> list[str]:
    items = list(args.overrides)
    if args.trials is not None:
        items.append(f"trials={args.trials}")
    if args.seed is not None:
        items.append(f"seed={args.seed}")
    return items


def _load(args, base: dict[str, str] | None = None) -> ExperimentConfig:
    return parse_config(args.config, _overrides(args), base)


def cmd_generate(args) -> int:
    n, alpha, seed = args.n, args.alpha, args.seed
    if args.config is not None or args.overrides or n is None or alpha is None:
        cfg = _load(args, {"dataset": "synthetic", "b": "1", "strategies": ""})
        n = cfg.n if n is None else n
        alpha = cfg.alpha if alpha is None else alpha
        seed = cfg.seed if seed is None else seed
    seed = 0 if seed is None else seed
    if args.out is None:
        raise ConfigError("generate-data needs --out", "out")
    ds = data.generate_synthetic(n, alpha, seed)
    data.write_csv(ds, args.out)
    log.info("wrote %d points (alpha=%g, seed=%d) to %s", n, alpha, seed, args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    out = args.out or cfg.out_dir
    if out is None:
        raise ConfigError("run needs --out or out_dir", "out_dir")
    log.info("build %s", harness.build_id())
    log.info("resolved configuration:\n%s", render(cfg))
    for i in range(cfg.trials):
        log.info("trial %d seeds %s", i, harness.trial_seeds(cfg.seed, i))
    result = harness.run_experiment(cfg, out)
    for r in result.rows:
        print(f"{r.strategy:8s} b={r.b:g} beta={r.beta:g} acc={r.mean_acc:.4f} "
              f"+- {r.stderr:.4f} (n={r.trials})")
    for trial, failed in sorted(result.excluded.items()):
        print(f"trial {trial} excluded for {', '.join(sorted(failed))}")
    log.info("wrote report to %s", Path(out) / "report.csv")
    return EXIT_OK


def cmd_policy_curve(args) -> int:
    cfg = _load(args, {"dataset": "synthetic", "b": "0.1", "strategies": "rmal_hy"})
    seeds = harness.trial_seeds(cfg.seed, 0)
    policy = harness.make_policy(cfg, 2, seeds)
    rows = ag.policy_curve(policy, args.points)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "pi_label"])
        w.writerows([repr(float(p)), repr(float(v))] for p, v in rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = selfcheck.run_all(0 if args.seed is None else args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {
    "generate-data": cmd_generate,
    "run": cmd_run,
    "policy-curve": cmd_policy_curve,
    "selfcheck": cmd_selfcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (OSError, ValueError, ag.PolicyDivergedError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
