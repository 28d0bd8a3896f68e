"""Command line entry point: ``roughhom <experiment-id> --config cfg.json``.

Exit status is 0 when every declared target passes, 1 when one fails and
2 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import RoughHomError
from .experiments import EXPERIMENTS, emit_report, load_config, run_experiment

log = logging.getLogger("roughhom")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roughhom",
                                     description="Run a convergence experiment and write its report.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output directory (default: config 'out' or .)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--replicas", type=int, help="override the config replica count")
        p.add_argument("--format", choices=("json", "csv", "both"), default="both")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.replicas)
        if cfg.experiment != args.experiment:
            raise RoughHomError(f"config is for {cfg.experiment!r}, not {args.experiment!r}")
        log.info("running %s with %d replicas", cfg.experiment, cfg.replicas)
        report = run_experiment(cfg)
        out_dir = args.out or cfg.out or "."
        os.makedirs(out_dir, exist_ok=True)
        fmts = ("json", "csv") if args.format == "both" else (args.format,)
        for fmt in fmts:
            path = os.path.join(out_dir, f"{cfg.experiment}.{fmt}")
            emit_report(report, fmt, path)
            log.info("wrote %s", path)
    except (RoughHomError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for t in report.targets:
        mark = "PASS" if t["passed"] else "FAIL"
        print(f"{mark} {t['quantity']} = {t['value']}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
