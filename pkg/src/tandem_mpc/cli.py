"""Command-line entry point: single runs, Monte Carlo, horizon comparison, QP dumps."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import TandemMpcError
from .harness import (compare_horizons, monte_carlo, run_closed_loop, summarize, write_report)
from .qp import dump_problem


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="YAML overrides")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tandem-mpc")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one closed-loop flight; writes CSV log and JSON summary")
    _common(run)

    mc = sub.add_parser("mc", help="randomized Monte Carlo batch")
    _common(mc)
    mc.add_argument("--runs", type=int, default=100)

    cmp_ = sub.add_parser("compare", help="matched-seed comparison of the two horizon schedules")
    _common(cmp_)
    cmp_.add_argument("--runs", type=int, default=50)

    dump = sub.add_parser("dump-qp", help="write the QP of one control step as text")
    _common(dump)
    dump.add_argument("--step", type=int, default=0, help="control step index")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "run":
            log = run_closed_loop(cfg)
            log.write_csv(args.out / "run.csv")
            write_report(args.out / "summary.json", log.summary.to_dict())
            s = log.summary
            print(f"reached={s.reached} time_to_target={s.time_to_target:.2f}s replans={s.replans}")
        elif args.command == "mc":
            runs = monte_carlo(cfg, args.runs, cfg.seed)
            payload = {"summary": summarize(runs), "runs": [r.to_dict() for r in runs]}
            write_report(args.out / "monte_carlo.json", payload)
            print(f"{payload['summary']['reached']}/{args.runs} runs reached the target")
        elif args.command == "compare":
            payload = compare_horizons(cfg, args.runs, cfg.seed)
            write_report(args.out / "compare.json", payload)
            for k, v in payload["delta_pct"].items():
                print(f"{k:>22s}: {v:+.1f}%")
        elif args.command == "dump-qp":
            cfg = cfg.replace(duration_s=(args.step + 1) * cfg.dt)
            log = run_closed_loop(cfg, keep_problems=True)
            k, res = log.problems[-1]
            path = args.out / f"qp_step{k}.txt"
            dump_problem(res.problem, path)
            print(path)
    except TandemMpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
