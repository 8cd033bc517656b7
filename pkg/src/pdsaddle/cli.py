"""Command-line front end.

Subcommands: solve, verify, grid, estimate.  Exit codes: 0 on success, 1 on
validation/configuration errors, 2 when a verify suite refutes a certificate.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    ConfigError,
    ExperimentConfig,
    cmd_estimate,
    cmd_grid,
    cmd_solve,
    cmd_verify,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdsaddle",
        description="Solvers and convergence certificates for bilinear "
                    "convex-concave saddle point problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run configured solvers, write traces")
    p_solve.add_argument("--config", required=True, help="JSON experiment config")
    p_solve.add_argument("--out", required=True, help="output directory")
    p_solve.add_argument("--seed", type=int, default=None, help="override config seed")

    p_verify = sub.add_parser("verify", help="run a certificate suite")
    p_verify.add_argument("--suite", required=True,
                          choices=["contraction", "sc_contraction", "props", "svrg_halving"])
    p_verify.add_argument("--trials", type=int, default=100)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--eta1-scale", type=float, default=None,
                          help="props suite: set eta1 to this multiple of its "
                               "precondition bound (default: theory schedule)")
    p_verify.add_argument("--eta2-scale", type=float, default=None,
                          help="props suite: set eta2 to this multiple of its "
                               "precondition bound (default: theory schedule)")
    p_verify.add_argument("--out", default=None, help="write the report JSON here")

    p_grid = sub.add_parser("grid", help="step-size grid search")
    p_grid.add_argument("--config", required=True)
    p_grid.add_argument("--out", required=True)
    p_grid.add_argument("--budget", type=float, default=None,
                        help="grad-unit budget per grid point")
    p_grid.add_argument("--seed", type=int, default=None)

    p_est = sub.add_parser("estimate", help="curvature constants and schedule")
    p_est.add_argument("--config", required=True,
                       help="JSON file holding an instance spec (or a full "
                            "experiment config; its instance block is used)")
    p_est.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            config = ExperimentConfig.load(args.config)
            if args.seed is not None:
                config.seed = args.seed
            summary = cmd_solve(config, args.out)
            diverged = [s["name"] for s in summary["solvers"]
                        if s.get("status") == "diverged"]
            if diverged:
                print(f"done with diverged solvers: {', '.join(diverged)}")
            else:
                print(f"done: {len(summary['solvers'])} solver runs -> {args.out}")
            return 0

        if args.command == "verify":
            kw = {}
            if args.suite == "props":
                kw = {"eta1_scale": args.eta1_scale, "eta2_scale": args.eta2_scale}
            report = cmd_verify(args.suite, args.trials, args.seed, **kw)
            text = json.dumps(report, indent=2, default=str)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
            print(text)
            return 2 if report.get("refuted") else 0

        if args.command == "grid":
            config = ExperimentConfig.load(args.config)
            if args.seed is not None:
                config.seed = args.seed
            report = cmd_grid(config, args.out, budget=args.budget)
            for entry in report["solvers"]:
                print(f"{entry['name']}: {entry['status']} best={entry['best']}")
            if not report["solvers"]:
                print("no grid-source solvers in config", file=sys.stderr)
                return 1
            return 0

        if args.command == "estimate":
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
            spec = doc.get("instance", doc)
            report = cmd_estimate(spec)
            text = json.dumps(report, indent=2, default=str)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
            print(text)
            return 0 if report.get("status") == "ok" else 1

    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
