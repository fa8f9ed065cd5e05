"""Command-line entry point: one subcommand per experiment kind."""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_env():
    # honored only if set before the numeric libraries spin up their pools
    n = os.environ.get("FLOWLAB_THREADS")
    if n:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, n)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowlab",
        description="Transport-error verification runs for deterministic interpolant flows.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "bounds": "measure one instance and check the error-growth inequalities",
        "scaling": "re-run across amplitudes with the boundary scale retuned per run",
        "pfode": "noise-to-data suite with the Gaussian reference",
        "regularity": "posterior-covariance regularity profile and tail checks",
        "gradcheck": "finite-difference audit of the analytic Jacobians",
        "w2": "flow-versus-direct marginal comparison",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
    return parser


def main(argv=None) -> int:
    _apply_thread_env()
    args = _build_parser().parse_args(argv)

    from .config import load_config
    from .errors import ConfigError, DomainError, PreconditionError
    from .experiments import RUNNERS, write_report

    try:
        cfg = load_config(args.config, kind=args.command, seed=args.seed,
                          out_dir=args.out)
        report = RUNNERS[args.command](cfg)
    except ConfigError as exc:
        target = f" [{exc.field}]" if getattr(exc, "field", "") else ""
        print(f"config error{target}: {exc}", file=sys.stderr)
        return 2
    except (DomainError, PreconditionError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2

    paths = write_report(report, cfg.out_dir)
    for rep in report.bound_reports:
        tag = rep.extra.get("instance", "")
        state = "pass" if rep.passed else "FAIL"
        print(f"{rep.theorem:<8} {tag:<14} lhs={rep.lhs:.6e} rhs={rep.rhs:.6e} {state}")
    for name in report.failures:
        print(f"check FAIL: {name}")
    print(f"report: {paths['report']}")
    ok = report.passed
    print(f"{'all checks passed' if ok else 'some checks failed'} "
          f"({report.wall_clock_seconds:.1f}s)")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
