"""Command line entry point: validate, sample, laplace, study, selftest.

Exit codes: 0 success, 2 invalid configuration, 3 numeric failure,
4 acceptance failure (or a study whose required criteria fail).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigInvalid, DPPBallsError
from .harness import StudyConfig, resolve_config, run_study, spectrum_report, write_ensembles, write_laplace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ACCEPTANCE = 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override mc.seed")
    p.add_argument("--out-dir", default=None, help="override output.directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--resolution-multiplier", type=float, default=1.0,
                   help="scale the per-length node density of every window")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dppballs", description="Random balls driven by determinantal point processes.")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "validate": "check a config and report the discretized kernel spectra",
        "sample": "write marked configurations and field values as CSV",
        "laplace": "write exact Laplace-transform tables as CSV",
        "study": "run a full regime study and write the report",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON config path or preset:NAME")
        _common(p)
        if name == "sample":
            p.add_argument("--replicates", type=int, default=None, help="override mc.replicates")
    p = sub.add_parser("selftest", help="run the acceptance suite")
    p.add_argument("--criteria", type=int, nargs="*", default=None, help="criterion numbers (default all)")
    _common(p)
    return parser


def _load(args) -> StudyConfig:
    cfg = resolve_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["mc.seed"] = args.seed
    if getattr(args, "replicates", None) is not None:
        changes["mc.replicates"] = args.replicates
    return cfg.replace(**changes) if changes else cfg


def _print_paths(paths) -> None:
    for p in paths:
        print(p)


def _selftest(args) -> int:
    from .acceptance import CRITERIA, run_acceptance

    unknown = sorted(set(args.criteria or ()) - set(CRITERIA))
    if unknown:
        raise ConfigInvalid("--criteria", f"unknown criteria {unknown}")
    results = run_acceptance(args.criteria, threads=args.threads, echo=lambda line: print(line, flush=True))
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def _dispatch(args) -> int:
    if args.command == "selftest":
        return _selftest(args)
    cfg = _load(args)
    # the output location is not part of the study, so it stays out of the config digest
    out = Path(args.out_dir if args.out_dir is not None else cfg.out_dir)
    mult = args.resolution_multiplier
    if args.command == "validate":
        rows = spectrum_report(cfg, mult)
        print(json.dumps({"config_sha256": cfg.digest(), "regime": cfg.regime, "spectra": rows}, indent=2))
        return EXIT_OK
    if args.command == "sample":
        _print_paths(write_ensembles(cfg, out, threads=args.threads, resolution_multiplier=mult))
        return EXIT_OK
    if args.command == "laplace":
        _print_paths(write_laplace(cfg, out, mult))
        return EXIT_OK
    report = run_study(cfg, threads=args.threads, resolution_multiplier=mult)
    _print_paths(report.write(out))
    for c in report.criteria:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c['detail']}")
    if report.partial:
        print(f"study aborted: {report.error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if report.passed else EXIT_ACCEPTANCE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.resolution_multiplier <= 0:
        print("error: --resolution-multiplier must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _dispatch(args)
    except ConfigInvalid as exc:
        print(f"config invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DPPBallsError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
