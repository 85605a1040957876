"""Command-line driver: ``gen``, ``run``, ``report`` and ``verify``.

Exit codes: 0 success, 2 config/argument error, 3 validation failure,
4 I/O failure; ``verify`` returns 1 when any check fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import ValidationError
from .experiment import ConfigError, ExperimentValidationError, aggregate, load_config, run_experiment
from .tensor_io import TensorFormatError
from .verify import CHECKS, run_checks, write_metrics_csv
from .workloads import KINDS, gen_workload

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _cmd_gen(args) -> int:
    params = json.loads(args.params) if args.params else None
    try:
        wl = gen_workload(args.kind, args.L, args.H, args.d_k, args.S, args.seed, params)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    path = wl.save(args.out)
    print(f"wrote {args.out}/q.bin k.bin v.bin and {path.name}")
    return EXIT_OK


def _cmd_run(args) -> int:
    overrides = {"workload": args.workload, "seed": args.seed, "grid": args.grid,
                 "out": args.out, "proxies": args.proxies}
    cfg = load_config(args.config, overrides)
    path = run_experiment(cfg, args.workers)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    path = aggregate(args.dir)
    print(f"wrote {path}")
    return EXIT_OK


def _parse_criteria(text):
    if not text:
        return sorted(CHECKS)
    try:
        picked = sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError as exc:
        raise ConfigError(f"--criteria: {exc}") from exc
    bad = [c for c in picked if c not in CHECKS]
    if bad:
        raise ConfigError(f"--criteria: unknown criteria {bad}; available {sorted(CHECKS)}")
    return picked


def _cmd_verify(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_checks(_parse_criteria(args.criteria), args.scale, echo=print)
    path = write_metrics_csv(results, out / "verify_metrics.csv")
    print(f"wrote {path}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="unisparse", description="Compressed-proxy block-sparse attention experiments.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic workload directory")
    g.add_argument("--kind", choices=KINDS, default="planted_blocks")
    g.add_argument("--L", type=int, default=2048)
    g.add_argument("--H", type=int, default=2)
    g.add_argument("--d-k", dest="d_k", type=int, default=64)
    g.add_argument("--S", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--params", help="JSON object of generator parameters")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    r = sub.add_parser("run", help="run a config grid")
    r.add_argument("--config", required=True)
    r.add_argument("--workload", help="workload kind or directory written by 'gen'")
    r.add_argument("--seed", type=int)
    r.add_argument("--grid", help="JSON grid object, or a path to one")
    r.add_argument("--out")
    r.add_argument("--proxies", help="comma-separated proxy names")
    r.add_argument("--workers", type=int, help="worker processes (default: $UNISPARSE_WORKERS or 1)")
    r.set_defaults(func=_cmd_run)

    a = sub.add_parser("report", help="rebuild runs.csv from per-run records")
    a.add_argument("dir")
    a.set_defaults(func=_cmd_report)

    v = sub.add_parser("verify", help="run the acceptance checks")
    v.add_argument("--out", default="verify_out")
    v.add_argument("--scale", choices=("quick", "full"), default="full")
    v.add_argument("--criteria", help="comma-separated criterion numbers (default: all)")
    v.set_defaults(func=_cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentValidationError, ValidationError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, TensorFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
