"""Command line: ``synth``, ``run``, ``sweep`` and ``selftest``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import oracles, synthgen
from .dataset import write_csv
from .experiment import (
    ConfigError,
    ExperimentResult,
    load_spec,
    render_text,
    run_experiment,
    shipped_configs,
    sweep,
    table_rows,
    with_overrides,
)

GROUP_CHOICES = ["auto", "y0z0", "y0z1", "y1z0", "y1z1"]


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _str_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help=f"config file, or a shipped name: {', '.join(shipped_configs())}")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--seeds", type=_int_list, default=None, help="e.g. 1,2,3,4,5")
    p.add_argument("--noise-rate", type=_float_list, default=None, help="one rate or a comma list")
    p.add_argument("--noise-mode", choices=["random", "adversarial", "group_targeted"], default=None)
    p.add_argument("--target-group", choices=GROUP_CHOICES, default=None)
    p.add_argument("--metric", type=str.lower, choices=["eo", "dp"], default=None)
    p.add_argument("--method", type=_str_list, default=None, help="comma list, e.g. LR,ITLM,Ours")
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairrobust", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset CSV")
    p.add_argument("--n", type=int, default=3200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("."), help="directory or .csv path")

    p = sub.add_parser("run", help="run one experiment config")
    _experiment_flags(p)

    p = sub.add_parser("sweep", help="run a config once per value of one key")
    _experiment_flags(p)
    p.add_argument("--axis", required=True, help="noise_rate, alpha, tau, learning_rate, epochs, mu, ...")
    p.add_argument("--values", type=_float_list, required=True)

    p = sub.add_parser("selftest", help="run the oracle suites")
    p.add_argument("--quick", action="store_true", help="smaller instance counts")
    return parser


def _spec_from_args(args):
    spec = load_spec(args.config)
    return with_overrides(
        spec,
        seeds=args.seeds,
        noise_rates=args.noise_rate,
        noise_mode=args.noise_mode,
        target_group=args.target_group,
        metric=args.metric.upper() if args.metric else None,
        methods=args.method,
    )


def _report(result: ExperimentResult) -> None:
    for rate in result.spec.noise.rates:
        print(f"# {result.spec.name}  noise rate {rate:g}  metric {result.spec.metric}")
        print(render_text(table_rows(result, rate)))
    for err in result.failures:
        print(f"FAILED {err}", file=sys.stderr)


def cmd_synth(args) -> int:
    d = synthgen.generate(synthgen.SynthSpec(n_total=args.n, seed=args.seed))
    out = args.out
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"synthetic_n{args.n}_seed{args.seed}.csv"
    write_csv(d, out)
    print(out)
    return 0


def cmd_run(args) -> int:
    result = run_experiment(_spec_from_args(args), args.out, args.jobs)
    _report(result)
    return 0 if result.ok else 1


def cmd_sweep(args) -> int:
    values = args.values
    if args.axis in ("epochs", "warm_start_epochs", "batch_size", "phase2_epochs"):
        values = [int(v) for v in values]
    ok = True
    for value, result in sweep(_spec_from_args(args), args.axis, values, args.out, args.jobs):
        if value is not None:
            print(f"## {args.axis} = {value}")
        _report(result)
        ok &= result.ok
    return 0 if ok else 1


def cmd_selftest(args) -> int:
    checks = oracles.run_all(quick=args.quick)
    for c in checks:
        print(c.line())
    return 0 if all(c.passed for c in checks) else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"synth": cmd_synth, "run": cmd_run, "sweep": cmd_sweep, "selftest": cmd_selftest}[args.command]
    try:
        return handler(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
