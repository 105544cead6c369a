"""Command line entry point: ``demeter run | compare | gen-trace``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .domain import ConfigurationError

LOG_ENV = "DEMETER_SIM_LOG"
LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO}

log = logging.getLogger("demeter")


def _setup_logging() -> None:
    raw = os.environ.get(LOG_ENV, "").strip().lower()
    if raw and raw not in LOG_LEVELS:
        raise ConfigurationError(f"{LOG_ENV} must be one of {', '.join(LOG_LEVELS)}")
    logging.basicConfig(level=LOG_LEVELS.get(raw, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="demeter", description="Simulated multi-configuration "
                                "optimisation of a stream processing job.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment from an experiment file")
    r.add_argument("spec", help="experiment file (key = value lines)")
    r.add_argument("--seed", type=int, default=None, help="rng seed (overrides the file)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--controller", choices=("demeter", "static", "reactive"), default=None,
                   help="override the controller named in the file")
    r.add_argument("--no-figures", action="store_true", help="skip PNG output")

    c = sub.add_parser("compare", help="compare two or more run directories")
    c.add_argument("runs", nargs="+", help="run output directories")
    c.add_argument("--out", default=None, help="report directory (default: first run's parent)")
    c.add_argument("--no-figures", action="store_true")

    g = sub.add_parser("gen-trace", help="write a workload trace CSV")
    g.add_argument("mode", choices=("sinusoid", "steps"))
    g.add_argument("--out", required=True)
    g.add_argument("--duration", type=float, default=64_800.0, help="seconds")
    g.add_argument("--interval", type=float, default=10.0, help="row spacing in seconds")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--base", type=float, default=32_500.0)
    g.add_argument("--amplitude", type=float, default=27_500.0)
    g.add_argument("--period", type=float, default=21_600.0)
    g.add_argument("--noise", type=float, default=0.0, help="relative noise level")
    g.add_argument("--levels", default="10000,30000,50000,20000",
                   help="comma separated rates for steps mode")
    g.add_argument("--step-s", type=float, default=3_600.0, help="seconds per step level")
    return p


def cmd_run(args) -> int:
    from dataclasses import replace

    from .config import load_spec
    from .report import write_run
    from .runner import run

    spec = load_spec(args.spec, seed=args.seed)
    if args.controller:
        spec = replace(spec, controller=args.controller)
    log.info("running %s controller=%s seed=%s", args.spec, spec.controller, spec.seed)
    result = run(spec)
    summary = write_run(result, args.out, figures=not args.no_figures)
    print(f"{summary.name}: normal={summary.normal_fraction:.3f} "
          f"recovery_ok={summary.recovery_ok_fraction:.3f} "
          f"mem_unit_s={summary.total_mem_unit_s:.4g} reconfigurations={summary.reconfigurations} "
          f"-> {args.out}")
    return 0


def cmd_compare(args) -> int:
    from pathlib import Path

    from .report import compare, render_comparison

    out = args.out or Path(args.runs[0]).resolve().parent
    cmp_ = compare(args.runs, out, figures=not args.no_figures)
    sys.stdout.write(render_comparison(cmp_))
    return 0


def cmd_gen_trace(args) -> int:
    from .sim import WorkloadSource, write_trace

    levels = tuple(float(x) for x in args.levels.split(",") if x.strip())
    source = WorkloadSource(mode=args.mode, base=args.base, amplitude=args.amplitude,
                            period_s=args.period, levels=levels, step_s=args.step_s,
                            noise=args.noise, seed=args.seed)
    write_trace(args.out, source, args.duration, args.interval)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "compare": cmd_compare, "gen-trace": cmd_gen_trace}
    try:
        _setup_logging()
        return handlers[args.command](args)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"demeter: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
